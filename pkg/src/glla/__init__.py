"""Privacy-preserving learning-analytics pipeline for Git, GitLab and Jenkins course data."""

__version__ = "0.1.0"
