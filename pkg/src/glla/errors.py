"""Error hierarchy. Every error carries the process exit code the CLI maps it to.

Exit code contract: 0 success, 2 config, 3 source, 4 stage-order,
5 privacy-threshold, 1 anything else.
"""

from __future__ import annotations


class GllaError(Exception):
    """Base for all pipeline errors; exit code 1 unless a subclass overrides."""

    exit_code = 1


class ConfigError(GllaError):
    """Bad configuration, policy, alias file or key material."""

    exit_code = 2


class SourceError(GllaError):
    """A data source is unreachable, unauthorized, rate-limited or malformed."""

    exit_code = 3


class StageOrderError(GllaError):
    """A bundle was fed to a stage that expects a different pipeline stage."""

    exit_code = 4


class PrivacyThresholdError(GllaError):
    """Anonymisation failed the k-anonymity gate; output was withheld."""

    exit_code = 5

    def __init__(self, message, risk_report=None):
        super().__init__(message)
        self.risk_report = risk_report


class AuthenticationFailure(GllaError):
    """Encrypted container failed authentication. Deliberately carries no
    detail about which byte, key or associated data was wrong."""


class BundleFormatError(GllaError):
    """A decrypted bundle does not parse as a known dataset format."""


class SchemaVersionError(BundleFormatError):
    """A bundle declares a schema version this build does not understand."""
