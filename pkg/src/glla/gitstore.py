"""Minimal writer for on-disk git repositories built from loose objects.

Builds blobs, trees and commits with hashlib/zlib only, so commit shas are
known before anything touches disk and are identical across machines. The
written repositories are plain non-bare working-tree repos that the real git
binary reads (log/rev-list/fsck), which is all the extraction stage needs.
"""

from __future__ import annotations

import hashlib
import zlib
from pathlib import Path

_BLOB_MODE = b"100644"


def _store_payload(obj_type: str, body: bytes) -> tuple[str, bytes]:
    payload = f"{obj_type} {len(body)}".encode("ascii") + b"\x00" + body
    return hashlib.sha1(payload).hexdigest(), payload


class GitRepoBuilder:
    """Accumulates objects and refs in memory; `write` lays down the .git dir."""

    def __init__(self):
        self._objects: dict[str, bytes] = {}
        self.refs: dict[str, str] = {}
        self.head_ref = "refs/heads/main"

    def _add(self, obj_type: str, body: bytes) -> str:
        sha, payload = _store_payload(obj_type, body)
        self._objects.setdefault(sha, payload)
        return sha

    def add_blob(self, data: bytes) -> str:
        return self._add("blob", data)

    def add_tree(self, entries: dict[str, str]) -> str:
        """Flat tree of regular files: name -> blob sha."""
        body = b""
        for name in sorted(entries):
            body += _BLOB_MODE + b" " + name.encode("utf-8") + b"\x00"
            body += bytes.fromhex(entries[name])
        return self._add("tree", body)

    def add_commit(
        self,
        tree: str,
        parents: list[str],
        author_name: str,
        author_email: str,
        timestamp: int,
        message: str,
        committer_name: str | None = None,
        committer_email: str | None = None,
    ) -> str:
        committer_name = committer_name or author_name
        committer_email = committer_email or author_email
        lines = [f"tree {tree}"]
        lines += [f"parent {p}" for p in parents]
        lines.append(f"author {author_name} <{author_email}> {timestamp} +0000")
        lines.append(f"committer {committer_name} <{committer_email}> {timestamp} +0000")
        body = ("\n".join(lines) + "\n\n" + message).encode("utf-8")
        if not message.endswith("\n"):
            body += b"\n"
        return self._add("commit", body)

    def set_ref(self, ref: str, sha: str):
        self.refs[ref] = sha

    def write(self, repo_path) -> Path:
        repo = Path(repo_path)
        git_dir = repo / ".git"
        (git_dir / "objects").mkdir(parents=True, exist_ok=True)
        (git_dir / "refs" / "heads").mkdir(parents=True, exist_ok=True)
        for sha, payload in self._objects.items():
            obj_dir = git_dir / "objects" / sha[:2]
            obj_dir.mkdir(exist_ok=True)
            obj_file = obj_dir / sha[2:]
            if not obj_file.exists():
                obj_file.write_bytes(zlib.compress(payload))
        for ref, sha in self.refs.items():
            ref_path = git_dir / ref
            ref_path.parent.mkdir(parents=True, exist_ok=True)
            ref_path.write_text(sha + "\n")
        (git_dir / "HEAD").write_text(f"ref: {self.head_ref}\n")
        (git_dir / "config").write_text(
            "[core]\n"
            "\trepositoryformatversion = 0\n"
            "\tfilemode = true\n"
            "\tbare = false\n"
        )
        return repo
