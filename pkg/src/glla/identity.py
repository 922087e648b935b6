"""De-duplication of actor records created by the same person on different
devices/systems, and rewriting of a dataset onto canonical person ids.

Two actor records belong to the same person iff they are connected transitively
by: equal non-empty email (trimmed, case-insensitive), equal non-empty username
(case-sensitive), or an operator alias rule. Display names never merge — a
wrong merge would corrupt marks linkage irreversibly, so name-only duplicates
go in the alias file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, GllaError
from .model import (
    ActorRecord,
    CohortDataset,
    STAGE_RAW,
    STAGE_RESOLVED,
    TeamRecord,
    assemble_dataset,
)

# Field-union preference when collapsing a cluster to one record.
_SOURCE_PRIORITY = {"gitlab": 0, "git": 1, "jenkins": 2, "marks_file": 3}

ALIAS_HEADER = ["actor_a", "actor_b"]


@dataclass(frozen=True)
class IdentityMap:
    """Partition of the actor table into person clusters. The canonical id of a
    cluster is its lexicographically smallest member id."""

    clusters: dict[str, frozenset[str]]
    alias_rules: tuple[tuple[str, str], ...]

    def canonical_for(self) -> dict[str, str]:
        mapping = {}
        for canonical, members in self.clusters.items():
            for m in members:
                mapping[m] = canonical
        return mapping


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def merge_edge(a: ActorRecord, b: ActorRecord, alias_pairs=frozenset()) -> bool:
    """The pairwise merge predicate. Kept standalone so tests can close over it."""
    ea = (a.email or "").strip().lower()
    eb = (b.email or "").strip().lower()
    if ea and ea == eb:
        return True
    if a.username and a.username == b.username:
        return True
    key = (a.actor_id, b.actor_id)
    return key in alias_pairs or (key[1], key[0]) in alias_pairs


def build_clusters(actors, alias_rules=()) -> IdentityMap:
    """Connected components over the merge predicate, via union-find on the
    email/username groupings plus explicit alias edges."""
    ids = [a.actor_id for a in actors]
    known = set(ids)
    for a_id, b_id in alias_rules:
        for aid in (a_id, b_id):
            if aid not in known:
                raise ConfigError(f"alias rule names unknown actor_id {aid!r}")

    uf = _UnionFind(ids)
    by_email: dict[str, str] = {}
    by_username: dict[str, str] = {}
    for a in actors:
        email = (a.email or "").strip().lower()
        if email:
            if email in by_email:
                uf.union(by_email[email], a.actor_id)
            else:
                by_email[email] = a.actor_id
        if a.username:
            if a.username in by_username:
                uf.union(by_username[a.username], a.actor_id)
            else:
                by_username[a.username] = a.actor_id
    for a_id, b_id in alias_rules:
        uf.union(a_id, b_id)

    groups: dict[str, set[str]] = {}
    for aid in ids:
        groups.setdefault(uf.find(aid), set()).add(aid)
    clusters = {min(members): frozenset(members) for members in groups.values()}
    return IdentityMap(clusters=clusters, alias_rules=tuple(alias_rules))


def _collapse(cluster_members: list[ActorRecord], canonical_id: str) -> ActorRecord:
    ordered = sorted(
        cluster_members,
        key=lambda a: (_SOURCE_PRIORITY.get(a.source_system, 99), a.actor_id),
    )

    def first_nonempty(field):
        for a in ordered:
            v = getattr(a, field)
            if v:
                return v
        return ""

    return ActorRecord(
        actor_id=canonical_id,
        display_name=first_nonempty("display_name"),
        email=first_nonempty("email"),
        username=first_nonempty("username"),
        source_system=ordered[0].source_system,
    )


def apply_clusters(ds: CohortDataset, im: IdentityMap) -> CohortDataset:
    """Rewrite every actor reference to its canonical id and collapse the actor
    table to one record per cluster. Commit and event counts are preserved."""
    if ds.manifest.stage not in (STAGE_RAW, STAGE_RESOLVED):
        raise GllaError(f"cannot resolve a dataset at stage {ds.manifest.stage!r}")
    actor_ids = {a.actor_id for a in ds.actors}
    covered = set().union(*im.clusters.values()) if im.clusters else set()
    if covered != actor_ids:
        raise GllaError("identity map does not partition the actor table")

    mapping = im.canonical_for()
    by_id = {a.actor_id: a for a in ds.actors}
    actors = [
        _collapse([by_id[m] for m in members], canonical)
        for canonical, members in im.clusters.items()
    ]
    commits = [
        c.__class__.from_dict(
            {**c.to_dict(), "author_ref": mapping[c.author_ref],
             "committer_ref": mapping[c.committer_ref]}
        )
        for c in ds.commits
    ]
    events = [
        e.__class__.from_dict({**e.to_dict(), "actor_ref": mapping[e.actor_ref]})
        for e in ds.events
    ]
    teams = [
        TeamRecord(
            team_id=t.team_id,
            project_id=t.project_id,
            member_refs=tuple(sorted({mapping[m] for m in t.member_refs})),
        )
        for t in ds.teams
    ]
    marks = [
        mk.__class__.from_dict({**mk.to_dict(), "subject_ref": mapping.get(mk.subject_ref, mk.subject_ref)})
        for mk in ds.marks
    ]
    return assemble_dataset(
        STAGE_RESOLVED,
        ds.manifest.source_descriptors,
        actors=actors,
        commits=commits,
        events=events,
        teams=teams,
        marks=marks,
        anatomy_groups=ds.anatomy_groups,
        anatomy_values=ds.anatomy_values,
        created_at=ds.manifest.created_at,
    )


def load_alias_rules(path) -> tuple[tuple[str, str], ...]:
    """Alias assertions from a comma-delimited file with header actor_a,actor_b."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"alias file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"alias file {path} is empty") from None
        if [h.strip() for h in header] != ALIAS_HEADER:
            raise ConfigError(f"alias file {path} must have header actor_a,actor_b")
        rules = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2 or not row[0].strip() or not row[1].strip():
                raise ConfigError(f"alias file {path} row {row_no} is malformed")
            rules.append((row[0].strip(), row[1].strip()))
    return tuple(rules)
