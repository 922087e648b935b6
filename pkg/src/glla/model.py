"""Canonical cohort data model: records, manifest, validation, serialization, hashing.

A dataset is five record tables (actors, commits, events, teams, marks) plus two
auxiliary tables produced by anatomisation, under a manifest that pins the schema
version, pipeline stage, source descriptors, record counts and a content hash.

All types are immutable values; transformations build new datasets. The on-disk
form is a line-delimited UTF-8 bundle (`.glds`): first line the manifest object,
then one `{"table": ..., "record": {...}}` object per record in canonical order
(sorted by table, then primary id), so structurally equal datasets serialize to
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import BundleFormatError, SchemaVersionError

SCHEMA_VERSION = "1"

STAGE_RAW = "raw"
STAGE_RESOLVED = "resolved"
STAGE_ANONYMISED = "anonymised"
STAGES = (STAGE_RAW, STAGE_RESOLVED, STAGE_ANONYMISED)

SOURCE_SYSTEMS = ("git", "gitlab", "jenkins", "marks_file")

EVENT_KINDS = (
    "issue_opened",
    "issue_closed",
    "mr_opened",
    "mr_merged",
    "mr_closed",
    "pipeline_run",
    "build_result",
    "comment",
)
BUILD_STATUSES = ("success", "failure", "unstable", "aborted")

_SHA40_RE = re.compile(r"^[0-9a-f]{40}$")
_HEX_RE = re.compile(r"^[0-9a-f]+$")
_DAY_LABEL_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_WEEK_LABEL_RE = re.compile(r"^\d{4}-W\d{2}$")
_BIN_LABEL_RE = re.compile(r"^\[-?[0-9.]+,-?[0-9.]+\)$")


@dataclass(frozen=True)
class ActorRecord:
    """A person as seen by one source system, before identity resolution."""

    actor_id: str
    display_name: str | None = ""
    email: str | None = ""
    username: str | None = ""
    source_system: str = "git"

    def to_dict(self):
        return _clean(
            {
                "actor_id": self.actor_id,
                "display_name": self.display_name,
                "email": self.email,
                "username": self.username,
                "source_system": self.source_system,
            }
        )

    @classmethod
    def from_dict(cls, d):
        return cls(
            actor_id=d["actor_id"],
            display_name=d.get("display_name"),
            email=d.get("email"),
            username=d.get("username"),
            source_system=d["source_system"],
        )


@dataclass(frozen=True)
class CommitRecord:
    """One commit. `authored_at` is UTC epoch seconds in raw/resolved datasets and
    may become a day/week label after generalisation; `insertions`/`deletions` may
    likewise become bin labels."""

    sha: str
    repo_id: str
    author_ref: str
    committer_ref: str
    authored_at: int | str
    message: str | None
    parent_shas: tuple[str, ...]
    on_default_first_parent: bool
    insertions: int | str | None = 0
    deletions: int | str | None = 0

    def to_dict(self):
        return _clean(
            {
                "sha": self.sha,
                "repo_id": self.repo_id,
                "author_ref": self.author_ref,
                "committer_ref": self.committer_ref,
                "authored_at": self.authored_at,
                "message": self.message,
                "parent_shas": list(self.parent_shas),
                "on_default_first_parent": self.on_default_first_parent,
                "insertions": self.insertions,
                "deletions": self.deletions,
            }
        )

    @classmethod
    def from_dict(cls, d):
        return cls(
            sha=d["sha"],
            repo_id=d["repo_id"],
            author_ref=d["author_ref"],
            committer_ref=d["committer_ref"],
            authored_at=d["authored_at"],
            message=d.get("message"),
            parent_shas=tuple(d.get("parent_shas", ())),
            on_default_first_parent=d["on_default_first_parent"],
            insertions=d.get("insertions"),
            deletions=d.get("deletions"),
        )


@dataclass(frozen=True)
class EventRecord:
    """A dated action in GitLab or Jenkins (issue/MR lifecycle, pipeline, build, comment)."""

    event_id: str
    kind: str
    actor_ref: str
    project_id: str
    occurred_at: int | str
    payload: Mapping[str, str] | None = field(default_factory=dict)

    def to_dict(self):
        return _clean(
            {
                "event_id": self.event_id,
                "kind": self.kind,
                "actor_ref": self.actor_ref,
                "project_id": self.project_id,
                "occurred_at": self.occurred_at,
                "payload": dict(self.payload) if self.payload is not None else None,
            }
        )

    @classmethod
    def from_dict(cls, d):
        return cls(
            event_id=d["event_id"],
            kind=d["kind"],
            actor_ref=d["actor_ref"],
            project_id=d["project_id"],
            occurred_at=d["occurred_at"],
            payload=d.get("payload"),
        )


@dataclass(frozen=True)
class TeamRecord:
    team_id: str
    project_id: str
    member_refs: tuple[str, ...]

    def to_dict(self):
        return {
            "team_id": self.team_id,
            "project_id": self.project_id,
            "member_refs": list(self.member_refs),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            team_id=d["team_id"],
            project_id=d["project_id"],
            member_refs=tuple(d["member_refs"]),
        )


@dataclass(frozen=True)
class MarkRecord:
    """An assessment mark for a student or a team. `value` is a real in [0,100]
    in raw/resolved datasets and may become a bin label after generalisation."""

    subject_ref: str
    assessment_id: str
    value: float | str

    def to_dict(self):
        return {
            "subject_ref": self.subject_ref,
            "assessment_id": self.assessment_id,
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, d):
        v = d["value"]
        return cls(
            subject_ref=d["subject_ref"],
            assessment_id=d["assessment_id"],
            value=float(v) if isinstance(v, (int, float)) else v,
        )


@dataclass(frozen=True)
class AnatomyGroupRecord:
    """Membership of one source record in an anatomisation group."""

    table: str
    record_id: str
    group_id: str

    def to_dict(self):
        return {"table": self.table, "record_id": self.record_id, "group_id": self.group_id}

    @classmethod
    def from_dict(cls, d):
        return cls(table=d["table"], record_id=d["record_id"], group_id=d["group_id"])


@dataclass(frozen=True)
class AnatomyValueRecord:
    """The multiset of one sensitive field's values inside one anatomisation group."""

    table: str
    group_id: str
    field: str
    values: tuple

    def to_dict(self):
        return {
            "table": self.table,
            "group_id": self.group_id,
            "field": self.field,
            "values": list(self.values),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            table=d["table"],
            group_id=d["group_id"],
            field=d["field"],
            values=tuple(d["values"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: str
    created_at: int
    stage: str
    source_descriptors: tuple[str, ...]
    record_counts: Mapping[str, int]
    content_hash: str

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "created_at": self.created_at,
            "stage": self.stage,
            "source_descriptors": list(self.source_descriptors),
            "record_counts": dict(self.record_counts),
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            schema_version=d["schema_version"],
            created_at=d["created_at"],
            stage=d["stage"],
            source_descriptors=tuple(d["source_descriptors"]),
            record_counts=dict(d["record_counts"]),
            content_hash=d["content_hash"],
        )


_RECORD_TYPES = {
    "actors": ActorRecord,
    "commits": CommitRecord,
    "events": EventRecord,
    "teams": TeamRecord,
    "marks": MarkRecord,
    "anatomy_groups": AnatomyGroupRecord,
    "anatomy_values": AnatomyValueRecord,
}
TABLES = tuple(sorted(_RECORD_TYPES))

_SORT_KEYS = {
    "actors": lambda r: r.actor_id,
    "commits": lambda r: r.sha,
    "events": lambda r: r.event_id,
    "teams": lambda r: r.team_id,
    "marks": lambda r: (r.subject_ref, r.assessment_id),
    "anatomy_groups": lambda r: (r.table, r.record_id),
    "anatomy_values": lambda r: (r.table, r.field, r.group_id),
}

# Primary-id accessor per table, used for violation messages and anatomisation.
PRIMARY_ID = {
    "actors": lambda r: r.actor_id,
    "commits": lambda r: r.sha,
    "events": lambda r: r.event_id,
    "teams": lambda r: r.team_id,
    "marks": lambda r: f"{r.subject_ref}/{r.assessment_id}",
    "anatomy_groups": lambda r: f"{r.table}/{r.record_id}",
    "anatomy_values": lambda r: f"{r.table}/{r.field}/{r.group_id}",
}


@dataclass(frozen=True)
class CohortDataset:
    """Immutable container of all tables plus the manifest. Tables are stored
    canonically sorted, so equality and serialization ignore input order."""

    manifest: DatasetManifest
    actors: tuple[ActorRecord, ...] = ()
    commits: tuple[CommitRecord, ...] = ()
    events: tuple[EventRecord, ...] = ()
    teams: tuple[TeamRecord, ...] = ()
    marks: tuple[MarkRecord, ...] = ()
    anatomy_groups: tuple[AnatomyGroupRecord, ...] = ()
    anatomy_values: tuple[AnatomyValueRecord, ...] = ()

    def table(self, name) -> tuple:
        return getattr(self, name)


def _clean(d):
    return {k: v for k, v in d.items() if v is not None}


def _sorted_table(name, records):
    return tuple(sorted(records, key=_SORT_KEYS[name]))


def assemble_dataset(
    stage: str,
    source_descriptors: Sequence[str],
    *,
    actors: Iterable[ActorRecord] = (),
    commits: Iterable[CommitRecord] = (),
    events: Iterable[EventRecord] = (),
    teams: Iterable[TeamRecord] = (),
    marks: Iterable[MarkRecord] = (),
    anatomy_groups: Iterable[AnatomyGroupRecord] = (),
    anatomy_values: Iterable[AnatomyValueRecord] = (),
    created_at: int | None = None,
) -> CohortDataset:
    """Build a dataset with canonical table order, record counts and content hash.

    `created_at` defaults to the newest integer activity timestamp in the data
    (0 if there is none); it is derived from the data, not the wall clock, so
    re-running a stage on unchanged inputs reproduces identical bytes.
    """
    tables = {
        "actors": _sorted_table("actors", actors),
        "commits": _sorted_table("commits", commits),
        "events": _sorted_table("events", events),
        "teams": _sorted_table("teams", teams),
        "marks": _sorted_table("marks", marks),
        "anatomy_groups": _sorted_table("anatomy_groups", anatomy_groups),
        "anatomy_values": _sorted_table("anatomy_values", anatomy_values),
    }
    if created_at is None:
        stamps = [c.authored_at for c in tables["commits"] if isinstance(c.authored_at, int)]
        stamps += [e.occurred_at for e in tables["events"] if isinstance(e.occurred_at, int)]
        created_at = max(stamps, default=0)
    counts = {name: len(recs) for name, recs in tables.items()}
    manifest = DatasetManifest(
        schema_version=SCHEMA_VERSION,
        created_at=created_at,
        stage=stage,
        source_descriptors=tuple(sorted(set(source_descriptors))),
        record_counts=counts,
        content_hash="",
    )
    digest = _content_hash(manifest, tables)
    return CohortDataset(manifest=replace(manifest, content_hash=digest), **tables)


def restamp(ds: CohortDataset, stage: str) -> CohortDataset:
    """Rebuild `ds` under a new stage flag, preserving created_at and sources."""
    return assemble_dataset(
        stage,
        ds.manifest.source_descriptors,
        actors=ds.actors,
        commits=ds.commits,
        events=ds.events,
        teams=ds.teams,
        marks=ds.marks,
        anatomy_groups=ds.anatomy_groups,
        anatomy_values=ds.anatomy_values,
        created_at=ds.manifest.created_at,
    )


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _record_lines(tables: Mapping[str, tuple]) -> list[str]:
    lines = []
    for name in TABLES:
        for rec in tables[name]:
            lines.append(_json_line({"table": name, "record": rec.to_dict()}))
    return lines


def _content_hash(manifest: DatasetManifest, tables: Mapping[str, tuple]) -> str:
    """SHA-256 over the canonical bundle bytes with the content_hash field omitted."""
    head = manifest.to_dict()
    del head["content_hash"]
    body = "\n".join([_json_line(head)] + _record_lines(tables)) + "\n"
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def content_hash(ds: CohortDataset) -> str:
    return _content_hash(ds.manifest, {name: ds.table(name) for name in TABLES})


def serialize(ds: CohortDataset) -> bytes:
    """Canonical bundle bytes. Requires a dataset that validates cleanly."""
    violations = validate_dataset(ds)
    if violations:
        raise BundleFormatError(
            "refusing to serialize invalid dataset: " + "; ".join(violations[:5])
        )
    tables = {name: ds.table(name) for name in TABLES}
    lines = [_json_line(ds.manifest.to_dict())] + _record_lines(tables)
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize(data: bytes) -> CohortDataset:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BundleFormatError(f"bundle is not valid UTF-8: {exc}") from None
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise BundleFormatError("empty bundle")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"manifest line does not parse: {exc}") from None
    if not isinstance(head, dict) or "schema_version" not in head:
        raise BundleFormatError("first line is not a dataset manifest")
    if head["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {head['schema_version']!r}, expected {SCHEMA_VERSION!r}"
        )
    try:
        manifest = DatasetManifest.from_dict(head)
    except (KeyError, TypeError) as exc:
        raise BundleFormatError(f"manifest is missing field: {exc}") from None

    tables: dict[str, list] = {name: [] for name in TABLES}
    for idx, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BundleFormatError(f"line {idx} does not parse: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != {"table", "record"}:
            raise BundleFormatError(f"line {idx} is not a record object")
        name = obj["table"]
        if name not in _RECORD_TYPES:
            raise BundleFormatError(f"line {idx} names unknown table {name!r}")
        try:
            tables[name].append(_RECORD_TYPES[name].from_dict(obj["record"]))
        except (KeyError, TypeError) as exc:
            raise BundleFormatError(f"line {idx} record is malformed: {exc}") from None

    return CohortDataset(
        manifest=manifest,
        **{name: _sorted_table(name, recs) for name, recs in tables.items()},
    )


def _is_timestamp(value, stage) -> bool:
    if isinstance(value, int) and not isinstance(value, bool):
        return True
    if stage == STAGE_ANONYMISED and isinstance(value, str):
        return bool(_DAY_LABEL_RE.match(value) or _WEEK_LABEL_RE.match(value))
    return False


def _is_count(value, stage) -> bool:
    if value is None and stage == STAGE_ANONYMISED:
        return True
    if isinstance(value, int) and not isinstance(value, bool):
        return value >= 0
    return stage == STAGE_ANONYMISED and isinstance(value, str) and bool(_BIN_LABEL_RE.match(value))


def validate_dataset(ds: CohortDataset) -> list[str]:
    """All invariant violations, each naming table, record id and broken rule.

    Raw and resolved datasets are held to the full shape rules; anonymised
    datasets relax exactly what anonymisation legitimately alters (pseudonym
    ids shorter than 40 hex, period labels for timestamps, bin labels for
    marks/counters, suppressed fields absent). Referential integrity and
    uniqueness hold at every stage.
    """
    v: list[str] = []
    m = ds.manifest
    stage = m.stage
    strict = stage in (STAGE_RAW, STAGE_RESOLVED)

    if m.schema_version != SCHEMA_VERSION:
        v.append(f"manifest:-: schema_version {m.schema_version!r} unsupported")
    if stage not in STAGES:
        v.append(f"manifest:-: unknown stage {stage!r}")
    for name in TABLES:
        actual = len(ds.table(name))
        declared = m.record_counts.get(name)
        if declared != actual:
            v.append(f"manifest:-: record_counts[{name}]={declared} but table has {actual}")
    recomputed = content_hash(ds)
    if m.content_hash != recomputed:
        v.append(f"manifest:-: content_hash mismatch (expected {recomputed})")

    actor_ids = set()
    for a in ds.actors:
        if not a.actor_id:
            v.append("actors:-: empty actor_id")
            continue
        if a.actor_id in actor_ids:
            v.append(f"actors:{a.actor_id}: duplicate actor_id")
        actor_ids.add(a.actor_id)
        if a.source_system not in SOURCE_SYSTEMS:
            v.append(f"actors:{a.actor_id}: unknown source_system {a.source_system!r}")
        if strict and not (a.email or a.username or a.display_name):
            v.append(f"actors:{a.actor_id}: all of email/username/display_name empty")

    team_ids = set()
    for t in ds.teams:
        if t.team_id in team_ids:
            v.append(f"teams:{t.team_id}: duplicate team_id")
        team_ids.add(t.team_id)
        if not t.member_refs:
            v.append(f"teams:{t.team_id}: no members")
        if len(set(t.member_refs)) != len(t.member_refs):
            v.append(f"teams:{t.team_id}: member_refs not distinct")
        for ref in t.member_refs:
            if ref not in actor_ids:
                v.append(f"teams:{t.team_id}: unresolved actor_ref {ref!r}")

    shas = set()
    for c in ds.commits:
        if c.sha in shas:
            v.append(f"commits:{c.sha}: duplicate sha")
        shas.add(c.sha)
        if strict:
            if not _SHA40_RE.match(c.sha):
                v.append(f"commits:{c.sha}: sha not 40-hex")
            for p in c.parent_shas:
                if not _SHA40_RE.match(p):
                    v.append(f"commits:{c.sha}: parent sha {p!r} not 40-hex")
        elif not (c.sha and _HEX_RE.match(c.sha)):
            v.append(f"commits:{c.sha}: sha not hex")
        for ref_name, ref in (("author_ref", c.author_ref), ("committer_ref", c.committer_ref)):
            if ref not in actor_ids:
                v.append(f"commits:{c.sha}: unresolved {ref_name} {ref!r}")
        if not _is_timestamp(c.authored_at, stage):
            v.append(f"commits:{c.sha}: authored_at {c.authored_at!r} invalid for stage {stage}")
        for fname, val in (("insertions", c.insertions), ("deletions", c.deletions)):
            if not _is_count(val, stage):
                v.append(f"commits:{c.sha}: {fname} {val!r} invalid")

    event_ids = set()
    for e in ds.events:
        if e.event_id in event_ids:
            v.append(f"events:{e.event_id}: duplicate event_id")
        event_ids.add(e.event_id)
        if e.kind not in EVENT_KINDS:
            v.append(f"events:{e.event_id}: unknown kind {e.kind!r}")
        if e.actor_ref not in actor_ids:
            v.append(f"events:{e.event_id}: unresolved actor_ref {e.actor_ref!r}")
        if not _is_timestamp(e.occurred_at, stage):
            v.append(f"events:{e.event_id}: occurred_at {e.occurred_at!r} invalid for stage {stage}")
        payload = e.payload
        if payload is None:
            if strict:
                v.append(f"events:{e.event_id}: payload missing")
        else:
            if e.kind.startswith("mr_"):
                for key in ("source_branch", "mr_iid"):
                    if key not in payload:
                        v.append(f"events:{e.event_id}: {e.kind} payload lacks {key}")
            if e.kind == "build_result":
                status = payload.get("build_status")
                if status not in BUILD_STATUSES:
                    v.append(f"events:{e.event_id}: build_status {status!r} invalid")

    seen_marks = set()
    for mk in ds.marks:
        key = (mk.subject_ref, mk.assessment_id)
        mid = PRIMARY_ID["marks"](mk)
        if key in seen_marks:
            v.append(f"marks:{mid}: duplicate (subject, assessment)")
        seen_marks.add(key)
        if mk.subject_ref not in actor_ids and mk.subject_ref not in team_ids:
            v.append(f"marks:{mid}: unresolved subject_ref {mk.subject_ref!r}")
        if isinstance(mk.value, (int, float)) and not isinstance(mk.value, bool):
            if not (0 <= mk.value <= 100):
                v.append(f"marks:{mid}: value {mk.value} outside [0,100]")
        elif not (stage == STAGE_ANONYMISED and isinstance(mk.value, str)
                  and _BIN_LABEL_RE.match(mk.value)):
            v.append(f"marks:{mid}: value {mk.value!r} invalid for stage {stage}")

    primary_ids = {
        "actors": actor_ids,
        "commits": shas,
        "events": event_ids,
        "teams": team_ids,
        "marks": {PRIMARY_ID["marks"](mk) for mk in ds.marks},
    }
    group_ids = set()
    for g in ds.anatomy_groups:
        gid = PRIMARY_ID["anatomy_groups"](g)
        group_ids.add((g.table, g.group_id))
        if g.table not in primary_ids:
            v.append(f"anatomy_groups:{gid}: unknown table {g.table!r}")
        elif g.record_id not in primary_ids[g.table]:
            v.append(f"anatomy_groups:{gid}: unresolved record_id {g.record_id!r}")
    for av in ds.anatomy_values:
        aid = PRIMARY_ID["anatomy_values"](av)
        if (av.table, av.group_id) not in group_ids:
            v.append(f"anatomy_values:{aid}: group {av.group_id!r} has no members")

    return v
