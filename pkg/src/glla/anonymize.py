"""Declarative anonymisation: pseudonymisation, suppression, generalisation,
perturbation and anatomisation, plus re-identification risk accounting and
information-loss measurement.

Strategies run in a fixed order (pseudonymize, suppress, generalize, perturb,
anatomize) so identifiers are tokenized before anything else and noise is never
added to values that later get binned. Every strategy is a pure per-record map
driven only by the policy seed and record ids, so output is byte-identical
across runs, record orderings and worker counts. If the achieved k falls below
the policy threshold the anonymised dataset is withheld entirely.

A field path is "<table>.<field>", e.g. "marks.value" or "actors.email".
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError, GllaError, PrivacyThresholdError, StageOrderError
from .model import (
    CohortDataset,
    PRIMARY_ID,
    STAGE_ANONYMISED,
    STAGE_RESOLVED,
    _RECORD_TYPES,
    assemble_dataset,
)

_FIELDS = {
    "actors": ("actor_id", "display_name", "email", "username", "source_system"),
    "commits": ("sha", "repo_id", "author_ref", "committer_ref", "authored_at",
                "message", "parent_shas", "on_default_first_parent", "insertions",
                "deletions"),
    "events": ("event_id", "kind", "actor_ref", "project_id", "occurred_at", "payload"),
    "teams": ("team_id", "project_id", "member_refs"),
    "marks": ("subject_ref", "assessment_id", "value"),
}

# Fields that may be removed without breaking referential integrity.
_SUPPRESSIBLE = {
    "actors.display_name", "actors.email", "actors.username",
    "commits.message", "commits.insertions", "commits.deletions",
    "events.payload",
}

# Legal output ranges for perturbed fields; int fields are rounded back to int.
_CLAMP = {
    "marks.value": (0.0, 100.0, float),
    "commits.insertions": (0, None, int),
    "commits.deletions": (0, None, int),
    "commits.authored_at": (0, None, int),
    "events.occurred_at": (0, None, int),
}

KEY_LEN = 32
TOKEN_HEX_LEN = 16


def split_field(path: str) -> tuple[str, str]:
    table, _, field = path.partition(".")
    if table not in _FIELDS or field not in _FIELDS[table]:
        raise ConfigError(f"unknown field path {path!r}")
    return table, field


@dataclass(frozen=True)
class GeneralizeSpec:
    field: str
    kind: str  # numeric_bins | time_granularity
    width: float | None = None
    granularity: str | None = None  # day | week


@dataclass(frozen=True)
class NoiseSpec:
    kind: str  # uniform | laplace
    param: float  # half_width for uniform, scale for laplace


@dataclass(frozen=True)
class PerturbSpec:
    field: str
    noise: NoiseSpec


@dataclass(frozen=True)
class AnatomizeSpec:
    quasi_identifiers: tuple[str, ...]
    sensitive: tuple[str, ...]
    group_size: int


@dataclass(frozen=True)
class AnonymizationPolicy:
    seed: int
    pseudonym_fields: tuple[str, ...] = ()
    generalize: tuple[GeneralizeSpec, ...] = ()
    perturb: tuple[PerturbSpec, ...] = ()
    suppress: tuple[str, ...] = ()
    anatomize: AnatomizeSpec | None = None
    k_threshold: int = 1
    quasi_identifiers: tuple[str, ...] = ()


@dataclass(frozen=True)
class RiskReport:
    min_group_size: int
    achieved_k: int
    prosecutor_risk: float
    group_histogram: dict[int, int]

    def to_dict(self):
        return {
            "min_group_size": self.min_group_size,
            "achieved_k": self.achieved_k,
            "prosecutor_risk": self.prosecutor_risk,
            "group_histogram": {str(k): v for k, v in sorted(self.group_histogram.items())},
        }


@dataclass(frozen=True)
class UtilityReport:
    per_field_information_loss: dict[str, float]

    def to_dict(self):
        return {
            "per_field_information_loss": {
                f: round(loss, 6) for f, loss in sorted(self.per_field_information_loss.items())
            }
        }


def policy_from_dict(d: dict) -> AnonymizationPolicy:
    """Parse and validate a policy mapping (the JSON policy file shape)."""
    try:
        seed = int(d["seed"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("policy needs an integer 'seed'") from None
    if not (0 <= seed < 2 ** 64):
        raise ConfigError("policy seed must fit in 64 unsigned bits")

    pseudonym = tuple(d.get("pseudonym_fields", ()))
    suppress = tuple(d.get("suppress", ()))
    gen_specs = []
    for g in d.get("generalize", ()):
        kind = g.get("kind")
        if kind == "numeric_bins":
            width = g.get("width")
            if not isinstance(width, (int, float)) or width <= 0:
                raise ConfigError(f"numeric_bins width must be > 0 on {g.get('field')!r}")
            gen_specs.append(GeneralizeSpec(field=g["field"], kind=kind, width=float(width)))
        elif kind == "time_granularity":
            gran = g.get("granularity")
            if gran not in ("day", "week"):
                raise ConfigError(f"time_granularity must be day or week on {g.get('field')!r}")
            gen_specs.append(GeneralizeSpec(field=g["field"], kind=kind, granularity=gran))
        else:
            raise ConfigError(f"unknown generalize kind {kind!r}")
    perturb_specs = []
    for p in d.get("perturb", ()):
        kind = p.get("noise")
        if kind == "uniform":
            param = p.get("half_width")
        elif kind == "laplace":
            param = p.get("scale")
        else:
            raise ConfigError(f"unknown noise kind {p.get('noise')!r}")
        if not isinstance(param, (int, float)) or param <= 0:
            raise ConfigError(f"noise parameter must be > 0 on {p.get('field')!r}")
        perturb_specs.append(PerturbSpec(field=p["field"], noise=NoiseSpec(kind, float(param))))
    anat = None
    if d.get("anatomize"):
        a = d["anatomize"]
        group_size = a.get("group_size")
        if not isinstance(group_size, int) or group_size < 2:
            raise ConfigError("anatomize group_size must be an int >= 2")
        anat = AnatomizeSpec(
            quasi_identifiers=tuple(a.get("quasi_identifiers", ())),
            sensitive=tuple(a.get("sensitive", ())),
            group_size=group_size,
        )
        if not anat.sensitive:
            raise ConfigError("anatomize needs at least one sensitive field")
    k_threshold = d.get("k_threshold", 1)
    if not isinstance(k_threshold, int) or k_threshold < 1:
        raise ConfigError("k_threshold must be an int >= 1")

    policy = AnonymizationPolicy(
        seed=seed,
        pseudonym_fields=pseudonym,
        generalize=tuple(gen_specs),
        perturb=tuple(perturb_specs),
        suppress=suppress,
        anatomize=anat,
        k_threshold=k_threshold,
        quasi_identifiers=tuple(d.get("quasi_identifiers", ())),
    )
    validate_policy(policy)
    return policy


def validate_policy(policy: AnonymizationPolicy):
    strategy_fields: list[str] = []
    strategy_fields += list(policy.pseudonym_fields)
    strategy_fields += [g.field for g in policy.generalize]
    strategy_fields += [p.field for p in policy.perturb]
    strategy_fields += list(policy.suppress)
    if policy.anatomize:
        strategy_fields += list(policy.anatomize.sensitive)
    for path in strategy_fields + list(policy.quasi_identifiers):
        split_field(path)
    dupes = [f for f, n in Counter(strategy_fields).items() if n > 1]
    if dupes:
        raise ConfigError(f"fields under two strategies: {sorted(dupes)}")
    for path in policy.suppress:
        if path not in _SUPPRESSIBLE:
            raise ConfigError(f"field {path!r} is not suppressible (would break references)")
    if policy.anatomize:
        tables = {split_field(f)[0] for f in policy.anatomize.sensitive}
        tables |= {split_field(f)[0] for f in policy.anatomize.quasi_identifiers}
        if len(tables) != 1:
            raise ConfigError("anatomize fields must all belong to one table")


def load_policy(path) -> AnonymizationPolicy:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"policy file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"policy file {path} does not parse: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"policy file {path} must hold an object")
    return policy_from_dict(data)


# --- pseudonymisation -------------------------------------------------------

def pseudonym_key(seed: int) -> bytes:
    """Keyed-token key derived from the policy seed (policy files are secrets)."""
    return hashlib.sha256(b"glla.pseudonym.v1:" + seed.to_bytes(8, "big")).digest()


def _token(key: bytes, path: str, value) -> str:
    msg = f"{path}\x00{value}".encode("utf-8")
    return hmac.new(key, msg, hashlib.sha256).hexdigest()[:TOKEN_HEX_LEN]


def _tables_as_dicts(ds: CohortDataset) -> dict[str, list[dict]]:
    return {name: [r.to_dict() for r in ds.table(name)] for name in _RECORD_TYPES}


def _dataset_from_dicts(ds: CohortDataset, tables: dict[str, list[dict]], stage: str) -> CohortDataset:
    return assemble_dataset(
        stage,
        ds.manifest.source_descriptors,
        created_at=ds.manifest.created_at,
        **{name: [_RECORD_TYPES[name].from_dict(r) for r in rows] for name, rows in tables.items()},
    )


def _pmap(fn, rows, workers):
    if workers <= 1 or len(rows) < 2:
        return [fn(r) for r in rows]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, rows))


def _pseudonymize_tables(tables: dict[str, list[dict]], fields, key: bytes, workers=1):
    """Tokenize the listed fields in place-ish (returns new table dicts). Id fields
    rewrite every reference so links stay consistent under one shared mapping."""
    for path in fields:
        table, field = split_field(path)
        tok = lambda v, _p=path: _token(key, _p, v)

        if path == "actors.actor_id":
            ids = {r["actor_id"] for r in tables["actors"]}
            remap = lambda v: tok(v) if v in ids else v
            plans = [
                ("actors", "actor_id", "scalar"), ("commits", "author_ref", "scalar"),
                ("commits", "committer_ref", "scalar"), ("events", "actor_ref", "scalar"),
                ("teams", "member_refs", "list"), ("marks", "subject_ref", "scalar"),
            ]
            _apply_remap(tables, plans, remap, workers)
            _remap_anatomy(tables, "actors", remap)
        elif path == "teams.team_id":
            ids = {r["team_id"] for r in tables["teams"]}
            remap = lambda v: tok(v) if v in ids else v
            _apply_remap(tables, [("teams", "team_id", "scalar"), ("marks", "subject_ref", "scalar")],
                         remap, workers)
            _remap_anatomy(tables, "teams", remap)
        elif path == "commits.sha":
            ids = {r["sha"] for r in tables["commits"]}
            remap = lambda v: tok(v) if v in ids else v
            _apply_remap(
                tables,
                [("commits", "sha", "scalar"), ("commits", "parent_shas", "list"),
                 ("events", "payload", "payload_sha")],
                remap, workers,
            )
            _remap_anatomy(tables, "commits", remap)
        elif path in ("teams.project_id", "events.project_id", "commits.repo_id"):
            values = {r.get("project_id") for r in tables["teams"]}
            values |= {r.get("project_id") for r in tables["events"]}
            values |= {r.get("repo_id") for r in tables["commits"]}
            values.discard(None)
            remap = lambda v: _token(key, "project_id", v) if v in values else v
            _apply_remap(
                tables,
                [("teams", "project_id", "scalar"), ("events", "project_id", "scalar"),
                 ("commits", "repo_id", "scalar")],
                remap, workers,
            )
        else:
            def one(row, _f=field, _tok=tok):
                if row.get(_f) is not None:
                    row = dict(row)
                    row[_f] = _tok(row[_f])
                return row
            tables[table] = _pmap(one, tables[table], workers)
    return tables


def _apply_remap(tables, plans, remap, workers):
    for table, field, mode in plans:
        def one(row, _f=field, _m=mode):
            row = dict(row)
            if _m == "scalar":
                if _f in row:
                    row[_f] = remap(row[_f])
            elif _m == "list":
                if _f in row:
                    row[_f] = sorted(remap(v) for v in row[_f])
            elif _m == "payload_sha":
                payload = row.get(_f)
                if payload:
                    payload = dict(payload)
                    for k in ("merge_commit_sha", "sha"):
                        if k in payload:
                            payload[k] = remap(payload[k])
                    row[_f] = payload
            return row
        tables[table] = _pmap(one, tables[table], workers)


def _remap_anatomy(tables, table_name, remap):
    tables["anatomy_groups"] = [
        {**r, "record_id": remap(r["record_id"])} if r["table"] == table_name else r
        for r in tables["anatomy_groups"]
    ]


def pseudonymize(ds: CohortDataset, fields, key: bytes) -> CohortDataset:
    """Replace each listed field's values with stable keyed tokens. The same
    mapping is applied to every reference, so linkage survives."""
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_LEN:
        raise ConfigError(f"pseudonym key must be exactly {KEY_LEN} bytes")
    for path in fields:
        split_field(path)
    tables = _pseudonymize_tables(_tables_as_dicts(ds), fields, bytes(key))
    return _dataset_from_dicts(ds, tables, ds.manifest.stage)


# --- generalisation ---------------------------------------------------------

def _fmt_num(x: float) -> str:
    return format(x, "g")


def bin_label(value: float, width: float) -> str:
    lo = math.floor(value / width) * width
    return f"[{_fmt_num(lo)},{_fmt_num(lo + width)})"


def bin_bounds(label: str) -> tuple[float, float]:
    """Inverse of bin_label's formatting; used to feed bin midpoints to analytics."""
    inner = label.strip()[1:-1]
    lo, hi = inner.split(",")
    return float(lo), float(hi)


def day_label(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d")


def week_label(ts: int) -> str:
    iso = datetime.fromtimestamp(ts, tz=timezone.utc).isocalendar()
    return f"{iso[0]}-W{iso[1]:02d}"


def generalize_value(value, spec: GeneralizeSpec, record_name="?"):
    if value is None:
        return None
    if spec.kind == "numeric_bins":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(
                f"numeric_bins on {spec.field} hit non-numeric value {value!r} in record {record_name}"
            )
        return bin_label(float(value), spec.width)
    if spec.kind == "time_granularity":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(
                f"time_granularity on {spec.field} hit non-timestamp {value!r} in record {record_name}"
            )
        return day_label(value) if spec.granularity == "day" else week_label(value)
    raise ConfigError(f"unknown generalize kind {spec.kind!r}")


def generalize_values(values, spec: GeneralizeSpec) -> list:
    return [generalize_value(v, spec) for v in values]


# --- perturbation -----------------------------------------------------------

def _substream(seed: int, field: str, record_id: str) -> random.Random:
    material = seed.to_bytes(8, "big") + field.encode() + b"\x00" + record_id.encode()
    derived = int.from_bytes(hashlib.sha256(material).digest()[:8], "big")
    return random.Random(derived)


def _noise_draw(rng: random.Random, noise: NoiseSpec) -> float:
    if noise.kind == "uniform":
        return rng.uniform(-noise.param, noise.param)
    if noise.kind == "laplace":
        u = rng.random()
        u = max(u, 1e-300)  # keep log finite on the measure-zero edge
        return noise.param * math.log(2 * u) if u < 0.5 else -noise.param * math.log(2 * (1 - u))
    raise ConfigError(f"unknown noise kind {noise.kind!r}")


def perturb_value(value, noise: NoiseSpec, seed: int, field: str, record_id: str):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"perturbation on {field} hit non-numeric value {value!r} in {record_id}")
    out = float(value) + _noise_draw(_substream(seed, field, record_id), noise)
    lo, hi, cast = _CLAMP.get(field, (None, None, float))
    if lo is not None:
        out = max(out, lo)
    if hi is not None:
        out = min(out, hi)
    return cast(round(out)) if cast is int else out


def perturb(values, noise: NoiseSpec, seed: int, record_ids, field: str) -> list:
    """Add zero-mean noise to each value, each drawn from a substream keyed by
    (seed, field, record id) so output is independent of ordering and threading."""
    if len(values) != len(record_ids):
        raise ConfigError("values and record_ids must align")
    return [perturb_value(v, noise, seed, field, rid) for v, rid in zip(values, record_ids)]


# --- suppression ------------------------------------------------------------

def suppress(ds: CohortDataset, fields) -> CohortDataset:
    """Remove the listed fields from every record; counts unchanged."""
    for path in fields:
        split_field(path)
        if path not in _SUPPRESSIBLE:
            raise ConfigError(f"field {path!r} is not suppressible (would break references)")
    tables = _suppress_tables(_tables_as_dicts(ds), fields)
    return _dataset_from_dicts(ds, tables, ds.manifest.stage)


def _suppress_tables(tables, fields, workers=1):
    for path in fields:
        table, field = split_field(path)
        def one(row, _f=field):
            if _f in row:
                row = dict(row)
                del row[_f]
            return row
        tables[table] = _pmap(one, tables[table], workers)
    return tables


# --- anatomisation ----------------------------------------------------------

def anatomize(records, qi_fields, sensitive_fields, group_size):
    """Split record dicts into a quasi-identifier table and a per-group table of
    sensitive value multisets. Records are sorted by their QI values (record id
    breaking ties) and chunked; the last group absorbs any remainder, so every
    group holds at least `group_size` records.

    `records` are (record_id, mapping) pairs; field names are bare (no table
    prefix). Returns (qi_rows, sensitive_rows)."""
    if group_size < 2:
        raise ConfigError("group_size must be >= 2")
    if len(records) < group_size:
        raise ConfigError(f"cannot anatomize {len(records)} records into groups of {group_size}")

    def sort_key(item):
        rid, row = item
        return tuple(str(row.get(f)) for f in qi_fields) + (rid,)

    ordered = sorted(records, key=sort_key)
    n_groups = len(ordered) // group_size
    qi_rows, sensitive_rows = [], []
    for g in range(n_groups):
        start = g * group_size
        end = start + group_size if g < n_groups - 1 else len(ordered)
        gid = f"g{g + 1:04d}"
        chunk = ordered[start:end]
        for rid, row in chunk:
            qi_rows.append({"record_id": rid, "group_id": gid,
                            **{f: row.get(f) for f in qi_fields}})
        for f in sensitive_fields:
            values = sorted((row.get(f) for _, row in chunk), key=lambda v: str(v))
            sensitive_rows.append({"group_id": gid, "field": f, "values": values})
    return qi_rows, sensitive_rows


def _anatomize_tables(tables, spec: AnatomizeSpec):
    table = split_field(spec.sensitive[0])[0]
    qi_fields = [split_field(f)[1] for f in spec.quasi_identifiers]
    sens_fields = [split_field(f)[1] for f in spec.sensitive]
    id_of = PRIMARY_ID[table]
    typ = _RECORD_TYPES[table]
    records = [(id_of(typ.from_dict(row)), row) for row in tables[table]]
    qi_rows, sensitive_rows = anatomize(records, qi_fields, sens_fields, spec.group_size)

    group_of = {row["record_id"]: row["group_id"] for row in qi_rows}
    stripped = []
    for rid, row in records:
        row = {k: v for k, v in row.items() if k not in sens_fields}
        stripped.append(row)
    tables[table] = stripped
    tables["anatomy_groups"] = tables["anatomy_groups"] + [
        {"table": table, "record_id": rid, "group_id": gid} for rid, gid in sorted(group_of.items())
    ]
    tables["anatomy_values"] = tables["anatomy_values"] + [
        {"table": table, "group_id": row["group_id"], "field": row["field"], "values": row["values"]}
        for row in sensitive_rows
    ]
    return tables


# --- risk and utility -------------------------------------------------------

def assess_risk(ds: CohortDataset, quasi_identifiers) -> RiskReport:
    """k-anonymity accounting on exact QI tuples: group records of the QI table
    by their tuple of QI values; achieved_k is the smallest group."""
    paths = list(quasi_identifiers)
    if paths:
        tables = {split_field(p)[0] for p in paths}
        if len(tables) != 1:
            raise ConfigError("quasi_identifiers must all belong to one table")
        table = tables.pop()
        fields = [split_field(p)[1] for p in paths]
    else:
        table, fields = "actors", []
    rows = [r.to_dict() for r in ds.table(table)]
    if not rows:
        raise GllaError(f"re-identification risk undefined: table {table!r} is empty")
    groups = Counter(tuple(str(row.get(f, "∅")) for f in fields) for row in rows)
    histogram = Counter(groups.values())
    k = min(groups.values())
    return RiskReport(
        min_group_size=k,
        achieved_k=k,
        prosecutor_risk=1.0 / k,
        group_histogram=dict(histogram),
    )


def shannon_entropy(values) -> float:
    counts = Counter(str(v) for v in values)
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return -sum((c / total) * math.log2(c / total) for c in counts.values())


def utility_loss(before_column, after_column) -> float:
    """Information loss as 1 - H(after)/H(before); 0 when the input column
    carries no information. Clamped to [0,1] (noise can raise raw entropy)."""
    if len(before_column) != len(after_column):
        raise ConfigError("columns must have equal length")
    h_before = shannon_entropy(before_column)
    if h_before == 0.0:
        return 0.0
    loss = 1.0 - shannon_entropy(after_column) / h_before
    return min(1.0, max(0.0, loss))


def _column(tables, path):
    table, field = split_field(path)
    return [row.get(field) for row in tables[table]]


def _anatomized_column(tables, path):
    table, field = split_field(path)
    values = []
    for row in tables["anatomy_values"]:
        if row["table"] == table and row["field"] == field:
            values.extend(row["values"])
    return values


# --- policy driver ----------------------------------------------------------

def apply_policy(
    ds: CohortDataset, policy: AnonymizationPolicy, workers: int = 1
) -> tuple[CohortDataset, RiskReport, UtilityReport]:
    """Run the full strategy pipeline and the risk gate.

    Returns the anonymised dataset, its risk report and the per-field utility
    report. Raises PrivacyThresholdError (carrying the risk report) and yields
    no dataset if achieved_k < k_threshold."""
    if ds.manifest.stage != STAGE_RESOLVED:
        raise StageOrderError(
            f"anonymisation requires a resolved dataset, got stage {ds.manifest.stage!r}"
        )
    validate_policy(policy)

    touched = list(policy.pseudonym_fields) + list(policy.suppress)
    touched += [g.field for g in policy.generalize] + [p.field for p in policy.perturb]
    if policy.anatomize:
        touched += list(policy.anatomize.sensitive)

    tables = _tables_as_dicts(ds)
    before_columns = {path: _column(tables, path) for path in touched}

    key = pseudonym_key(policy.seed)
    tables = _pseudonymize_tables(tables, policy.pseudonym_fields, key, workers)
    tables = _suppress_tables(tables, policy.suppress, workers)

    for spec in policy.generalize:
        table, field = split_field(spec.field)
        typ = _RECORD_TYPES[table]
        id_of = PRIMARY_ID[table]
        def one(row, _spec=spec, _field=field, _typ=typ, _id=id_of):
            if _field in row:
                row = dict(row)
                row[_field] = generalize_value(row[_field], _spec, _id(_typ.from_dict(row)))
            return row
        tables[table] = _pmap(one, tables[table], workers)

    for spec in policy.perturb:
        table, field = split_field(spec.field)
        typ = _RECORD_TYPES[table]
        id_of = PRIMARY_ID[table]
        def one(row, _spec=spec, _field=field, _typ=typ, _id=id_of):
            if _field in row:
                row = dict(row)
                rid = _id(_typ.from_dict(row))
                row[_field] = perturb_value(row[_field], _spec.noise, policy.seed, _spec.field, rid)
            return row
        tables[table] = _pmap(one, tables[table], workers)

    if policy.anatomize:
        tables = _anatomize_tables(tables, policy.anatomize)

    out = _dataset_from_dicts(ds, tables, STAGE_ANONYMISED)

    risk = assess_risk(out, policy.quasi_identifiers)
    if risk.achieved_k < policy.k_threshold:
        raise PrivacyThresholdError(
            f"achieved k={risk.achieved_k} below policy threshold {policy.k_threshold}; "
            "anonymised output withheld",
            risk_report=risk,
        )

    out_tables = _tables_as_dicts(out)
    anat_sensitive = set(policy.anatomize.sensitive) if policy.anatomize else set()
    losses = {}
    for path in touched:
        after = (
            _anatomized_column(out_tables, path)
            if path in anat_sensitive
            else _column(out_tables, path)
        )
        before = before_columns[path]
        if path in anat_sensitive:
            # re-tabled: compare distributions at equal sample size
            before = sorted(before, key=str)
            after = sorted(after, key=str)
        losses[path] = utility_loss(before, after)
    return out, risk, UtilityReport(per_field_information_loss=losses)
