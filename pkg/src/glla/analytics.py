"""Learning-analytics metrics over anonymised datasets: commit entropy per team,
mistake detection, activity timelines, and metric-versus-marks correlations.

Everything here is a pure function of the dataset; the same input always yields
the same report bytes. Generalised values survive: period-label timestamps fold
into timelines and binned marks enter correlations as bin midpoints.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .anonymize import bin_bounds, day_label, week_label
from .errors import GllaError
from .model import CohortDataset, TeamRecord

FINDING_DIRECT_DEFAULT = "direct_default_commit"
FINDING_UNINTEGRATED = "unintegrated_branch"


@dataclass(frozen=True)
class MistakeFinding:
    kind: str
    team_id: str
    subject_ref: str
    evidence: str  # sha or branch name
    occurred_at: int | str

    def to_dict(self):
        return {
            "kind": self.kind,
            "team_id": self.team_id,
            "subject_ref": self.subject_ref,
            "evidence": self.evidence,
            "occurred_at": self.occurred_at,
        }


@dataclass(frozen=True)
class CorrelationEntry:
    metric_name: str
    assessment_id: str
    pearson: float | None
    spearman: float | None
    n: int
    undefined_reason: str | None = None

    def to_dict(self):
        return {
            "metric_name": self.metric_name,
            "assessment_id": self.assessment_id,
            "pearson": self.pearson,
            "spearman": self.spearman,
            "n": self.n,
            "undefined_reason": self.undefined_reason,
        }


@dataclass(frozen=True)
class MetricReport:
    per_team_entropy: dict[str, float]
    findings: tuple[MistakeFinding, ...]
    correlations: tuple[CorrelationEntry, ...]
    timelines: dict[str, tuple[tuple[str, int], ...]]

    def to_dict(self):
        return {
            "per_team_entropy": {t: round(v, 9) for t, v in sorted(self.per_team_entropy.items())},
            "findings": [f.to_dict() for f in self.findings],
            "correlations": [c.to_dict() for c in self.correlations],
            "timelines": {
                t: [[label, count] for label, count in periods]
                for t, periods in sorted(self.timelines.items())
            },
        }

    def render_table(self) -> str:
        lines = ["team entropy"]
        for team, h in sorted(self.per_team_entropy.items()):
            lines.append(f"  {team:<24} {h:.4f}")
        lines.append("")
        lines.append(f"findings ({len(self.findings)})")
        for f in self.findings:
            lines.append(f"  {f.kind:<24} team={f.team_id} subject={f.subject_ref} "
                         f"evidence={f.evidence} at={f.occurred_at}")
        lines.append("")
        lines.append("correlations")
        for c in self.correlations:
            if c.undefined_reason:
                lines.append(f"  {c.metric_name} vs {c.assessment_id}: undefined ({c.undefined_reason})")
            else:
                lines.append(f"  {c.metric_name} vs {c.assessment_id}: "
                             f"pearson={c.pearson:+.4f} spearman={c.spearman:+.4f} n={c.n}")
        lines.append("")
        lines.append("activity (events+commits per period)")
        for team, periods in sorted(self.timelines.items()):
            total = sum(count for _, count in periods)
            lines.append(f"  {team:<24} periods={len(periods)} total={total}")
        return "\n".join(lines) + "\n"


# --- time handling ----------------------------------------------------------

def _to_date(value) -> date:
    """Calendar date of an activity value: epoch seconds or a period label."""
    if isinstance(value, int) and not isinstance(value, bool):
        return datetime.fromtimestamp(value, tz=timezone.utc).date()
    if isinstance(value, str):
        if value.count("-") == 2:
            return date.fromisoformat(value)
        if "-W" in value:
            year, week = value.split("-W")
            return date.fromisocalendar(int(year), int(week), 1)
    raise GllaError(f"cannot interpret activity timestamp {value!r}")


def _period_label(value, granularity: str) -> str:
    d = _to_date(value)
    if granularity == "day":
        return d.isoformat()
    iso = d.isocalendar()
    return f"{iso[0]}-W{iso[1]:02d}"


def _period_range(first: str, last: str, granularity: str) -> list[str]:
    labels = []
    if granularity == "day":
        cur, end = date.fromisoformat(first), date.fromisoformat(last)
        while cur <= end:
            labels.append(cur.isoformat())
            cur += timedelta(days=1)
    else:
        cur = _to_date(first)
        end = _to_date(last)
        while cur <= end:
            iso = cur.isocalendar()
            labels.append(f"{iso[0]}-W{iso[1]:02d}")
            cur += timedelta(days=7)
    return labels


def sort_stamp(value) -> tuple:
    """Total order over mixed int/label timestamps (chronological, then lexical)."""
    return (_to_date(value).toordinal(), str(value))


# --- metrics ----------------------------------------------------------------

def commit_entropy(team: TeamRecord, commits) -> float:
    """How evenly a team's commits are spread over its members, in [0,1].

    With c_i the number of commits authored by member i and N their sum:
    0 when N=0 or the team has one member; otherwise the Shannon entropy
    -sum over contributing members of (c_i/N)*log2(c_i/N), normalized by
    log2(team size). Members with zero commits enlarge the denominator but
    add nothing to the sum, so 1.0 means all members contributed equally.
    """
    members = list(team.member_refs)
    n = len(members)
    if n == 0:
        raise GllaError(f"team {team.team_id} has no members")
    counts = Counter()
    member_set = set(members)
    for c in commits:
        if c.author_ref in member_set:
            counts[c.author_ref] += 1
    total = sum(counts.values())
    if total == 0 or n == 1:
        return 0.0
    h = -sum((k / total) * math.log2(k / total) for k in counts.values() if k > 0)
    return h / math.log2(n)


def detect_direct_default_commits(ds: CohortDataset):
    """Non-merge commits that landed on the default branch's first-parent chain
    without a merge request: the classic wrong-branch mistake. Merge commits and
    commits referenced by an mr_merged payload are exempt."""
    merged_shas = set()
    for e in ds.events:
        if e.kind == "mr_merged" and e.payload:
            sha = e.payload.get("merge_commit_sha")
            if sha:
                merged_shas.add(sha)
    findings = []
    for c in ds.commits:
        if not c.on_default_first_parent or len(c.parent_shas) != 1 or c.sha in merged_shas:
            continue
        findings.append(
            MistakeFinding(
                kind=FINDING_DIRECT_DEFAULT,
                team_id=_team_for(ds, c.author_ref, c.repo_id),
                subject_ref=c.author_ref,
                evidence=c.sha,
                occurred_at=c.authored_at,
            )
        )
    findings.sort(key=lambda f: (sort_stamp(f.occurred_at), f.evidence))
    return tuple(findings)


def detect_unintegrated_branches(ds: CohortDataset):
    """Source branches whose merge request was opened but never merged or closed
    by the end of the data window."""
    opened: dict[tuple[str, str], tuple] = {}
    terminal: set[tuple[str, str]] = set()
    for e in ds.events:
        if not e.kind.startswith("mr_") or not e.payload:
            continue
        branch = e.payload.get("source_branch")
        if not branch:
            continue
        key = (e.project_id, branch)
        if e.kind == "mr_opened":
            if key not in opened or sort_stamp(e.occurred_at) < sort_stamp(opened[key][0]):
                opened[key] = (e.occurred_at, e.actor_ref)
        elif e.kind in ("mr_merged", "mr_closed"):
            terminal.add(key)
    findings = []
    for (project_id, branch), (at, actor) in opened.items():
        if (project_id, branch) in terminal:
            continue
        findings.append(
            MistakeFinding(
                kind=FINDING_UNINTEGRATED,
                team_id=_team_for(ds, actor, project_id),
                subject_ref=actor,
                evidence=branch,
                occurred_at=at,
            )
        )
    findings.sort(key=lambda f: (sort_stamp(f.occurred_at), f.evidence))
    return tuple(findings)


def _team_for(ds: CohortDataset, actor_ref: str, project_id: str) -> str:
    fallback = ""
    for t in ds.teams:
        if actor_ref in t.member_refs:
            if t.project_id == project_id:
                return t.team_id
            fallback = fallback or t.team_id
    return fallback


def activity_timeline(ds: CohortDataset, team: TeamRecord, granularity: str = "day"):
    """Commits+events by team members per period, contiguous and zero-filled
    between the first and last observed activity."""
    if granularity not in ("day", "week"):
        raise GllaError(f"granularity must be day or week, got {granularity!r}")
    members = set(team.member_refs)
    stamps = [c.authored_at for c in ds.commits if c.author_ref in members]
    stamps += [e.occurred_at for e in ds.events if e.actor_ref in members]
    if not stamps:
        return []
    counts = Counter(_period_label(s, granularity) for s in stamps)
    ordered = sorted(counts, key=lambda lbl: sort_stamp(lbl))
    labels = _period_range(ordered[0], ordered[-1], granularity)
    return [(label, counts.get(label, 0)) for label in labels]


# --- correlation ------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    pearson: float | None
    spearman: float | None
    n: int
    undefined_reason: str | None = None


def _pearson(xs, ys) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def _average_ranks(values) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def mark_numeric(value) -> float:
    """Numeric view of a mark: itself if a number, the bin midpoint if binned."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    lo, hi = bin_bounds(value)
    return (lo + hi) / 2


def correlate(metric: dict, marks, assessment_id: str) -> CorrelationResult:
    """Pearson and Spearman between a per-subject metric and the marks of one
    assessment, over subjects present on both sides. Spearman is Pearson on
    average ranks (ties averaged). Fewer than two pairs or zero variance on
    either side is reported as undefined, never as a coefficient."""
    pairs = []
    for m in marks:
        if m.assessment_id == assessment_id and m.subject_ref in metric:
            pairs.append((metric[m.subject_ref], mark_numeric(m.value)))
    n = len(pairs)
    if n < 2:
        return CorrelationResult(None, None, n, undefined_reason="fewer than 2 paired subjects")
    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        return CorrelationResult(None, None, n, undefined_reason="zero variance")
    return CorrelationResult(
        pearson=_pearson(xs, ys),
        spearman=_pearson(_average_ranks(xs), _average_ranks(ys)),
        n=n,
    )


# --- report assembly --------------------------------------------------------

def build_report(ds: CohortDataset, granularity: str = "week") -> MetricReport:
    teams = sorted(ds.teams, key=lambda t: t.team_id)
    entropy = {t.team_id: commit_entropy(t, ds.commits) for t in teams}
    findings = detect_direct_default_commits(ds) + detect_unintegrated_branches(ds)
    timelines = {t.team_id: tuple(activity_timeline(ds, t, granularity)) for t in teams}

    team_ids = {t.team_id for t in teams}
    assessments = sorted({m.assessment_id for m in ds.marks})
    volume = Counter()
    for c in ds.commits:
        volume[c.author_ref] += 1
    for e in ds.events:
        volume[e.actor_ref] += 1

    correlations = []
    for assessment in assessments:
        subjects = {m.subject_ref for m in ds.marks if m.assessment_id == assessment}
        if subjects & team_ids:
            res = correlate(entropy, ds.marks, assessment)
            correlations.append(
                CorrelationEntry("commit_entropy", assessment, res.pearson, res.spearman,
                                 res.n, res.undefined_reason)
            )
        if subjects - team_ids:
            metric = {aid: float(volume.get(aid, 0)) for aid in subjects - team_ids}
            res = correlate(metric, ds.marks, assessment)
            correlations.append(
                CorrelationEntry("activity_volume", assessment, res.pearson, res.spearman,
                                 res.n, res.undefined_reason)
            )
    return MetricReport(
        per_team_entropy=entropy,
        findings=findings,
        correlations=tuple(correlations),
        timelines=timelines,
    )
