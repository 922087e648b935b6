import random

import pytest

from glla.model import (
    ActorRecord,
    CommitRecord,
    EventRecord,
    MarkRecord,
    TeamRecord,
    assemble_dataset,
)


def random_dataset(seed=0, n_actors=6, n_commits=20, n_events=10, n_teams=2, n_marks=4):
    """Small structurally valid raw dataset for model/serialization tests."""
    rng = random.Random(seed)
    actors = [
        ActorRecord(
            actor_id=f"a{i:03d}",
            display_name=f"Person {i}",
            email=f"p{i}@example.test",
            username=f"user{i}",
            source_system=rng.choice(["git", "gitlab"]),
        )
        for i in range(n_actors)
    ]
    shas = [f"{rng.getrandbits(160):040x}" for _ in range(n_commits)]
    commits = []
    for i, sha in enumerate(shas):
        parents = () if i == 0 else (shas[rng.randrange(i)],)
        commits.append(
            CommitRecord(
                sha=sha,
                repo_id="proj",
                author_ref=rng.choice(actors).actor_id,
                committer_ref=rng.choice(actors).actor_id,
                authored_at=1700000000 + i * 3600,
                message=f"change {i}",
                parent_shas=parents,
                on_default_first_parent=rng.random() < 0.5,
                insertions=rng.randrange(0, 50),
                deletions=rng.randrange(0, 20),
            )
        )
    events = []
    for i in range(n_events):
        kind = rng.choice(["issue_opened", "mr_opened", "build_result"])
        payload = {}
        if kind == "mr_opened":
            payload = {"source_branch": f"topic/{i}", "mr_iid": str(i)}
        elif kind == "build_result":
            payload = {"build_status": rng.choice(["success", "failure"]), "build_number": str(i)}
        events.append(
            EventRecord(
                event_id=f"ev{i:03d}",
                kind=kind,
                actor_ref=rng.choice(actors).actor_id,
                project_id="proj",
                occurred_at=1700000000 + i * 7200,
                payload=payload,
            )
        )
    teams = []
    per_team = max(1, n_actors // max(n_teams, 1))
    for t in range(n_teams):
        members = [a.actor_id for a in actors[t * per_team:(t + 1) * per_team]] or [actors[0].actor_id]
        teams.append(TeamRecord(team_id=f"team{t}", project_id="proj", member_refs=tuple(sorted(members))))
    marks = [
        MarkRecord(subject_ref=actors[i % n_actors].actor_id, assessment_id=f"cw{i}", value=50.0 + i)
        for i in range(n_marks)
    ]
    return assemble_dataset(
        "raw",
        ["test:random"],
        actors=actors,
        commits=commits,
        events=events,
        teams=teams,
        marks=marks,
    )


@pytest.fixture
def small_dataset():
    return random_dataset(seed=1)
