import random

import pytest

from glla.errors import ConfigError
from glla.identity import IdentityMap, apply_clusters, build_clusters, load_alias_rules, merge_edge
from glla.model import ActorRecord, CommitRecord, assemble_dataset, validate_dataset


def actor(aid, email="", username="", name="", source="git"):
    return ActorRecord(
        actor_id=aid, display_name=name, email=email, username=username, source_system=source
    )


def closure_oracle(actors, alias_rules=()):
    """O(n^2) transitive closure over the pairwise merge predicate."""
    alias_pairs = frozenset(alias_rules)
    ids = [a.actor_id for a in actors]
    adj = {i: set() for i in ids}
    for i, a in enumerate(actors):
        for b in actors[i + 1:]:
            if merge_edge(a, b, alias_pairs):
                adj[a.actor_id].add(b.actor_id)
                adj[b.actor_id].add(a.actor_id)
    seen, clusters = set(), []
    for aid in ids:
        if aid in seen:
            continue
        stack, comp = [aid], set()
        while stack:
            cur = stack.pop()
            if cur in comp:
                continue
            comp.add(cur)
            stack.extend(adj[cur] - comp)
        seen |= comp
        clusters.append(frozenset(comp))
    return {min(c): c for c in clusters}


def random_actor_table(rng, n=200):
    """Random actors with planted duplicate structure (shared emails/usernames)."""
    actors = []
    emails = [f"person{i}@uni.test" for i in range(n // 3)]
    usernames = [f"login{i}" for i in range(n // 3)]
    for i in range(n):
        email = rng.choice(emails + [""] * 4)
        username = rng.choice(usernames + [""] * 4)
        name = f"Name {rng.randrange(n)}" if rng.random() < 0.8 else ""
        if not (email or username or name):
            name = f"Name {i}"
        actors.append(actor(f"r{i:04d}", email=email, username=username, name=name))
    rules = []
    for _ in range(n // 20):
        rules.append((f"r{rng.randrange(n):04d}", f"r{rng.randrange(n):04d}"))
    return actors, tuple(rules)


class TestBuildClusters:
    def test_email_merges_name_does_not(self):
        actors = [
            actor("r1", email="a@x", name="J Doe"),
            actor("r2", email="a@x", name="John Doe"),
            actor("r3", email="b@x", name="John Doe"),
        ]
        im = build_clusters(actors)
        assert im.clusters == {"r1": frozenset({"r1", "r2"}), "r3": frozenset({"r3"})}

    def test_alias_rule_bridges_email_and_username(self):
        actors = [actor("r1", email="a@x"), actor("r2", username="jdoe")]
        im = build_clusters(actors, alias_rules=(("r1", "r2"),))
        assert im.clusters == {"r1": frozenset({"r1", "r2"})}

    def test_email_case_insensitive_username_case_sensitive(self):
        actors = [
            actor("r1", email="A@X.test"),
            actor("r2", email="a@x.test"),
            actor("r3", username="Bob"),
            actor("r4", username="bob"),
        ]
        im = build_clusters(actors)
        assert im.clusters["r1"] == frozenset({"r1", "r2"})
        assert im.clusters["r3"] == frozenset({"r3"})
        assert im.clusters["r4"] == frozenset({"r4"})

    def test_unknown_alias_actor_rejected(self):
        with pytest.raises(ConfigError):
            build_clusters([actor("r1", email="a@x")], alias_rules=(("r1", "nope"),))

    def test_matches_transitive_closure_oracle(self):
        for seed in range(50):
            rng = random.Random(seed)
            actors, rules = random_actor_table(rng, n=200)
            assert build_clusters(actors, rules).clusters == closure_oracle(actors, rules), seed

    def test_order_independence(self):
        rng = random.Random(99)
        actors, rules = random_actor_table(rng, n=120)
        shuffled = actors[:]
        rng.shuffle(shuffled)
        assert build_clusters(actors, rules).clusters == build_clusters(shuffled, rules).clusters

    def test_alias_monotone(self):
        rng = random.Random(7)
        actors, rules = random_actor_table(rng, n=80)
        base = build_clusters(actors, rules).clusters
        more = build_clusters(actors, rules + (("r0000", "r0001"),)).clusters
        for members in base.values():
            assert any(members <= bigger for bigger in more.values())


def two_identity_dataset():
    actors = [
        actor("gitlab:1", email="s1@uni.test", username="s1", name="Student One", source="gitlab"),
        actor("git:aaa", email="s1@uni.test", name="Student One (laptop)", source="git"),
    ]
    commits = [
        CommitRecord(
            sha=f"{i:040x}",
            repo_id="p",
            author_ref="gitlab:1" if i < 5 else "git:aaa",
            committer_ref="gitlab:1" if i < 5 else "git:aaa",
            authored_at=1700000000 + i,
            message=f"c{i}",
            parent_shas=(f"{i - 1:040x}",) if i else (),
            on_default_first_parent=True,
            insertions=1,
            deletions=0,
        )
        for i in range(10)
    ]
    return assemble_dataset("raw", ["t"], actors=actors, commits=commits)


class TestApplyClusters:
    def test_singleton_map_changes_only_stage(self, small_dataset):
        im = build_clusters(small_dataset.actors)
        out = apply_clusters(small_dataset, im)
        assert out.manifest.stage == "resolved"
        assert out.actors == small_dataset.actors
        assert out.commits == small_dataset.commits

    def test_two_identities_collapse_and_union_commits(self):
        ds = two_identity_dataset()
        out = apply_clusters(ds, build_clusters(ds.actors))
        assert len(out.actors) == 1
        canonical = out.actors[0]
        assert canonical.actor_id == "git:aaa"  # lexicographic minimum
        assert canonical.source_system == "gitlab"  # field union prefers gitlab
        assert canonical.username == "s1"
        assert sum(1 for c in out.commits if c.author_ref == canonical.actor_id) == 10
        assert validate_dataset(out) == []

    def test_idempotent(self):
        ds = two_identity_dataset()
        once = apply_clusters(ds, build_clusters(ds.actors))
        twice = apply_clusters(once, build_clusters(once.actors))
        assert twice == once

    def test_counts_conserved(self, small_dataset):
        # Force a merge by giving two actors one email.
        actors = list(small_dataset.actors)
        a0 = ActorRecord(actors[0].actor_id, actors[0].display_name, "same@x", "", "git")
        a1 = ActorRecord(actors[1].actor_id, actors[1].display_name, "same@x", "", "gitlab")
        ds = assemble_dataset(
            "raw",
            small_dataset.manifest.source_descriptors,
            actors=[a0, a1] + actors[2:],
            commits=small_dataset.commits,
            events=small_dataset.events,
            teams=small_dataset.teams,
            marks=small_dataset.marks,
        )
        out = apply_clusters(ds, build_clusters(ds.actors))
        assert len(out.commits) == len(ds.commits)
        assert len(out.events) == len(ds.events)
        assert len(out.actors) == len(ds.actors) - 1

    def test_partition_mismatch_rejected(self, small_dataset):
        im = IdentityMap(clusters={"a000": frozenset({"a000"})}, alias_rules=())
        with pytest.raises(Exception):
            apply_clusters(small_dataset, im)


def test_load_alias_rules(tmp_path):
    p = tmp_path / "aliases.csv"
    p.write_text("actor_a,actor_b\nr1,r2\n")
    assert load_alias_rules(p) == (("r1", "r2"),)
    p.write_text("wrong,header\n")
    with pytest.raises(ConfigError):
        load_alias_rules(p)
    with pytest.raises(ConfigError):
        load_alias_rules(tmp_path / "missing.csv")
