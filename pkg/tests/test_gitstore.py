import subprocess

from glla.gitstore import GitRepoBuilder


def git(repo, *args):
    return subprocess.run(
        ["git", "-C", str(repo), *args], capture_output=True, text=True, check=True
    ).stdout


def build_small_repo(tmp_path):
    b = GitRepoBuilder()
    blob0 = b.add_blob(b"hello\n")
    tree0 = b.add_tree({"README.txt": blob0})
    c0 = b.add_commit(tree0, [], "Alice", "alice@x.test", 1700000000, "root")
    blob1 = b.add_blob(b"hello\nworld\n")
    tree1 = b.add_tree({"README.txt": blob1})
    c1 = b.add_commit(tree1, [c0], "Bob", "bob@x.test", 1700003600, "more")
    b.set_ref("refs/heads/main", c1)
    b.write(tmp_path / "repo")
    return tmp_path / "repo", (c0, c1)


def test_real_git_reads_written_repo(tmp_path):
    repo, (c0, c1) = build_small_repo(tmp_path)
    # fsck validates object integrity end to end
    subprocess.run(["git", "-C", str(repo), "fsck", "--strict"], check=True, capture_output=True)
    log = git(repo, "log", "--format=%H %an %ae %at", "main")
    lines = log.strip().splitlines()
    assert lines[0] == f"{c1} Bob bob@x.test 1700003600"
    assert lines[1] == f"{c0} Alice alice@x.test 1700000000"


def test_shas_match_real_git_hashing(tmp_path):
    repo, (c0, c1) = build_small_repo(tmp_path)
    assert git(repo, "rev-parse", "main").strip() == c1
    numstat = git(repo, "log", "--format=%H", "--numstat", "main")
    assert "1\t0\tREADME.txt" in numstat  # second commit adds one line


def test_merge_commit_and_branches(tmp_path):
    b = GitRepoBuilder()
    t0 = b.add_tree({"f.txt": b.add_blob(b"1\n")})
    c0 = b.add_commit(t0, [], "A", "a@x", 100, "root")
    t1 = b.add_tree({"f.txt": b.add_blob(b"1\n2\n")})
    feat = b.add_commit(t1, [c0], "B", "b@x", 200, "feature work")
    t2 = b.add_tree({"f.txt": b.add_blob(b"1\n2\n")})
    merge = b.add_commit(t2, [c0, feat], "A", "a@x", 300, "merge feature")
    b.set_ref("refs/heads/main", merge)
    b.set_ref("refs/heads/feature", feat)
    repo = b.write(tmp_path / "r")
    first_parent = git(repo, "rev-list", "--first-parent", "main").strip().splitlines()
    assert first_parent == [merge, c0]
    everything = set(git(repo, "rev-list", "--all").strip().splitlines())
    assert everything == {c0, feat, merge}


def test_deterministic_shas(tmp_path):
    _, shas_a = build_small_repo(tmp_path / "a")
    _, shas_b = build_small_repo(tmp_path / "b")
    assert shas_a == shas_b
