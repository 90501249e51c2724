"""Commit, diff, tag and ancestry extraction from a local git clone.

Talks to git through its plumbing/porcelain output via ``subprocess``; all
output is decoded as UTF-8 with replacement so records are byte-stable.
"""

import hashlib
import logging
import os
import re
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

from .textprep import preprocess

logger = logging.getLogger(__name__)

NOISE_PREFIXES = ("diff --git", "index ", "+++ ", "--- ", "@@ ")
EMPTY_TREE = "4b825dc642cb6eb9a060e54bf8d69288fbee4904"
DEFAULT_DIFF_LINE_LIMIT = 10_000

_VERSION_CORE = re.compile(r"(\d+)\.(\d+)")
_TAG_PREFIX = re.compile(r"^(?:[A-Za-z_]+[-_])+")


class GitError(Exception):
    pass


class NotARepository(GitError):
    pass


class EmptyRepository(GitError):
    pass


class UnknownCommit(GitError):
    pass


class UnknownTag(GitError):
    pass


def _utc(seconds) -> datetime:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc)


@dataclass
class CommitRecord:
    id: str
    timestamp: datetime
    message: str
    changed_files: list[str]
    diff_lines: list[str]
    n_hunks: int = 0
    avg_hunk_size: float = 0.0
    pre_message: list[str] = field(default_factory=list)
    pre_files: list[str] = field(default_factory=list)
    pre_diff: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "timestamp": int(self.timestamp.timestamp()),
            "message": self.message,
            "changed_files": self.changed_files,
            "diff_lines": self.diff_lines,
            "n_hunks": self.n_hunks,
            "avg_hunk_size": self.avg_hunk_size,
            "pre_message": self.pre_message,
            "pre_files": self.pre_files,
            "pre_diff": self.pre_diff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommitRecord":
        return cls(**{**d, "timestamp": _utc(d["timestamp"])})


def make_commit_record(commit_id, timestamp, message, changed_files, raw_diff_lines,
                       diff_line_limit=DEFAULT_DIFF_LINE_LIMIT) -> CommitRecord:
    n_hunks, avg = hunk_stats(raw_diff_lines)
    diff_lines = strip_diff_noise(raw_diff_lines)[:diff_line_limit]
    return CommitRecord(
        id=commit_id,
        # git stores whole seconds; truncating keeps records equal after a store round trip
        timestamp=timestamp.replace(microsecond=0),
        message=message,
        changed_files=list(changed_files),
        diff_lines=diff_lines,
        n_hunks=n_hunks,
        avg_hunk_size=avg,
        pre_message=preprocess(message),
        pre_files=preprocess(" ".join(changed_files)),
        pre_diff=preprocess("\n".join(diff_lines)),
    )


def strip_diff_noise(lines) -> list[str]:
    return [ln for ln in lines if not ln.startswith(NOISE_PREFIXES)]


def drop_extended_headers(lines) -> list[str]:
    """Remove git's per-file metadata (mode, rename, binary notes) outside hunks."""
    out = []
    in_hunk = False
    for ln in lines:
        if ln.startswith("diff --git"):
            in_hunk = False
        elif ln.startswith("@@ "):
            in_hunk = True
        elif not in_hunk and not ln.startswith(NOISE_PREFIXES):
            continue
        out.append(ln)
    return out


def hunk_stats(lines) -> tuple[int, float]:
    """Count ``@@`` hunks and the mean number of lines (changed + context) per hunk."""
    n_hunks = 0
    body = 0
    in_hunk = False
    for ln in lines:
        if ln.startswith("@@ "):
            n_hunks += 1
            in_hunk = True
        elif ln.startswith("diff --git"):
            in_hunk = False
        elif in_hunk and ln[:1] in (" ", "+", "-"):
            body += 1
    return n_hunks, (body / n_hunks if n_hunks else 0.0)


@dataclass(frozen=True)
class Tag:
    name: str
    timestamp: datetime
    target_commit: str

    @property
    def normalized_name(self) -> str:
        return normalize_tag_name(self.name)

    @property
    def parsed_version(self):
        """``(major, minor, qualifier)`` or None when the name has no ``d.d`` core."""
        norm = self.normalized_name
        m = _VERSION_CORE.search(norm)
        if not m:
            return None
        return int(m.group(1)), int(m.group(2)), norm[m.end():]


def normalize_tag_name(name: str) -> str:
    """Strip ``word-`` prefixes and a leading ``v``: ``cayenne-parent-3.1`` -> ``3.1``."""
    name = _TAG_PREFIX.sub("", name)
    if name[:1] in ("v", "V") and name[1:2].isdigit():
        name = name[1:]
    return name


def _tag_key(tag: Tag):
    return (tag.timestamp, tag.name)


@dataclass
class TagTree:
    branches: dict[tuple[int, int], list[Tag]] = field(default_factory=dict)

    def tags(self):
        for branch in self.branches.values():
            yield from branch

    def names(self) -> dict[tuple[int, int], list[str]]:
        return {k: [t.name for t in v] for k, v in sorted(self.branches.items())}


def build_tag_tree(tags) -> TagTree:
    branches: dict[tuple[int, int], list[Tag]] = {}
    for tag in tags:
        version = tag.parsed_version
        if version is None:
            continue
        branches.setdefault(version[:2], []).append(tag)
    for branch in branches.values():
        branch.sort(key=_tag_key)
    return TagTree(dict(sorted(branches.items())))


def map_version_to_tag(version: str, tree: TagTree):
    """Return ``(tag, anchor)`` for a version string, or None.

    ``anchor`` is the chronologically next tag sharing the tag's major
    version, or the tag itself when it is the last one.
    """
    matches = sorted((t for t in tree.tags() if t.normalized_name == version), key=_tag_key)
    if not matches:
        return None
    tag = matches[0]
    major = tag.parsed_version[0]
    same_major = sorted(
        (t for (maj, _), branch in tree.branches.items() if maj == major for t in branch),
        key=_tag_key,
    )
    later = [t for t in same_major if _tag_key(t) > _tag_key(tag)]
    return tag, (later[0] if later else tag)


class GitRepo:
    """Read-only view over a local clone."""

    def __init__(self, path):
        self.path = Path(path).resolve()
        if not self.path.is_dir():
            raise NotARepository(f"{path} is not a directory")
        try:
            out = self._git("rev-parse", "--git-dir").strip()
        except GitError as exc:
            raise NotARepository(f"{path} is not a git repository") from exc
        # rev-parse from a subdirectory of an unrelated repo would succeed; reject that
        git_dir = (self.path / out).resolve()
        if git_dir != self.path and git_dir.parent != self.path:
            raise NotARepository(f"{path} is not the root of a git repository")
        self.extract_calls = 0

    def _run(self, *args, input=None) -> subprocess.CompletedProcess:
        env = {**os.environ, "GIT_PAGER": "cat", "LC_ALL": "C"}
        return subprocess.run(
            ["git", "-C", str(self.path), *args],
            input=input, capture_output=True, env=env,
        )

    def _git(self, *args) -> str:
        proc = self._run(*args)
        if proc.returncode != 0:
            raise GitError(proc.stderr.decode("utf-8", "replace").strip() or f"git {args[0]} failed")
        return proc.stdout.decode("utf-8", "replace")

    @cached_property
    def fingerprint(self) -> str:
        proc = self._run("config", "--get", "remote.origin.url")
        origin = proc.stdout.decode().strip() if proc.returncode == 0 else ""
        if origin:
            key = origin.lower().rstrip("/")
            key = key[:-4] if key.endswith(".git") else key
        else:
            key = str(self.path)
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def list_commits(self) -> list[tuple[str, datetime]]:
        proc = self._run("log", "--all", "--format=%H %ct")
        text = proc.stdout.decode().split()
        if proc.returncode != 0 or not text:
            raise EmptyRepository(f"{self.path} has no commits")
        pairs = [(text[i], int(text[i + 1])) for i in range(0, len(text), 2)]
        pairs.sort(key=lambda p: (p[1], p[0]))
        return [(cid, _utc(ts)) for cid, ts in pairs]

    def resolve(self, rev: str) -> str:
        proc = self._run("rev-parse", "--verify", "--quiet", f"{rev}^{{commit}}")
        if proc.returncode != 0:
            raise UnknownCommit(rev)
        return proc.stdout.decode().strip()

    def extract_commit(self, commit_id: str, diff_line_limit=DEFAULT_DIFF_LINE_LIMIT,
                       context_lines=1) -> CommitRecord:
        self.extract_calls += 1
        proc = self._run("show", "-s", "--format=%H%x00%ct%x00%P%x00%B", commit_id, "--")
        if proc.returncode != 0:
            raise UnknownCommit(commit_id)
        full_id, ts, parents, message = proc.stdout.decode("utf-8", "replace").split("\x00", 3)
        base = parents.split()[0] if parents.split() else EMPTY_TREE
        diff_args = ("diff", "--no-color", "--no-ext-diff", "--no-renames", base, full_id)
        files = self._git(*diff_args, "--name-only").splitlines()
        diff = drop_extended_headers(self._git(*diff_args, f"-U{context_lines}").splitlines())
        return make_commit_record(full_id, _utc(ts), message.rstrip("\n"), files, diff, diff_line_limit)

    def tags(self) -> list[Tag]:
        out = self._git(
            "for-each-ref", "refs/tags",
            "--format=%(refname:short)%00%(objectname)%00%(*objectname)%00%(creatordate:unix)",
        )
        tags = []
        for line in out.splitlines():
            name, obj, peeled, ts = line.split("\x00")
            tags.append(Tag(name, _utc(ts or 0), peeled or obj))
        return tags

    def tag_tree(self) -> TagTree:
        return build_tag_tree(self.tags())

    def is_ancestor(self, commit_id: str, tag: Tag) -> bool:
        for rev, err in ((commit_id, UnknownCommit), (tag.target_commit, UnknownTag)):
            if self._run("cat-file", "-e", f"{rev}^{{commit}}").returncode != 0:
                raise err(rev)
        proc = self._run("merge-base", "--is-ancestor", commit_id, tag.target_commit)
        if proc.returncode not in (0, 1):
            raise GitError(proc.stderr.decode("utf-8", "replace"))
        return proc.returncode == 0

    def ancestors(self, rev: str) -> frozenset[str]:
        """All commits reachable from ``rev``, itself included."""
        return frozenset(self._git("rev-list", rev).split())
