"""Candidate selection: publication-date window, commit caps, code-file filter."""

import bisect
from dataclasses import dataclass, field
from datetime import datetime, timedelta

RELEVANT_EXTENSIONS = (
    "java", "c", "cpp", "h", "py", "js", "xml", "go", "rb", "php", "sh", "scale",
    "lua", "m", "pl", "ts", "swift", "sql", "groovy", "erl", "swf", "vue", "bat",
    "s", "ejs", "yaml", "yml", "jar",
)


@dataclass
class FilterConfig:
    days_before: int = 730
    days_after: int = 100
    cap_before: int = 5215
    cap_after: int = 100
    relevant_extensions: tuple[str, ...] = RELEVANT_EXTENSIONS

    def __post_init__(self):
        for name in ("days_before", "days_after", "cap_before", "cap_after"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.relevant_extensions = tuple(self.relevant_extensions)
        if not self.relevant_extensions:
            raise ValueError("relevant_extensions must not be empty")
        for ext in self.relevant_extensions:
            if ext != ext.lower() or "." in ext or not ext:
                raise ValueError(f"bad extension {ext!r}: expected lowercase, no dots")


@dataclass
class CandidateSet:
    advisory_id: str
    commit_ids: list[str]
    # total_commits, after_time_window, after_extension_filter
    stats: dict[str, int] = field(default_factory=dict)


def select_window(commits, published: datetime, cfg: FilterConfig | None = None):
    """Keep commits near ``published``.

    ``commits`` is a list of ``(id, timestamp)`` sorted by timestamp. Commits
    strictly before publication form the "before" side, the rest the "after"
    side; each side is capped, keeping the commits closest to publication.
    Window bounds are inclusive.
    """
    cfg = cfg or FilterConfig()
    times = [t for _, t in commits]
    lo = bisect.bisect_left(times, published - timedelta(days=cfg.days_before))
    pivot = bisect.bisect_left(times, published)
    hi = bisect.bisect_right(times, published + timedelta(days=cfg.days_after))
    before = commits[lo:pivot][-cfg.cap_before:]
    after = commits[pivot:hi][: cfg.cap_after]
    return before + after


def has_relevant_extension(path: str, extensions) -> bool:
    parts = path.rsplit("/", 1)[-1].split(".")
    return len(parts) > 1 and parts[-1].lower() in extensions


def filter_extensions(candidates, commit_lookup, cfg: FilterConfig | None = None) -> list[str]:
    """Drop candidates that change no file with a relevant extension.

    ``candidates`` may be ids or ``(id, timestamp)`` pairs; ``commit_lookup``
    maps an id to its CommitRecord.
    """
    cfg = cfg or FilterConfig()
    exts = frozenset(cfg.relevant_extensions)
    kept = []
    for cand in candidates:
        cid = cand if isinstance(cand, str) else cand[0]
        record = commit_lookup(cid)
        if any(has_relevant_extension(f, exts) for f in record.changed_files):
            kept.append(cid)
    return kept
