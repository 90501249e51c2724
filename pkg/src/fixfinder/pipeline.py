"""End-to-end glue: advisory + repository -> candidates -> raw feature matrix."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .advisory import FixtureFetcher, build_advisory_record, load_raw_advisory
from .features import N_FEATURES, PipelineConfig, assemble, resolve_anchors
from .filtering import CandidateSet, FilterConfig, filter_extensions, select_window
from .repominer import GitRepo
from .store import CacheKey

logger = logging.getLogger(__name__)


class RepoContext:
    """One repository plus its caches: commit list, records, tags, ancestry."""

    def __init__(self, repo: GitRepo, store=None, cfg: PipelineConfig | None = None):
        self.repo = repo
        self.store = store
        self.cfg = cfg or PipelineConfig()
        self._records = {}
        self._ancestors = {}
        self._commits = None
        self._tag_tree = None
        self.lookups = 0
        self.cache_hits = 0

    @property
    def commits(self):
        if self._commits is None:
            self._commits = self.repo.list_commits()
        return self._commits

    @property
    def tag_tree(self):
        if self._tag_tree is None:
            self._tag_tree = self.repo.tag_tree()
        return self._tag_tree

    def record(self, commit_id: str):
        """Commit record from memory, then the store, then git (stored back)."""
        self.lookups += 1
        rec = self._records.get(commit_id)
        if rec is not None:
            return rec
        key = CacheKey(self.repo.fingerprint, commit_id)
        if self.store is not None:
            rec = self.store.get(key)
            if rec is not None:
                self.cache_hits += 1
        if rec is None:
            rec = self.repo.extract_commit(commit_id, self.cfg.diff_line_limit, self.cfg.diff_context_lines)
            if self.store is not None:
                self.store.put(key, rec)
        self._records[commit_id] = rec
        return rec

    def reachable_from(self, tag):
        hit = self._ancestors.get(tag.target_commit)
        if hit is None:
            hit = self._ancestors[tag.target_commit] = self.repo.ancestors(tag.target_commit)
        return hit


def select_candidates(advisory, ctx: RepoContext, filter_cfg: FilterConfig | None = None) -> CandidateSet:
    filter_cfg = filter_cfg or FilterConfig()
    commits = ctx.commits
    window = select_window(commits, advisory.published, filter_cfg)
    kept = filter_extensions(window, ctx.record, filter_cfg)
    return CandidateSet(advisory.cve_id, kept, {
        "total_commits": len(commits),
        "after_time_window": len(window),
        "after_extension_filter": len(kept),
    })


def candidate_features(advisory, ctx: RepoContext, filter_cfg=None):
    """Candidate set, candidate records and the raw feature matrix."""
    cands = select_candidates(advisory, ctx, filter_cfg)
    records = [ctx.record(cid) for cid in cands.commit_ids]
    if not records:
        return cands, records, np.zeros((0, N_FEATURES))
    anchors = resolve_anchors(advisory.versions, ctx.tag_tree)
    X = assemble(advisory, records, anchors, ctx.reachable_from, ctx.cfg)
    return cands, records, X


@dataclass
class PreparedAdvisory:
    advisory_id: str
    commit_ids: list[str]
    features: np.ndarray
    fixes: set[str] = field(default_factory=set)
    stats: dict = field(default_factory=dict)


@dataclass
class DatasetEntry:
    cve_id: str
    repo: Path
    fixes: list[str]


class DatasetError(ValueError):
    pass


def read_dataset(path) -> list[DatasetEntry]:
    """``cve_id <TAB> repository <TAB> comma-separated fix ids`` per line.

    Relative repository paths are resolved against the dataset file's
    directory. Blank lines and ``#`` comments are ignored.
    """
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields")
        cve_id, repo, fixes = (p.strip() for p in parts)
        repo_path = Path(repo)
        if not repo_path.is_absolute():
            repo_path = (path.parent / repo_path).resolve()
        entries.append(DatasetEntry(cve_id, repo_path, [f.strip() for f in fixes.split(",") if f.strip()]))
    return entries


@dataclass
class Workspace:
    """Where advisories, reference fixtures and the commit store live."""

    advisory_dir: Path
    fixtures_dir: Path | None = None
    store: object = None
    cfg: PipelineConfig = field(default_factory=PipelineConfig)
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    contexts: dict = field(default_factory=dict)

    @classmethod
    def for_dataset(cls, dataset_path, store=None, cfg=None, filter_cfg=None, advisory_dir=None, fixtures_dir=None):
        base = Path(dataset_path).parent
        fixtures = Path(fixtures_dir) if fixtures_dir else base / "references"
        return cls(
            advisory_dir=Path(advisory_dir) if advisory_dir else base / "advisories",
            fixtures_dir=fixtures if fixtures.is_dir() else None,
            store=store,
            cfg=cfg or PipelineConfig(),
            filter_cfg=filter_cfg or FilterConfig(),
        )

    def context(self, repo_path) -> RepoContext:
        key = str(repo_path)
        if key not in self.contexts:
            self.contexts[key] = RepoContext(GitRepo(repo_path), self.store, self.cfg)
        return self.contexts[key]

    def advisory(self, cve_id):
        raw = load_raw_advisory(self.advisory_dir / f"{cve_id}.json")
        fetcher = FixtureFetcher(self.fixtures_dir) if self.fixtures_dir else None
        return build_advisory_record(raw, fetcher, self.cfg.top_k_reference_words)

    def prepare(self, entry: DatasetEntry):
        """Advisory record, context and PreparedAdvisory for one dataset line."""
        advisory = self.advisory(entry.cve_id)
        ctx = self.context(entry.repo)
        fixes = {ctx.repo.resolve(f) for f in entry.fixes}
        cands, records, X = candidate_features(advisory, ctx, self.filter_cfg)
        stats = dict(cands.stats, fix_selected=bool(fixes & set(cands.commit_ids)))
        return advisory, ctx, PreparedAdvisory(entry.cve_id, [r.id for r in records], X, fixes, stats)

    def ingest_summary(self) -> dict:
        """Lookups, distinct commits, store hits and git extractions so far.

        ``cache_hit_pct`` is over distinct commits; ``dedup_ratio`` is the
        share of lookups served without touching git.
        """
        lookups = sum(c.lookups for c in self.contexts.values())
        unique = sum(len(c._records) for c in self.contexts.values())
        hits = sum(c.cache_hits for c in self.contexts.values())
        mined = sum(c.repo.extract_calls for c in self.contexts.values())
        return {
            "commit_lookups": lookups,
            "distinct_commits": unique,
            "commits_mined": mined,
            "cache_hits": hits,
            "cache_hit_pct": 100.0 * hits / unique if unique else 0.0,
            "dedup_ratio": 1.0 - mined / lookups if lookups else 0.0,
        }
