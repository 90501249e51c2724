"""Feature vectors for (advisory, candidate commit) pairs and their scaling."""

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .textprep import preprocess

FEATURE_NAMES = (
    "vuln_id_in_message",
    "other_vuln_id_in_message",
    "referred_by_nvd",
    "referred_by_advisories",
    "n_hunks",
    "avg_hunk_size",
    "n_changed_files",
    "has_github_issue_ref",
    "has_jira_ref",
    "path_similarity",
    "message_sim_description",
    "message_sim_code_tokens",
    "message_sim_references",
    "files_sim_description",
    "files_sim_code_tokens",
    "files_sim_references",
    "diff_sim_description",
    "diff_sim_code_tokens",
    "diff_sim_references",
    "time_distance_before",
    "time_distance_after",
    "reachability",
    "vulnerability_timestamp",
)
N_FEATURES = len(FEATURE_NAMES)
COL = {name: i for i, name in enumerate(FEATURE_NAMES)}

FIX_WORDS = (
    "security", "cve", "patch", "vulnerability", "vulnerable",
    "advisory", "attack", "exploit", "exploitable",
)

_ISSUE_RE = re.compile(r"#[0-9]+")
_JIRA_RE = re.compile(r"(?<![A-Za-z0-9-])[A-Z][A-Z0-9]+-[0-9]+(?![A-Za-z0-9-])")
_PATH_SPLIT = re.compile(r"[./]")

SECONDS_PER_DAY = 86_400


@dataclass
class PipelineConfig:
    diff_line_limit: int = 10_000
    commit_prefix_len: int = 8
    top_k_reference_words: int = 20
    reachability_window_days: int = 100
    reachability_decay_per_day: float = 0.01
    diff_context_lines: int = 1
    fix_words: tuple[str, ...] = FIX_WORDS

    def __post_init__(self):
        self.fix_words = tuple(self.fix_words)
        for name in ("diff_line_limit", "commit_prefix_len", "top_k_reference_words",
                     "reachability_window_days", "reachability_decay_per_day", "diff_context_lines"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# -- individual features ---------------------------------------------------


def id_features(cve_id: str, message: str) -> tuple[float, float]:
    msg = message.lower()
    if cve_id.lower() in msg:
        return 1.0, 0.0
    return 0.0, float("cve-" in msg)


def referred_features(advisory, commit_id: str, prefix_len=8) -> tuple[float, float]:
    prefix = commit_id[:prefix_len].lower()
    return float(prefix in advisory.nvd_commit_prefixes), float(prefix in advisory.advisory_commit_prefixes)


def message_ref_flags(message: str) -> tuple[float, float]:
    issue = _ISSUE_RE.search(message) is not None
    jira = any(not m.group().startswith("CVE-") for m in _JIRA_RE.finditer(message))
    return float(issue), float(jira)


def _has_extension(path: str) -> bool:
    return "." in path.rsplit("/", 1)[-1]


def _reversed_parts(path: str, drop_extension: bool) -> list[str]:
    parts = [p for p in _PATH_SPLIT.split(path) if p]
    if drop_extension and _has_extension(path) and len(parts) > 1:
        parts = parts[:-1]
    return parts[::-1]


def path_similarity(description_paths, changed_files) -> float:
    """Sum over mentioned paths of the best trailing-component overlap.

    A mentioned path with an extension needs at least two matching trailing
    components (a bare extension match does not count); an extensionless one
    is compared against changed files with their extensions removed and
    scores from one matching component.
    """
    total = 0
    for dpath in description_paths:
        with_ext = _has_extension(dpath)
        needle = _reversed_parts(dpath, drop_extension=False)
        best = 0
        for cfile in changed_files:
            hay = _reversed_parts(cfile, drop_extension=not with_ext)
            n = 0
            for a, b in zip(needle, hay):
                if a != b:
                    break
                n += 1
            if n >= (2 if with_ext else 1):
                best = max(best, n)
        total += best
    return float(total)


class TfidfIndex:
    """TF-IDF over a fixed corpus of token lists, with cosine similarity.

    Raw term counts, smoothed idf ``ln((1+N)/(1+df)) + 1`` and L2
    normalisation. Query terms outside the corpus vocabulary are ignored.
    """

    def __init__(self, documents):
        self.counts = [Counter(doc) for doc in documents]
        n = len(self.counts)
        df = Counter()
        for c in self.counts:
            df.update(c.keys())
        self.idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
        self.doc_weights = [self._weigh(c) for c in self.counts]

    def _weigh(self, counts: Counter) -> dict[str, float]:
        w = {t: tf * self.idf[t] for t, tf in counts.items() if t in self.idf}
        norm = math.sqrt(sum(v * v for v in w.values()))
        return {t: v / norm for t, v in w.items()} if norm > 0 else {}

    def similarities(self, query) -> np.ndarray:
        q = self._weigh(Counter(query))
        out = np.zeros(len(self.doc_weights))
        if not q:
            return out
        for i, d in enumerate(self.doc_weights):
            if len(d) < len(q):
                s = sum(v * q[t] for t, v in d.items() if t in q)
            else:
                s = sum(v * d[t] for t, v in q.items() if t in d)
            out[i] = min(s, 1.0)
        return out


def lexical_similarities(advisory, candidates, fix_words=FIX_WORDS) -> np.ndarray:
    """Nine cosine similarities per candidate, columns in FEATURE_NAMES order."""
    if not candidates:
        raise ValueError("need at least one candidate")
    description = preprocess(advisory.description)
    code_tokens = preprocess(" ".join(advisory.code_tokens))
    references = preprocess(" ".join(advisory.reference_keywords))
    message_query = description + preprocess(" ".join(fix_words))

    corpora = (
        ([c.pre_message for c in candidates], message_query),
        ([c.pre_files for c in candidates], description),
        ([c.pre_diff for c in candidates], description),
    )
    cols = []
    for docs, desc_query in corpora:
        index = TfidfIndex(docs)
        cols += [index.similarities(q) for q in (desc_query, code_tokens, references)]
    return np.column_stack(cols)


def time_distance_features(timestamps, published) -> np.ndarray:
    """(before, after) pairs for candidates sorted ascending by timestamp.

    Rank-linear from 0.5 for the candidate furthest from publication to 1.0
    for the closest one, on each side. A commit at the publication instant
    counts as "after".
    """
    n = len(timestamps)
    out = np.zeros((n, 2))
    k = sum(1 for t in timestamps if t < published)
    m = n - k
    for i in range(k):
        out[i, 0] = 1.0 if k == 1 else 0.5 + 0.5 * i / (k - 1)
    for j in range(m):
        out[k + j, 1] = 1.0 if m == 1 else 1.0 - 0.5 * j / (m - 1)
    return out


def day_gap(a, b) -> int:
    return int(abs((a - b).total_seconds()) // SECONDS_PER_DAY)


def resolve_anchors(versions, tag_tree) -> list:
    """Anchor tags for the versions mentioned in an advisory, deduplicated."""
    from .repominer import map_version_to_tag

    anchors = {}
    for v in versions:
        hit = map_version_to_tag(v, tag_tree)
        if hit is not None:
            anchors.setdefault(hit[1].name, hit[1])
    return list(anchors.values())


def reachability_score(commit, anchors, reachable_from, cfg: PipelineConfig | None = None) -> float:
    """Best decayed score over anchor tags that can reach ``commit``.

    ``reachable_from(tag)`` returns the set of commit ids that are ancestors
    of (or equal to) the tag's target.
    """
    cfg = cfg or PipelineConfig()
    best = 0.0
    for tag in anchors:
        days = day_gap(tag.timestamp, commit.timestamp)
        if days > cfg.reachability_window_days or commit.id not in reachable_from(tag):
            continue
        best = max(best, 1.0 - cfg.reachability_decay_per_day * days)
    return max(best, 0.0)


def assemble(advisory, candidates, anchors=(), reachable_from=None, cfg: PipelineConfig | None = None) -> np.ndarray:
    """Raw (unscaled) feature matrix, one row per candidate.

    ``candidates`` must be sorted ascending by timestamp.
    """
    cfg = cfg or PipelineConfig()
    if not candidates:
        raise ValueError("need at least one candidate")
    X = np.zeros((len(candidates), N_FEATURES))
    for i, c in enumerate(candidates):
        X[i, 0:2] = id_features(advisory.cve_id, c.message)
        X[i, 2:4] = referred_features(advisory, c.id, cfg.commit_prefix_len)
        X[i, 4] = c.n_hunks
        X[i, 5] = c.avg_hunk_size
        X[i, 6] = len(c.changed_files)
        X[i, 7:9] = message_ref_flags(c.message)
        X[i, 9] = path_similarity(advisory.paths, c.changed_files)
        if anchors and reachable_from is not None:
            X[i, 21] = reachability_score(c, anchors, reachable_from, cfg)
    X[:, 10:19] = lexical_similarities(advisory, candidates, cfg.fix_words)
    X[:, 19:21] = time_distance_features([c.timestamp for c in candidates], advisory.published)
    X[:, 22] = advisory.published.timestamp()
    return X


# -- scaling ---------------------------------------------------------------


class UnfittedScaler(Exception):
    pass


UNIVERSAL_COLUMNS = tuple(COL[n] for n in ("n_hunks", "avg_hunk_size", "n_changed_files", "vulnerability_timestamp"))
PER_ADVISORY_COLUMNS = tuple(range(COL["path_similarity"], COL["diff_sim_references"] + 1))
IDENTITY_COLUMNS = tuple(i for i in range(N_FEATURES) if i not in UNIVERSAL_COLUMNS + PER_ADVISORY_COLUMNS)


def minmax(values, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.zeros_like(values, dtype=float)
    return np.clip((values - lo) / span, 0.0, 1.0)


@dataclass
class ScalingScheme:
    """Universal min-max for patch-size and date columns, per-advisory min-max
    for path and lexical similarity, everything else untouched."""

    universal_min: np.ndarray | None = None
    universal_max: np.ndarray | None = None
    universal_columns: tuple = UNIVERSAL_COLUMNS
    per_advisory_columns: tuple = PER_ADVISORY_COLUMNS
    identity_columns: tuple = field(default=IDENTITY_COLUMNS)

    @property
    def fitted(self) -> bool:
        return self.universal_min is not None

    def fit_universal(self, matrix) -> "ScalingScheme":
        cols = np.asarray(matrix, dtype=float)[:, self.universal_columns]
        self.universal_min = cols.min(axis=0)
        self.universal_max = cols.max(axis=0)
        return self

    def transform(self, matrix) -> np.ndarray:
        """Scale one advisory's candidate matrix."""
        if not self.fitted:
            raise UnfittedScaler("universal columns need fit_universal() first")
        X = np.array(matrix, dtype=float, copy=True)
        for j, col in enumerate(self.universal_columns):
            X[:, col] = minmax(X[:, col], self.universal_min[j], self.universal_max[j])
        for col in self.per_advisory_columns:
            X[:, col] = minmax(X[:, col], X[:, col].min(), X[:, col].max())
        return X

    def to_dict(self) -> dict:
        if not self.fitted:
            raise UnfittedScaler("nothing to serialise")
        return {
            "universal_columns": [FEATURE_NAMES[c] for c in self.universal_columns],
            "min": self.universal_min.tolist(),
            "max": self.universal_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingScheme":
        cols = tuple(COL[n] for n in d["universal_columns"])
        if cols != UNIVERSAL_COLUMNS:
            raise ValueError("unexpected universal column set")
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


def write_feature_table(fh, commit_ids, matrix, delimiter="\t"):
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(("commit_id",) + FEATURE_NAMES)
    for cid, row in zip(commit_ids, matrix):
        writer.writerow([cid] + [repr(float(v)) for v in row])
