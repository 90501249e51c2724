"""Ranking metrics, repeated train/test splits and the reference-following baseline.

"avg. position" is the mean 1-based rank of the best-ranked known fix, over
advisories whose candidate set contains at least one fix. Precision and
recall@k use the same denominator; selection recall counts every advisory.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import ScalingScheme
from .ranker import build_training_set, rank, train

logger = logging.getLogger(__name__)

RECALL_KS = (5, 10, 20)


class MissingTruth(KeyError):
    pass


class TooFewAdvisories(ValueError):
    pass


@dataclass
class Metrics:
    precision: float
    avg_position: float | None
    recall_at: dict[int, float]
    selection_recall: float
    n_advisories: int
    n_ranked: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        return d


def compute_metrics(rankings, truth, ks=RECALL_KS) -> Metrics:
    positions = []
    for rl in rankings:
        if rl.advisory_id not in truth:
            raise MissingTruth(rl.advisory_id)
        pos = rl.position(truth[rl.advisory_id])
        if pos is not None:
            positions.append(pos)
    n_all = len(rankings)
    n = len(positions)
    pct = (lambda c: 100.0 * c / n) if n else (lambda c: 0.0)
    return Metrics(
        precision=pct(sum(p == 1 for p in positions)),
        avg_position=float(np.mean(positions)) if n else None,
        recall_at={k: pct(sum(p <= k for p in positions)) for k in ks},
        selection_recall=100.0 * n / n_all if n_all else 0.0,
        n_advisories=n_all,
        n_ranked=n,
    )


def _aggregate(metrics: list[Metrics]) -> dict:
    """Mean and population standard deviation of every metric across splits."""
    def stats(values):
        values = [v for v in values if v is not None]
        if not values:
            return {"mean": None, "std": None}
        return {"mean": float(np.mean(values)), "std": float(np.std(values))}

    out = {
        "precision": stats([m.precision for m in metrics]),
        "avg_position": stats([m.avg_position for m in metrics]),
        "selection_recall": stats([m.selection_recall for m in metrics]),
    }
    for k in metrics[0].recall_at:
        out[f"recall_at_{k}"] = stats([m.recall_at[k] for m in metrics])
    return out


@dataclass
class SplitReport:
    kind: str
    seed: int
    n_splits: int
    ratio: float
    splits: list[dict] = field(default_factory=list)
    test: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def scale_items(items, scaler: ScalingScheme):
    """Copies of prepared advisories with scaled feature matrices."""
    from .pipeline import PreparedAdvisory

    return [
        PreparedAdvisory(it.advisory_id, it.commit_ids,
                         scaler.transform(it.features) if len(it.commit_ids) else it.features,
                         it.fixes, it.stats)
        for it in items
    ]


def fit_scaler(items) -> ScalingScheme:
    rows = [it.features for it in items if len(it.commit_ids)]
    if not rows:
        raise TooFewAdvisories("no candidate rows to fit the scaler on")
    return ScalingScheme().fit_universal(np.vstack(rows))


def rank_items(model, items):
    return [rank(model, it.advisory_id, it.commit_ids, it.features) for it in items]


def split_eval(dataset, kind="logistic", n_splits=10, ratio=0.8, seed=0, hyper=None) -> SplitReport:
    """Repeated random train/test splits by advisory."""
    n = len(dataset)
    if n < 5:
        raise TooFewAdvisories(f"need at least 5 advisories, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be strictly between 0 and 1")
    n_train = int(round(ratio * n))
    if not 0 < n_train < n:
        raise ValueError(f"ratio {ratio} leaves an empty train or test set for {n} advisories")

    rng = np.random.default_rng(seed)
    report = SplitReport(kind, seed, n_splits, ratio)
    test_metrics, train_metrics = [], []
    for split in range(n_splits):
        perm = rng.permutation(n)
        sample_seed = int(rng.integers(2**31))
        train_items = [dataset[i] for i in sorted(perm[:n_train])]
        test_items = [dataset[i] for i in sorted(perm[n_train:])]

        scaler = fit_scaler(train_items)
        train_scaled = scale_items(train_items, scaler)
        test_scaled = scale_items(test_items, scaler)
        ts = build_training_set(train_scaled, seed=sample_seed)
        model = train(ts, kind, **(hyper or {}))

        truth = {it.advisory_id: it.fixes for it in dataset}
        test_rankings = rank_items(model, test_scaled)
        m_test = compute_metrics(test_rankings, truth)
        m_train = compute_metrics(rank_items(model, train_scaled), truth)
        test_metrics.append(m_test)
        train_metrics.append(m_train)
        report.splits.append({
            "split": split,
            "test_advisories": [it.advisory_id for it in test_items],
            "training_rows": len(ts),
            "test_positions": {rl.advisory_id: rl.position(truth[rl.advisory_id]) for rl in test_rankings},
            "test": m_test.to_dict(),
            "train": m_train.to_dict(),
        })
    report.test = _aggregate(test_metrics)
    report.train = _aggregate(train_metrics)
    return report


@dataclass
class BaselineItem:
    advisory: object
    fixes: set[str]
    fix_messages: dict[str, str]


def jimenez_baseline(items) -> dict:
    """CVE id in a fix commit message, NVD reference to a fix commit, or either."""
    methods = {"cve_id_in_message": [], "referred_by_nvd": [], "combined": []}
    n_fix_commits = 0
    found_commits = {name: 0 for name in methods}
    per_advisory = []
    for item in items:
        adv = item.advisory
        by_msg = {c for c in item.fixes if adv.cve_id.lower() in item.fix_messages.get(c, "").lower()}
        by_nvd = {c for c in item.fixes if c[:8].lower() in adv.nvd_commit_prefixes}
        both = by_msg | by_nvd
        n_fix_commits += len(item.fixes)
        for name, found in (("cve_id_in_message", by_msg), ("referred_by_nvd", by_nvd), ("combined", both)):
            found_commits[name] += len(found)
            methods[name].append(bool(found))
        per_advisory.append({
            "advisory_id": adv.cve_id,
            "cve_id_in_message": bool(by_msg),
            "referred_by_nvd": bool(by_nvd),
        })
    n = len(per_advisory)
    report = {"n_advisories": n, "n_fix_commits": n_fix_commits, "methods": {}, "advisories": per_advisory}
    for name, flags in methods.items():
        report["methods"][name] = {
            "advisories_found": sum(flags),
            "advisories_found_pct": 100.0 * sum(flags) / n if n else 0.0,
            "fix_commits_found_pct": 100.0 * found_commits[name] / n_fix_commits if n_fix_commits else 0.0,
        }
    return report


def format_metrics_table(report: SplitReport) -> str:
    """Aligned text table: one row per data split, ``mean (std)`` cells."""
    cols = ["precision", "avg_position", "recall_at_5", "recall_at_10", "recall_at_20", "selection_recall"]
    heads = ["split", "model", "precision", "avg. pos.", "recall at 5", "recall at 10", "recall at 20", "sel. recall"]
    rows = []
    for part in ("test", "train"):
        agg = getattr(report, part)
        cells = []
        for c in cols:
            s = agg.get(c, {"mean": None})
            cells.append("-" if s["mean"] is None else f"{s['mean']:.2f} ({s['std']:.2f})")
        rows.append([part, report.kind] + cells)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(heads)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*heads), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    lines.append("avg. pos. = mean rank of the best-ranked known fix; std is the population std over splits")
    return "\n".join(lines)


def format_baseline_table(report: dict) -> str:
    heads = ("method", "known fix commits found (%)", "a fix found for CVEs (%)")
    rows = [(name, f"{m['fix_commits_found_pct']:.2f}", f"{m['advisories_found_pct']:.2f}")
            for name, m in report["methods"].items()]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(heads)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*heads), fmt.format(*("-" * w for w in widths))] + [fmt.format(*r) for r in rows])
