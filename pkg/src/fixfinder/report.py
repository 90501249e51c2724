"""Delimited tables and figures written next to a run report."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# PNG metadata without a software/version stamp keeps files reproducible.
_PNG_META = {"Software": None}


def _write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    return "" if v is None else repr(float(v)) if isinstance(v, float) else v


def write_evaluation_report(report, out_dir) -> list[Path]:
    """metrics.tsv, positions.tsv, recall_at_k.png and best_fix_position.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    header = ["split", "part", "precision", "avg_position", "recall_at_5", "recall_at_10",
              "recall_at_20", "selection_recall", "n_advisories", "n_ranked"]
    rows = []
    for s in report.splits:
        for part in ("test", "train"):
            m = s[part]
            rows.append([s["split"], part, _fmt(m["precision"]), _fmt(m["avg_position"]),
                         *(_fmt(m["recall_at"][k]) for k in ("5", "10", "20")),
                         _fmt(m["selection_recall"]), m["n_advisories"], m["n_ranked"]])
    _write_tsv(out / "metrics.tsv", header, rows)
    written.append(out / "metrics.tsv")

    pos_rows = [[s["split"], adv, "" if pos is None else pos]
                for s in report.splits for adv, pos in sorted(s["test_positions"].items())]
    _write_tsv(out / "positions.tsv", ["split", "advisory_id", "best_fix_position"], pos_rows)
    written.append(out / "positions.tsv")

    ks = [5, 10, 20]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for part, style in (("test", "o-"), ("train", "s--")):
        agg = getattr(report, part)
        means = [agg[f"recall_at_{k}"]["mean"] or 0.0 for k in ks]
        stds = [agg[f"recall_at_{k}"]["std"] or 0.0 for k in ks]
        ax.errorbar(ks, means, yerr=stds, fmt=style, capsize=3, label=part)
    ax.set_xlabel("k")
    ax.set_ylabel("recall at k (%)")
    ax.set_ylim(0, 105)
    ax.set_xticks(ks)
    ax.legend()
    ax.set_title(f"{report.kind}: recall at k over {report.n_splits} splits")
    fig.tight_layout()
    fig.savefig(out / "recall_at_k.png", metadata=_PNG_META)
    plt.close(fig)
    written.append(out / "recall_at_k.png")

    positions = [p for s in report.splits for p in s["test_positions"].values() if p is not None]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if positions:
        top = max(positions)
        ax.hist(positions, bins=range(1, top + 2), align="left", rwidth=0.8)
    ax.set_xlabel("position of best-ranked known fix (test)")
    ax.set_ylabel("advisories")
    fig.tight_layout()
    fig.savefig(out / "best_fix_position.png", metadata=_PNG_META)
    plt.close(fig)
    written.append(out / "best_fix_position.png")
    return written


def write_coefficient_report(pairs, out_dir) -> list[Path]:
    """coefficients.tsv and a horizontal bar chart, largest |weight| on top."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "coefficients.tsv", ["feature", "weight"], [[n, repr(w)] for n, w in pairs])

    names = [n for n, _ in pairs][::-1]
    weights = [w for _, w in pairs][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.28 * len(pairs) + 1))
    ax.barh(names, weights, color=["tab:blue" if w >= 0 else "tab:red" for w in weights])
    ax.axvline(0, color="black", linewidth=0.6)
    ax.set_xlabel("weight")
    ax.tick_params(axis="y", labelsize=7)
    fig.tight_layout()
    fig.savefig(out / "coefficients.png", metadata=_PNG_META)
    plt.close(fig)
    return [out / "coefficients.tsv", out / "coefficients.png"]
