"""Command-line entry point: rank, train, evaluate, baseline, ingest, synth.

Exit codes: 0 success, 2 invalid configuration or usage, 3 pipeline error
(the message names the module that failed).
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .advisory import FixtureFetcher, HttpFetcher, build_advisory_record, load_raw_advisory
from .evaluator import (BaselineItem, fit_scaler, format_baseline_table, format_metrics_table,
                        jimenez_baseline, scale_items, split_eval)
from .features import FEATURE_NAMES, PipelineConfig
from .filtering import FilterConfig
from .pipeline import RepoContext, Workspace, candidate_features, read_dataset, select_candidates
from .ranker import (LogisticModel, NoFixInCandidates, build_training_set, coefficient_table, dump_model,
                     load_model, rank, train)
from .repominer import GitRepo
from .store import CommitStore

logger = logging.getLogger("fixfinder")

REPORT_SCHEMA_VERSION = 1
DEFAULT_SEED = 0
DEFAULT_TOP = 20

EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3

_MODEL_KEYS = {"kind", "l2", "learning_rate", "epochs", "tol", "k", "p"}
_RUN_KEYS = {"top", "seed", "format", "n_splits", "ratio", "store"}
_FILTER_KEYS = {f.name for f in dataclasses.fields(FilterConfig)}
_PIPELINE_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)}
_MODULE_LABELS = {"filtering": "filter"}


class ConfigError(Exception):
    pass


# -- config ----------------------------------------------------------------


def load_config(path) -> dict:
    """Flat JSON object whose keys override built-in defaults."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(doc) - _MODEL_KEYS - _RUN_KEYS - _FILTER_KEYS - _PIPELINE_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in doc.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r}: nested objects are not allowed")
    return doc


def _build(cls, keys, conf):
    try:
        return cls(**{k: v for k, v in conf.items() if k in keys})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def _setting(args, conf, name, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return conf.get(name, default)


def _hyper(conf, kind):
    keys = {"logistic": ("l2", "learning_rate", "epochs", "tol"), "knn": ("k", "p")}[kind]
    return {k: conf[k] for k in keys if k in conf}


def default_model_path():
    return resources.files("fixfinder") / "data" / "default_model.json"


def default_store_dir() -> Path:
    env = os.environ.get("FIXFINDER_STORE")
    if env:
        return Path(env)
    cache = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(cache) / "fixfinder"


def _open_store(args, conf):
    if args.no_cache:
        return None
    return CommitStore(_setting(args, conf, "store", None) or default_store_dir())


def _repo_dir(value) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise ConfigError(f"repository path does not exist: {value}")
    return path


def _dataset(args):
    path = Path(args.dataset)
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    entries = read_dataset(path)
    if not entries:
        raise ConfigError(f"dataset {path} is empty")
    return entries


def _workspace(args, conf, store):
    return Workspace.for_dataset(
        args.dataset, store=store,
        cfg=_build(PipelineConfig, _PIPELINE_KEYS, conf),
        filter_cfg=_build(FilterConfig, _FILTER_KEYS, conf),
        advisory_dir=args.advisory_dir, fixtures_dir=args.references,
    )


# -- output ----------------------------------------------------------------


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(args, doc, table: str):
    if args.format == "json":
        sys.stdout.write(_dump_json(doc))
    else:
        sys.stdout.write(table.rstrip("\n") + "\n")


def _report(command, **body) -> dict:
    return {"schema_version": REPORT_SCHEMA_VERSION, "command": command, **body}


# -- commands --------------------------------------------------------------


def _load_advisory(args, cfg: PipelineConfig):
    if args.advisory_file:
        raw = load_raw_advisory(args.advisory_file)
    elif args.advisory_dir and (Path(args.advisory_dir) / f"{args.cve}.json").is_file():
        raw = load_raw_advisory(Path(args.advisory_dir) / f"{args.cve}.json")
    else:
        raw = load_raw_advisory(cve_id=args.cve)
    fetcher = None
    if args.references:
        fetcher = FixtureFetcher(args.references)
    elif args.fetch_references:
        fetcher = HttpFetcher()
    return build_advisory_record(raw, fetcher, cfg.top_k_reference_words)


def cmd_rank(args, conf) -> int:
    top = int(_setting(args, conf, "top", DEFAULT_TOP))
    if top < 1:
        raise ConfigError("--top must be at least 1")
    cfg = _build(PipelineConfig, _PIPELINE_KEYS, conf)
    filter_cfg = _build(FilterConfig, _FILTER_KEYS, conf)
    repo_dir = _repo_dir(args.repo)
    model_path = args.model or default_model_path()
    model, scaler = load_model(model_path)
    if scaler is None:
        raise ValueError(f"model {model_path} carries no scaling statistics")

    advisory = _load_advisory(args, cfg)
    ctx = RepoContext(GitRepo(repo_dir), _open_store(args, conf), cfg)
    cands, records, X = candidate_features(advisory, ctx, filter_cfg)
    entries = []
    if records:
        ranked = rank(model, advisory.cve_id, [r.id for r in records], scaler.transform(X))
        by_id = {r.id: r for r in records}
        for pos, e in enumerate(ranked.entries[:top], 1):
            rec = by_id[e.commit_id]
            item = {
                "rank": pos,
                "commit_id": e.commit_id,
                "probability": e.probability,
                "timestamp": rec.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "message": rec.message.splitlines()[0] if rec.message else "",
                "features": e.breakdown(),
            }
            if isinstance(model, LogisticModel):
                item["contributions"] = dict(zip(FEATURE_NAMES, map(float, model.contributions(e.features))))
            entries.append(item)

    doc = _report(
        "rank",
        advisory={
            "cve_id": advisory.cve_id,
            "published": advisory.published.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "versions": advisory.versions,
            "paths": advisory.paths,
            "code_tokens": advisory.code_tokens,
            "unreachable_references": sorted(advisory.unreachable_references),
        },
        candidates=cands.stats,
        model={"kind": model.kind},
        ranking=entries,
    )
    _emit(args, doc, _rank_table(doc))
    return EXIT_OK


def _rank_table(doc) -> str:
    adv = doc["advisory"]
    st = doc["candidates"]
    lines = [
        f"{adv['cve_id']}  published {adv['published']}",
        f"candidates: {st['after_extension_filter']} kept of {st['after_time_window']} in window"
        f" ({st['total_commits']} commits in repository)",
        "",
    ]
    if not doc["ranking"]:
        lines.append("no candidate commits")
        return "\n".join(lines)
    lines.append(f"{'rank':>4}  {'commit':<12}  {'probability':>11}  {'date':<10}  message")
    for e in doc["ranking"]:
        lines.append(f"{e['rank']:>4}  {e['commit_id'][:12]:<12}  {e['probability']:>11.4f}  "
                     f"{e['timestamp'][:10]:<10}  {e['message'][:60]}")
    lines += ["", "per-feature breakdown (non-zero scaled values; contribution = weight * value)"]
    for e in doc["ranking"]:
        lines.append(f"#{e['rank']} {e['commit_id'][:12]}  p={e['probability']:.4f}")
        contrib = e.get("contributions", {})
        nonzero = [(n, v) for n, v in e["features"].items() if v != 0.0]
        nonzero.sort(key=lambda nv: (-abs(contrib.get(nv[0], nv[1])), nv[0]))
        for name, value in nonzero:
            extra = f"  {contrib[name]:+.4f}" if name in contrib else ""
            lines.append(f"    {name:<26} {value:8.4f}{extra}")
    return "\n".join(lines)


def _prepare_all(ws, entries):
    items = []
    for entry in entries:
        _, _, item = ws.prepare(entry)
        items.append(item)
    return items


def cmd_train(args, conf) -> int:
    kind = _setting(args, conf, "kind", "logistic")
    seed = int(_setting(args, conf, "seed", DEFAULT_SEED))
    entries = _dataset(args)
    ws = _workspace(args, conf, _open_store(args, conf))
    items = _prepare_all(ws, entries)
    scaler = fit_scaler(items)
    ts = build_training_set(scale_items(items, scaler), seed=seed)
    if len(ts) == 0:
        raise NoFixInCandidates("no advisory has a known fix among its candidates")
    model = train(ts, kind, **_hyper(conf, kind))
    out = Path(args.model or "model.json")
    dump_model(model, out, scaler)

    doc = _report("train", kind=kind, seed=seed, model_file=out.name,
                  n_advisories=len(items), training_rows=len(ts), skipped=ts.skipped)
    if kind == "logistic":
        pairs = coefficient_table(model)
        doc["coefficients"] = [{"feature": n, "weight": w} for n, w in pairs]
        doc["bias"] = model.bias
        if args.report_dir:
            from .report import write_coefficient_report

            write_coefficient_report(pairs, args.report_dir)
    _emit(args, doc, _train_table(doc))
    return EXIT_OK


def _train_table(doc) -> str:
    lines = [f"trained {doc['kind']} on {doc['training_rows']} rows from "
             f"{doc['n_advisories'] - len(doc['skipped'])} advisories -> {doc['model_file']}"]
    if doc["skipped"]:
        lines.append(f"skipped (no known fix among candidates): {', '.join(doc['skipped'])}")
    if "coefficients" in doc:
        lines += ["", f"{'feature':<26}  {'weight':>9}"]
        lines += [f"{c['feature']:<26}  {c['weight']:>9.4f}" for c in doc["coefficients"]]
        lines.append(f"{'(bias)':<26}  {doc['bias']:>9.4f}")
    return "\n".join(lines)


def cmd_evaluate(args, conf) -> int:
    kind = _setting(args, conf, "kind", "logistic")
    seed = int(_setting(args, conf, "seed", DEFAULT_SEED))
    n_splits = int(_setting(args, conf, "n_splits", 10))
    ratio = float(_setting(args, conf, "ratio", 0.8))
    if n_splits < 1:
        raise ConfigError("n_splits must be at least 1")
    if not 0.0 < ratio < 1.0:
        raise ConfigError("ratio must be strictly between 0 and 1")
    entries = _dataset(args)
    ws = _workspace(args, conf, _open_store(args, conf))
    items = _prepare_all(ws, entries)
    logger.info("ingest: %s", ws.ingest_summary())
    report = split_eval(items, kind, n_splits=n_splits, ratio=ratio, seed=seed, hyper=_hyper(conf, kind))
    advisories = [dict(it.stats, advisory_id=it.advisory_id) for it in items]
    doc = _report("evaluate", avg_position_definition="mean 1-based rank of the best-ranked known fix",
                  advisories=advisories, **report.to_dict())
    if args.report_dir:
        from .report import write_evaluation_report

        write_evaluation_report(report, args.report_dir)
    _emit(args, doc, format_metrics_table(report))
    return EXIT_OK


def cmd_baseline(args, conf) -> int:
    entries = _dataset(args)
    ws = _workspace(args, conf, _open_store(args, conf))
    items = []
    for entry in entries:
        advisory = ws.advisory(entry.cve_id)
        ctx = ws.context(entry.repo)
        fixes = {ctx.repo.resolve(f) for f in entry.fixes}
        items.append(BaselineItem(advisory, fixes, {f: ctx.record(f).message for f in fixes}))
    doc = _report("baseline", **jimenez_baseline(items))
    _emit(args, doc, format_baseline_table(doc))
    return EXIT_OK


def cmd_ingest(args, conf) -> int:
    if not args.dataset and not args.repo:
        raise ConfigError("ingest needs --dataset or --repo")
    store = _open_store(args, conf)
    if args.dataset:
        entries = _dataset(args)
        ws = _workspace(args, conf, store)
        for entry in entries:
            advisory = ws.advisory(entry.cve_id)
            ctx = ws.context(entry.repo)
            cands = select_candidates(advisory, ctx, ws.filter_cfg)
            for cid in cands.commit_ids + [ctx.repo.resolve(f) for f in entry.fixes]:
                ctx.record(cid)
    else:
        ws = Workspace(advisory_dir=Path("."), store=store, cfg=_build(PipelineConfig, _PIPELINE_KEYS, conf))
        ctx = ws.context(_repo_dir(args.repo))
        for cid, _ in ctx.commits:
            ctx.record(cid)
    summary = ws.ingest_summary()
    doc = _report("ingest", **summary)
    table = "\n".join([
        f"commit lookups     {summary['commit_lookups']}",
        f"distinct commits   {summary['distinct_commits']}",
        f"commits mined      {summary['commits_mined']}",
        f"cache hits         {summary['cache_hits']} ({summary['cache_hit_pct']:.2f}%)",
        f"dedup ratio        {summary['dedup_ratio']:.4f}",
    ])
    _emit(args, doc, table)
    return EXIT_OK


def cmd_synth(args, conf) -> int:
    from .synth import generate_corpus

    seed = int(_setting(args, conf, "seed", DEFAULT_SEED))
    planted = generate_corpus(args.out, n_advisories=args.advisories, n_repos=args.repos, seed=seed)
    doc = _report("synth", seed=seed, advisories=[
        {"cve_id": p.cve_id, "repo": p.repo, "signal": p.signal, "fix_commit": p.fix_id} for p in planted])
    table = "\n".join(f"{p.cve_id}  {p.repo:<12} {p.signal:<14} {p.fix_id}" for p in planted)
    _emit(args, doc, table)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file overriding defaults")
    common.add_argument("--format", choices=("table", "json"), default=None)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("-v", "--verbose", action="count", default=0)

    cache = argparse.ArgumentParser(add_help=False)
    cache.add_argument("--store", help="commit cache directory (default: $FIXFINDER_STORE or ~/.cache/fixfinder)")
    cache.add_argument("--no-cache", action="store_true", help="do not read or write the commit cache")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", required=True, help="TSV: cve_id, repository path, comma-separated fix ids")
    data.add_argument("--advisory-dir", help="directory of <CVE>.json files (default: <dataset dir>/advisories)")
    data.add_argument("--references", help="directory of reference page fixtures (default: <dataset dir>/references)")

    parser = argparse.ArgumentParser(prog="fixfinder", description="Rank candidate fix commits for vulnerability advisories.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", parents=[common, cache], help="rank candidate commits for one advisory")
    p.add_argument("--repo", required=True, help="path to a local clone")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cve", help="CVE id, read from --advisory-dir or fetched from NVD")
    src.add_argument("--advisory-file", help="advisory JSON file")
    p.add_argument("--advisory-dir", help="directory of <CVE>.json files consulted for --cve")
    refs = p.add_mutually_exclusive_group()
    refs.add_argument("--references", help="directory of reference page fixtures")
    refs.add_argument("--fetch-references", action="store_true", help="download reference pages")
    p.add_argument("--model", help="model JSON (default: the shipped model)")
    p.add_argument("--top", type=int, default=None, help=f"entries to print (default {DEFAULT_TOP})")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("train", parents=[common, cache, data], help="train a model on a labelled dataset")
    p.add_argument("--model", help="output model file (default model.json)")
    p.add_argument("--kind", choices=("logistic", "knn"), default=None)
    p.add_argument("--report-dir", help="write coefficients.tsv and coefficients.png here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, cache, data], help="repeated train/test split evaluation")
    p.add_argument("--kind", choices=("logistic", "knn"), default=None)
    p.add_argument("--n-splits", dest="n_splits", type=int, default=None)
    p.add_argument("--ratio", type=float, default=None, help="training share per split (default 0.8)")
    p.add_argument("--report-dir", help="write metrics.tsv, positions.tsv and figures here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", parents=[common, cache, data], help="CVE-id / NVD-reference baseline")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ingest", parents=[common, cache], help="populate the commit cache")
    p.add_argument("--dataset", help="ingest candidates of every advisory in this dataset")
    p.add_argument("--repo", help="ingest every commit of this repository")
    p.add_argument("--advisory-dir")
    p.add_argument("--references")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus with planted fixes")
    p.add_argument("--out", required=True)
    p.add_argument("--advisories", type=int, default=20)
    p.add_argument("--repos", type=int, default=5)
    p.set_defaults(func=cmd_synth)
    return parser


def failing_module(exc: BaseException) -> str:
    """Name of the deepest fixfinder module in the exception's traceback."""
    name = None
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("fixfinder.") and mod != "fixfinder.cli":
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    if name is None:
        mod = type(exc).__module__
        name = mod.split(".", 1)[1] if mod.startswith("fixfinder.") else "cli"
    return _MODULE_LABELS.get(name, name)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        conf = load_config(args.config)
        args.format = _setting(args, conf, "format", "table")
        if args.format not in ("table", "json"):
            raise ConfigError(f"unknown format {args.format!r}")
        return args.func(args, conf)
    except ConfigError as exc:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        print(f"fixfinder {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyboardInterrupt, BrokenPipeError):
        raise
    except Exception as exc:  # noqa: BLE001 - every pipeline failure maps to exit 3
        logger.debug("pipeline failure", exc_info=True)
        print(f"fixfinder {args.command}: error in {failing_module(exc)}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
