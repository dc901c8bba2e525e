"""Command-line entry point: ``sktree {ingest,gram,train,evaluate,synth,report}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cache import BlockCache
from .estimators import PrecomputedSVC, TreeKernel
from .evaluation import ExperimentConfig, cross_validate
from .ingest import (FeaturizationConfig, LabeledDataset, ParseReport, build_process_trees,
                     dataset_stats, open_events, parse_events, read_labels)
from .synthetic import generate_synthetic
from .tree_kernel import GramMatrix, psd_repair

logger = logging.getLogger("sktree")


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _featurization(args) -> FeaturizationConfig:
    doc = dict(_load_config(args.config).get("featurization", {}))
    for flag, key in (("window_seconds", "window_seconds"), ("min_events", "min_events"),
                      ("max_events", "max_events"), ("pool", "pool")):
        value = getattr(args, flag, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "no_normalize", False):
        doc["normalize"] = False
    return FeaturizationConfig.from_dict(doc)


def _experiment(args) -> ExperimentConfig:
    doc = dict(_load_config(args.config).get("experiment", {}))
    for flag in ("folds", "inner_folds", "seed", "base", "refinement", "estimator", "tol"):
        value = getattr(args, flag, None)
        if value is not None:
            doc[flag] = value
    for flag in ("sigma_grid", "bandwidth_grid", "C_grid"):
        value = getattr(args, flag, None)
        if value is not None:
            doc[flag] = _floats(value)
    if getattr(args, "no_clamp", False):
        doc["clamp_negative"] = False
    return ExperimentConfig(**doc)


def _cache(args):
    if getattr(args, "no_cache", False):
        return None
    return BlockCache(args.cache_dir)


def _load_dataset(path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise CliError(f"dataset not found: {path}")
    ds = LabeledDataset.load(path)
    if len(ds) == 0:
        raise CliError("empty dataset")
    return ds


def _ingest(events_paths, labels_path, config: FeaturizationConfig):
    report = ParseReport()
    events = []
    for path in events_paths:
        events.extend(parse_events(open_events(path), report))
    malicious = set()
    if labels_path:
        with open(labels_path) as fh:
            malicious = read_labels(fh)
    stats: dict = {}
    ds = build_process_trees(events, malicious, config, stats=stats)
    summary = {"lines": report.n_lines, "events": report.n_events,
               "missing_fields": report.missing_fields,
               "malformed": [{"line": n, "error": msg} for n, msg in report.malformed],
               **stats, **dataset_stats(ds)}
    return ds, summary


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    ds, summary = _ingest(args.events, args.labels, _featurization(args))
    ds.save(args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_synth(args):
    ds = generate_synthetic(args.n, seed=args.seed, profile=args.profile,
                            config=_featurization(args))
    ds.save(args.out)
    print(json.dumps({"out": str(args.out), "profile": args.profile, **dataset_stats(ds)},
                     indent=2, sort_keys=True))


def _kernel_from_args(args, sigma) -> TreeKernel:
    bandwidth = args.bandwidth if args.bandwidth == "median" else float(args.bandwidth)
    return TreeKernel(sigma=sigma, base=args.base, bandwidth=bandwidth,
                      refinement=args.refinement, estimator=args.estimator,
                      clamp_negative=not args.no_clamp, cache=_cache(args))


def cmd_gram(args):
    ds = _load_dataset(args.dataset)
    t0 = time.perf_counter()
    kernel = _kernel_from_args(args, args.sigma).fit(ds.trees)
    values = kernel.gram()
    shift = 0.0
    if args.psd_repair:
        values, shift = psd_repair(values)
    gm = GramMatrix(values, args.sigma, kernel.config_, shift, kernel.table_.ids)
    gm.save(args.out)
    print(json.dumps({"out": str(args.out), "shape": list(values.shape),
                      "bandwidth": kernel.bandwidth_, "psd_shift": shift,
                      "cache_hits": kernel.table_.cache_hits,
                      "seconds": time.perf_counter() - t0}, indent=2, sort_keys=True))


def cmd_train(args):
    ds = _load_dataset(args.dataset)
    kernel = _kernel_from_args(args, args.sigma).fit(ds.trees)
    svc = PrecomputedSVC(C=args.C, tol=args.tol).fit(kernel.gram(), ds.labels)
    model = svc.model_
    model.tree_ids = list(kernel.table_.ids)
    model.config_hash = kernel.config_.config_hash()
    doc = model.to_dict()
    doc["kernel"] = {"sigma": args.sigma, **kernel.config_.to_dict()}
    doc["psd_shift"] = svc.psd_shift_
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
    print(json.dumps({"out": str(args.out), "n_support": int(len(model.support_indices)),
                      "bias": model.bias}, indent=2))


def _write_roc(report, roc_dir):
    roc_dir = Path(roc_dir)
    roc_dir.mkdir(parents=True, exist_ok=True)
    for f, points in enumerate(report["roc"] if isinstance(report, dict) else report.roc):
        with open(roc_dir / f"roc_fold{f}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            writer.writerows(points)


def cmd_evaluate(args):
    if args.events:
        ds, _ = _ingest(args.events, args.labels, _featurization(args))
        if len(ds) == 0:
            raise CliError("empty dataset")
    else:
        ds = _load_dataset(args.dataset)
    config = _experiment(args)
    report = cross_validate(ds, config, cache=_cache(args))
    report.dataset.update(dataset_stats(ds))
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    timing_path = Path(str(args.out) + ".timings.json")
    timing_path.write_text(json.dumps(report.timings, indent=2, sort_keys=True))
    roc_path = Path(str(args.out) + ".roc.json")
    roc_path.write_text(json.dumps(report.roc))
    if args.roc_dir:
        _write_roc(report, args.roc_dir)
    print(json.dumps({"out": str(args.out), "fold_auroc": report.fold_auroc,
                      "mean_auroc": report.mean, "std_auroc": report.std}, indent=2))


def cmd_report(args):
    with open(args.report) as fh:
        doc = json.load(fh)
    lines = [f"AUROC {doc['mean_auroc']:.4f} +/- {doc['std_auroc']:.4f} "
             f"over {len(doc['fold_auroc'])} folds (config {doc['config_hash']})"]
    for c, a in zip(doc["chosen"], doc["fold_auroc"]):
        lines.append(f"  fold {c['fold']}: {a:.4f}  sigma={c['sigma']:g} C={c['C']:g} "
                     f"bandwidth={c['bandwidth']:.4g}")
    print("\n".join(lines))
    if args.roc_dir:
        roc_path = Path(args.report + ".roc.json")
        if not roc_path.exists():
            raise CliError(f"ROC points not found: {roc_path}")
        _write_roc({"roc": json.loads(roc_path.read_text())}, args.roc_dir)


# ---------------------------------------------------------------------------

def _add_kernel_flags(p):
    p.add_argument("--base", choices=("rbf", "linear"), default="rbf")
    p.add_argument("--bandwidth", default="median", help="RBF bandwidth or 'median'")
    p.add_argument("--refinement", type=int, default=2)
    p.add_argument("--estimator", choices=("unbiased", "biased", "algorithm1-literal"),
                   default="unbiased")
    p.add_argument("--no-clamp", action="store_true", help="keep negative MMD^2 estimates")


def _add_cache_flags(p):
    p.add_argument("--cache-dir", default=None,
                   help="block cache directory (default $SKTREE_CACHE_DIR or ~/.cache/sktree)")
    p.add_argument("--no-cache", action="store_true")


def _add_featurization_flags(p):
    p.add_argument("--config", help="JSON config with 'featurization'/'experiment' sections")
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--min-events", dest="min_events", type=int)
    p.add_argument("--max-events", dest="max_events", type=int)
    p.add_argument("--pool", choices=("branches", "nodes"))
    p.add_argument("--no-normalize", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sktree", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="event logs -> dataset cache (JSON lines)")
    p.add_argument("events", nargs="+", help="NDJSON event files (.gz ok, '-' for stdin)")
    p.add_argument("--labels", help="file with one malicious root process id per line")
    p.add_argument("--out", default="dataset.jsonl")
    _add_featurization_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n", type=int, default=100, help="trees per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("separable", "null"), default="separable")
    p.add_argument("--out", default="dataset.jsonl")
    _add_featurization_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gram", help="tree-kernel Gram matrix of a dataset")
    p.add_argument("--dataset", default="dataset.jsonl")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--psd-repair", action="store_true")
    p.add_argument("--out", default="gram")
    _add_kernel_flags(p)
    _add_cache_flags(p)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("train", help="fit an SVM on a dataset and save the model")
    p.add_argument("--dataset", default="dataset.jsonl")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out", default="model.json")
    _add_kernel_flags(p)
    _add_cache_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="nested cross-validation with grid search")
    p.add_argument("--dataset", default="dataset.jsonl")
    p.add_argument("--events", nargs="+", help="ingest these event logs instead of --dataset")
    p.add_argument("--labels")
    p.add_argument("--folds", type=int)
    p.add_argument("--inner-folds", dest="inner_folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma-grid", dest="sigma_grid")
    p.add_argument("--bandwidth-grid", dest="bandwidth_grid",
                   help="multiples of the median heuristic, comma separated")
    p.add_argument("--C-grid", dest="C_grid")
    p.add_argument("--base", choices=("rbf", "linear"))
    p.add_argument("--refinement", type=int)
    p.add_argument("--estimator", choices=("unbiased", "biased", "algorithm1-literal"))
    p.add_argument("--tol", type=float)
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--out", default="report.json")
    p.add_argument("--roc-dir", help="write roc_fold<k>.csv files here")
    _add_featurization_flags(p)
    _add_cache_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize a report and export ROC CSVs")
    p.add_argument("report", nargs="?", default="report.json")
    p.add_argument("--roc-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, OSError, KeyError, RuntimeError) as exc:
        message = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        sys.stderr.write(json.dumps({"error": message, "type": type(exc).__name__}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
