"""AUROC, stratified folds and nested cross-validated grid search."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .estimators import PrecomputedSVC, TreeKernel
from .ingest import LabeledDataset
from .svm import ConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_SIGMAS = (1e-2, 1e-1, 1.0, 10.0)
DEFAULT_BANDWIDTH_SCALES = (0.25, 1.0, 4.0)
DEFAULT_CS = (0.1, 1.0, 10.0, 100.0)


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes present")
    ranks = rankdata(scores)
    u = np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """``(fpr, tpr, threshold)`` at every distinct score, descending threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    n_pos, n_neg = max(int(np.sum(y == 1)), 1), max(int(np.sum(y == 0)), 1)
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    for k in range(len(s)):
        tp += int(y[k] == 1)
        fp += int(y[k] == 0)
        if k == len(s) - 1 or s[k + 1] != s[k]:
            points.append((fp / n_neg, tp / n_pos, float(s[k])))
    return points


def stratified_folds(labels, n_folds: int, seed) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin.

    ``seed`` may be an int or a ``np.random.Generator``.
    """
    labels = np.asarray(labels)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if 0 < len(idx) < n_folds:
            raise ValueError(
                f"class {cls} has {len(idx)} samples, fewer than {n_folds} folds")
        perm = idx[rng.permutation(len(idx))]
        folds[perm] = np.arange(len(perm)) % n_folds
    return folds


@dataclass
class ExperimentConfig:
    folds: int = 5
    inner_folds: int = 3
    sigma_grid: tuple = DEFAULT_SIGMAS
    bandwidth_grid: tuple = DEFAULT_BANDWIDTH_SCALES  # multiples of the median heuristic
    C_grid: tuple = DEFAULT_CS
    seed: int = 0
    base: str = "rbf"
    refinement: int = 2
    estimator: str = "unbiased"
    clamp_negative: bool = True
    tol: float = 1e-3

    def __post_init__(self):
        if self.folds < 2 or self.inner_folds < 2:
            raise ValueError("folds and inner_folds must be at least 2")
        for name in ("sigma_grid", "bandwidth_grid", "C_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            if not grid or any(v <= 0 for v in grid):
                raise ValueError(f"{name} must be a nonempty list of positive numbers")
            setattr(self, name, grid)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class EvalReport:
    fold_auroc: list
    chosen: list
    config: dict
    config_hash: str
    dataset: dict = field(default_factory=dict)
    roc: list = field(default_factory=list)  # per fold list of (fpr, tpr, threshold)
    timings: dict = field(default_factory=dict)
    audit: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_auroc))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_auroc))

    def to_dict(self, timings: bool = False) -> dict:
        """Deterministic content; wall-clock timings only on request."""
        doc = {"fold_auroc": self.fold_auroc, "mean_auroc": self.mean, "std_auroc": self.std,
               "chosen": self.chosen, "config": self.config, "config_hash": self.config_hash,
               "dataset": self.dataset, "audit": self.audit}
        if timings:
            doc["timings"] = self.timings
        return doc

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)


class GramAudit:
    """Records which sample indices each phase reads from a kernel matrix."""

    def __init__(self):
        self.phase = "selection"
        self.accessed: dict[str, set] = {}

    def take(self, K: np.ndarray, rows, cols, row_ids, col_ids) -> np.ndarray:
        seen = self.accessed.setdefault(self.phase, set())
        seen.update(int(i) for i in np.asarray(row_ids)[rows])
        seen.update(int(i) for i in np.asarray(col_ids)[cols])
        return K[np.ix_(rows, cols)]


def _inner_search(kernel: TreeKernel, y_train, train_ids, config: ExperimentConfig, rng,
                  audit: GramAudit, scores: dict, bw_scale: float):
    inner = stratified_folds(y_train, config.inner_folds, rng)
    for sigma in config.sigma_grid:
        G = kernel.gram(sigma)
        for C in config.C_grid:
            vals = []
            for f in range(config.inner_folds):
                tr = np.flatnonzero(inner != f)
                va = np.flatnonzero(inner == f)
                K_tr = audit.take(G, tr, tr, train_ids, train_ids)
                K_va = audit.take(G, va, tr, train_ids, train_ids)
                try:
                    svc = PrecomputedSVC(C=C, tol=config.tol).fit(K_tr, y_train[tr])
                    vals.append(auroc(svc.decision_function(K_va), y_train[va]))
                except ConvergenceError as exc:
                    logger.warning("inner fit failed (sigma=%g, C=%g): %s", sigma, C, exc)
                    vals.append(0.0)
            scores[(bw_scale, sigma, C)] = float(np.mean(vals))


def cross_validate(dataset: LabeledDataset, config: ExperimentConfig = ExperimentConfig(),
                   cache=None) -> EvalReport:
    """Stratified outer folds; inner grid search on each training split only."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    y = np.asarray(dataset.labels, dtype=int)
    if len(set(y.tolist())) < 2:
        raise ValueError("cross-validation needs both classes")
    root = np.random.default_rng(config.seed)
    outer = stratified_folds(y, config.folds, root)
    child_seeds = root.integers(0, 2 ** 32, size=config.folds)

    fold_auroc, chosen, rocs, audits = [], [], [], []
    timings = {"kernel_s": 0.0, "svm_s": 0.0}
    t_start = time.perf_counter()
    for f in range(config.folds):
        train = np.flatnonzero(outer != f)
        test = np.flatnonzero(outer == f)
        if len(set(y[test].tolist())) < 2 or len(set(y[train].tolist())) < 2:
            raise ValueError(f"fold {f} lost a class; stratification impossible")
        audit = GramAudit()
        train_trees = [dataset.trees[i] for i in train]
        scores: dict = {}
        kernels = {}
        for bw_scale in config.bandwidth_grid:
            t0 = time.perf_counter()
            kernel = TreeKernel(sigma=config.sigma_grid[0], base=config.base,
                                bandwidth="median", bandwidth_scale=bw_scale,
                                refinement=config.refinement, estimator=config.estimator,
                                clamp_negative=config.clamp_negative, cache=cache)
            kernel.fit(train_trees)
            timings["kernel_s"] += time.perf_counter() - t0
            kernels[bw_scale] = kernel
            t0 = time.perf_counter()
            # identical inner splits for every grid cell
            _inner_search(kernel, y[train], train, config,
                          np.random.default_rng(child_seeds[f]), audit, scores, bw_scale)
            timings["svm_s"] += time.perf_counter() - t0
        best = max(scores, key=lambda k: (scores[k], -list(scores).index(k)))
        bw_scale, sigma, C = best

        audit.phase = "refit"
        kernel = kernels[bw_scale]
        kernel.set_params(sigma=sigma)
        G = kernel.gram(sigma)
        idx = np.arange(len(train))
        svc = PrecomputedSVC(C=C, tol=config.tol).fit(
            audit.take(G, idx, idx, train, train), y[train])
        t0 = time.perf_counter()
        K_test = kernel.transform([dataset.trees[i] for i in test])
        timings["kernel_s"] += time.perf_counter() - t0
        audit.phase = "test"
        audit.take(K_test, np.arange(len(test)), idx, test, train)
        dec = svc.decision_function(K_test)
        fold_auroc.append(auroc(dec, y[test]))
        rocs.append(roc_points(dec, y[test]))
        test_set = set(test.tolist())
        audits.append({"fold": f,
                       "selection_test_accesses": len(audit.accessed.get("selection", set())
                                                      & test_set),
                       "n_train": int(len(train)), "n_test": int(len(test))})
        chosen.append({"fold": f, "bandwidth_scale": bw_scale,
                       "bandwidth": float(kernel.bandwidth_), "sigma": sigma, "C": C,
                       "inner_auroc": scores[best], "psd_shift": float(svc.psd_shift_)})
        logger.info("fold %d: AUROC %.4f (bw x%g, sigma %g, C %g)", f, fold_auroc[-1],
                    bw_scale, sigma, C)
    timings["total_s"] = time.perf_counter() - t_start
    cfg = config.to_dict()
    return EvalReport(fold_auroc=fold_auroc, chosen=chosen, config=cfg,
                      config_hash=config.config_hash(), roc=rocs, timings=timings,
                      audit=audits,
                      dataset={"n_trees": len(dataset), "n_positive": int(y.sum()),
                               "outer_folds": config.folds, "inner_folds": config.inner_folds,
                               "stratified": True})
