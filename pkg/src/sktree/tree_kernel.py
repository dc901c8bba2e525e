"""MMD between streaming trees and the tree kernel ``exp(-sigma^2 * MMD^2)``.

A tree is viewed as the uniform empirical measure on its branch paths; the
squared MMD between two trees is estimated from signature kernels between
branches. Gram assembly evaluates every branch pair of the dataset once and
reduces the resulting branch-level matrix block-wise.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sig_numerics import BaseKernel, PdeGrid, sig_kernel_matrix, sig_kernel_pairs
from .tree_model import PiecewiseLinearPath, StreamingTree, branch_paths

logger = logging.getLogger(__name__)

ESTIMATORS = ("unbiased", "biased", "algorithm1-literal")


@dataclass(frozen=True)
class MmdConfig:
    estimator: str = "unbiased"
    clamp_negative: bool = True
    base: BaseKernel = field(default_factory=BaseKernel)
    grid: PdeGrid = field(default_factory=PdeGrid)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "clamp_negative": self.clamp_negative,
                "base": self.base.to_dict(), "refinement": self.grid.refinement}

    def kernel_hash(self) -> str:
        """Hash of the parts that determine branch-kernel values."""
        doc = {"base": self.base.to_dict(), "refinement": self.grid.refinement}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def tree_id(tree: StreamingTree) -> str:
    """Content hash of a tree, stable across processes."""
    return hashlib.sha256(tree.to_json().encode()).hexdigest()[:24]


@dataclass
class GramMatrix:
    values: np.ndarray
    sigma: float
    config: MmdConfig
    psd_shift: float = 0.0
    tree_ids: list = field(default_factory=list)

    def sidecar(self) -> dict:
        return {"sigma": self.sigma, "config": self.config.to_dict(),
                "config_hash": self.config.config_hash(), "psd_shift": self.psd_shift,
                "tree_ids": list(self.tree_ids), "shape": list(self.values.shape)}

    def save(self, path) -> None:
        """Write ``<path>.npy`` plus ``<path>.json`` sidecar."""
        path = str(path)
        stem = path[:-4] if path.endswith(".npy") else path
        np.save(stem + ".npy", self.values)
        with open(stem + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GramMatrix":
        path = str(path)
        stem = path[:-4] if path.endswith(".npy") else path
        values = np.load(stem + ".npy")
        with open(stem + ".json") as fh:
            meta = json.load(fh)
        cfg = meta["config"]
        config = MmdConfig(cfg["estimator"], cfg["clamp_negative"],
                           BaseKernel(**cfg["base"]), PdeGrid(cfg["refinement"]))
        return cls(values, meta["sigma"], config, meta["psd_shift"], meta["tree_ids"])


# ---------------------------------------------------------------------------
# Branch blocks and MMD
# ---------------------------------------------------------------------------

def branch_kernel_block(T1: StreamingTree, T2: StreamingTree, config: MmdConfig) -> np.ndarray:
    """Signature kernels between every branch of ``T1`` and every branch of ``T2``."""
    p1 = branch_paths(T1)
    if T1 is T2 or T1 == T2:
        return sig_kernel_matrix(p1, None, config.base, config.grid)
    return sig_kernel_matrix(p1, branch_paths(T2), config.base, config.grid)


def _within_term(block: np.ndarray, estimator: str) -> float:
    k = block.shape[0]
    total = float(np.sum(block))
    if estimator == "biased" or k == 1:
        if estimator != "biased":
            logger.debug("single-branch tree: biased within-tree term used")
        return total / (k * k)
    if estimator == "unbiased":
        return (total - float(np.trace(block))) / (k * (k - 1))
    return total / (k * (k - 1))


def mmd_from_blocks(K11: np.ndarray, K22: np.ndarray, K12: np.ndarray,
                    estimator: str = "unbiased", clamp_negative: bool = True) -> float:
    """Three-term MMD^2 estimate from precomputed branch-kernel blocks."""
    m, n = K12.shape
    value = (_within_term(K11, estimator) + _within_term(K22, estimator)
             - 2.0 * float(np.sum(K12)) / (m * n))
    return max(value, 0.0) if clamp_negative else value


def mmd_squared(T1: StreamingTree, T2: StreamingTree, config: MmdConfig = MmdConfig()) -> float:
    K11 = branch_kernel_block(T1, T1, config)
    K22 = branch_kernel_block(T2, T2, config)
    K12 = branch_kernel_block(T1, T2, config)
    return mmd_from_blocks(K11, K22, K12, config.estimator, config.clamp_negative)


def tree_kernel_sigma(T1: StreamingTree, T2: StreamingTree, sigma: float,
                      config: MmdConfig = MmdConfig()) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(np.exp(-sigma ** 2 * mmd_squared(T1, T2, config)))


# ---------------------------------------------------------------------------
# Dataset-level assembly
# ---------------------------------------------------------------------------

class BranchKernelTable:
    """Signature kernels between all branches of a collection of trees.

    ``values[a, b]`` is the kernel between global branches ``a`` and ``b``;
    ``offsets[i]:offsets[i + 1]`` are the branches of tree ``i``. Blocks are
    looked up in ``cache`` first when one is given.
    """

    def __init__(self, trees: Sequence[StreamingTree], config: MmdConfig, cache=None):
        self.trees = list(trees)
        self.config = config
        self.ids = [tree_id(t) for t in self.trees]
        paths: list[PiecewiseLinearPath] = []
        counts = []
        for t in self.trees:
            bp = branch_paths(t)
            paths.extend(bp)
            counts.append(len(bp))
        self.paths = paths
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        self.cache_hits = 0
        self.values = self._compute(cache)

    def _block_slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def _compute(self, cache) -> np.ndarray:
        n_trees = len(self.trees)
        nb = self.offsets[-1]
        values = np.full((nb, nb), np.nan)
        khash = self.config.kernel_hash()
        missing = []
        if cache is not None:
            found = cache.get_many([(self.ids[i], self.ids[j], khash)
                                    for i in range(n_trees) for j in range(i, n_trees)])
        else:
            found = {}
        for i in range(n_trees):
            for j in range(i, n_trees):
                block = found.get((self.ids[i], self.ids[j], khash))
                si, sj = self._block_slice(i), self._block_slice(j)
                if block is not None and block.shape == (si.stop - si.start, sj.stop - sj.start):
                    values[si, sj] = block
                    values[sj, si] = block.T
                    self.cache_hits += 1
                else:
                    missing.append((i, j))
        if missing:
            rows, cols = [], []
            for i, j in missing:
                si, sj = self._block_slice(i), self._block_slice(j)
                r, c = np.meshgrid(np.arange(si.start, si.stop), np.arange(sj.start, sj.stop),
                                   indexing="ij")
                if i == j:
                    keep = r <= c
                    r, c = r[keep], c[keep]
                rows.append(r.ravel())
                cols.append(c.ravel())
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            vals = sig_kernel_pairs(self.paths, self.paths, rows, cols,
                                    self.config.base, self.config.grid)
            values[rows, cols] = vals
            values[cols, rows] = vals
            if cache is not None:
                cache.put_many({(self.ids[i], self.ids[j], khash):
                                values[self._block_slice(i), self._block_slice(j)].copy()
                                for i, j in missing})
        return values

    def block(self, i: int, j: int) -> np.ndarray:
        return self.values[self._block_slice(i), self._block_slice(j)]


def mmd_matrix(table: BranchKernelTable, estimator: str = "unbiased",
               clamp_negative: bool = True) -> np.ndarray:
    """Pairwise MMD^2 between all trees of a :class:`BranchKernelTable`."""
    n = len(table.trees)
    counts = np.diff(table.offsets)
    # block sums via an indicator matrix: S[i, j] = sum of block (i, j)
    ind = np.zeros((n, table.offsets[-1]))
    for i in range(n):
        ind[i, table._block_slice(i)] = 1.0
    sums = ind @ table.values @ ind.T
    cross = sums / np.outer(counts, counts)
    within = np.array([_within_term(table.block(i, i), estimator) for i in range(n)])
    d2 = within[:, None] + within[None, :] - 2.0 * cross
    d2 = 0.5 * (d2 + d2.T)
    return np.maximum(d2, 0.0) if clamp_negative else d2


def mmd_cross_matrix(K_ab: np.ndarray, offsets_a, offsets_b, within_a, within_b,
                     clamp_negative: bool = True) -> np.ndarray:
    """MMD^2 between two tree collections given their cross branch kernels."""
    na, nb = len(offsets_a) - 1, len(offsets_b) - 1
    ia = np.zeros((na, offsets_a[-1]))
    ib = np.zeros((nb, offsets_b[-1]))
    for i in range(na):
        ia[i, offsets_a[i]:offsets_a[i + 1]] = 1.0
    for j in range(nb):
        ib[j, offsets_b[j]:offsets_b[j + 1]] = 1.0
    cross = (ia @ K_ab @ ib.T) / np.outer(np.diff(offsets_a), np.diff(offsets_b))
    d2 = np.asarray(within_a)[:, None] + np.asarray(within_b)[None, :] - 2.0 * cross
    return np.maximum(d2, 0.0) if clamp_negative else d2


def psd_repair(values: np.ndarray, eps: float = 1e-10) -> tuple[np.ndarray, float]:
    """Shift the diagonal by ``max(0, -lambda_min + eps)`` when negative eigenvalues exist."""
    lam_min = float(np.linalg.eigvalsh(0.5 * (values + values.T))[0])
    shift = max(0.0, -lam_min + eps) if lam_min < 0 else 0.0
    if shift:
        values = values + shift * np.eye(len(values))
    return values, shift


def gram(dataset: Sequence[StreamingTree], sigma: float, config: MmdConfig = MmdConfig(),
         cache=None, repair_psd: bool = False) -> GramMatrix:
    """``G[i, j] = exp(-sigma^2 * MMD^2(T_i, T_j))`` over a dataset of trees."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    table = BranchKernelTable(dataset, config, cache=cache)
    d2 = mmd_matrix(table, config.estimator, config.clamp_negative)
    values = np.exp(-sigma ** 2 * d2)
    shift = 0.0
    if repair_psd:
        values, shift = psd_repair(values)
    return GramMatrix(values, float(sigma), config, shift, table.ids)
