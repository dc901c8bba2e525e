"""Signature machinery: base kernels, the PDE signature-kernel solver and
truncated tensor-algebra computations used as exact oracles.

The production kernel is :func:`sig_kernel_pde`, which never truncates. The
truncated routines (:func:`sig_truncated`, :func:`chen_product`,
:func:`sig_inner_truncated`, :func:`expected_sig_truncated`) are exact up to
level ``m`` for piecewise-linear paths and serve as independent checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.spatial.distance import pdist

from .tree_model import PiecewiseLinearPath, StreamingTree

_KIND_CODES = {"linear": 0, "rbf": 1}
MAX_REFINEMENT = 10


@dataclass(frozen=True)
class BaseKernel:
    """Static kernel on R^d driving the signature-kernel PDE.

    ``rbf`` is ``exp(-|x - y|^2 / (2 * bandwidth^2))``; ``linear`` is ``<x, y>``.
    """

    kind: str = "rbf"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown base kernel {self.kind!r}; expected 'rbf' or 'linear'")
        if self.kind == "rbf" and not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"rbf bandwidth must be a positive finite number, got {self.bandwidth}")

    @property
    def gamma(self) -> float:
        return 1.0 / (2.0 * self.bandwidth ** 2) if self.kind == "rbf" else 0.0

    def __call__(self, x, y) -> np.ndarray:
        """Matrix of kernel values between the rows of ``x`` and ``y``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "linear":
            return x @ y.T
        sq = (np.sum(x ** 2, axis=1)[:, None] + np.sum(y ** 2, axis=1)[None, :]
              - 2.0 * x @ y.T)
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": float(self.bandwidth)}


@dataclass(frozen=True)
class PdeGrid:
    """Dyadic refinement of each knot interval for the PDE solver."""

    refinement: int = 2
    order: int = 2

    def __post_init__(self):
        if not 0 <= int(self.refinement) <= MAX_REFINEMENT:
            raise ValueError(f"refinement must lie in [0, {MAX_REFINEMENT}]")
        if self.order != 2:
            raise ValueError("only the second-order scheme is implemented")


# ---------------------------------------------------------------------------
# PDE solver
# ---------------------------------------------------------------------------

@njit(cache=True)
def _kappa_row(x, ys, kind, gamma, out):
    n, d = ys.shape
    for j in range(n):
        acc = 0.0
        if kind == 0:
            for c in range(d):
                acc += x[c] * ys[j, c]
            out[j] = acc
        else:
            for c in range(d):
                diff = x[c] - ys[j, c]
                acc += diff * diff
            out[j] = math.exp(-gamma * acc)


@njit(cache=True)
def _goursat(xs, ys, kind, gamma):
    # U[0, .] = U[., 0] = 1; sweep rows keeping one row of U and two of kappa.
    n = xs.shape[0]
    m = ys.shape[0]
    u_prev = np.ones(m)
    u_next = np.ones(m)
    k_prev = np.empty(m)
    k_next = np.empty(m)
    _kappa_row(xs[0], ys, kind, gamma, k_prev)
    for i in range(n - 1):
        _kappa_row(xs[i + 1], ys, kind, gamma, k_next)
        u_next[0] = 1.0
        for j in range(m - 1):
            delta = k_next[j + 1] - k_next[j] - k_prev[j + 1] + k_prev[j]
            d2 = delta * delta / 12.0
            u_next[j + 1] = ((u_next[j] + u_prev[j + 1]) * (1.0 + 0.5 * delta + d2)
                             - u_prev[j] * (1.0 - d2))
        u_prev, u_next = u_next, u_prev
        k_prev, k_next = k_next, k_prev
    return u_prev[m - 1]


@njit(cache=True)
def _goursat_pairs(xs, x_off, ys, y_off, rows, cols, kind, gamma):
    out = np.empty(rows.shape[0])
    for p in range(rows.shape[0]):
        i = rows[p]
        j = cols[p]
        out[p] = _goursat(xs[x_off[i]:x_off[i + 1]], ys[y_off[j]:y_off[j + 1]], kind, gamma)
    return out


def _check_finite(path: PiecewiseLinearPath, label: str):
    bad = np.where(~np.all(np.isfinite(path.points), axis=1))[0]
    if len(bad):
        raise ValueError(f"non-finite base-kernel input at knot {int(bad[0])} of path {label}")


def sig_kernel_pde(X: PiecewiseLinearPath, Y: PiecewiseLinearPath,
                   base: BaseKernel = BaseKernel(), grid: PdeGrid = PdeGrid()) -> float:
    """Signature kernel ``k(X, Y)`` as the terminal value of the Goursat PDE.

    Each path is traversed over its own knots, every interval split into
    ``2 ** grid.refinement`` pieces; the explicit second-order update runs on
    the resulting rectangular grid.
    """
    if X.dim != Y.dim:
        raise ValueError(f"path dimensions differ: {X.dim} vs {Y.dim}")
    _check_finite(X, "X")
    _check_finite(Y, "Y")
    value = _goursat(X.refine(grid.refinement), Y.refine(grid.refinement),
                     _KIND_CODES[base.kind], base.gamma)
    if not math.isfinite(value):
        raise FloatingPointError("signature kernel PDE produced a non-finite value")
    return float(value)


def _pack(paths: Sequence[PiecewiseLinearPath], refinement: int):
    fine = [p.refine(refinement) for p in paths]
    offsets = np.zeros(len(fine) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(f) for f in fine])
    return np.ascontiguousarray(np.concatenate(fine, axis=0)), offsets


def sig_kernel_pairs(paths_a: Sequence[PiecewiseLinearPath], paths_b: Sequence[PiecewiseLinearPath],
                     rows, cols, base: BaseKernel = BaseKernel(),
                     grid: PdeGrid = PdeGrid()) -> np.ndarray:
    """Kernel values for the index pairs ``(paths_a[rows[p]], paths_b[cols[p]])``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if len(rows) == 0:
        return np.empty(0)
    for label, group in (("a", paths_a), ("b", paths_b)):
        for i, p in enumerate(group):
            _check_finite(p, f"{label}[{i}]")
    xs, x_off = _pack(paths_a, grid.refinement)
    ys, y_off = _pack(paths_b, grid.refinement)
    if xs.shape[1] != ys.shape[1]:
        raise ValueError("path dimensions differ between the two collections")
    out = _goursat_pairs(xs, x_off, ys, y_off, rows, cols, _KIND_CODES[base.kind], base.gamma)
    bad = np.where(~np.isfinite(out))[0]
    if len(bad):
        raise FloatingPointError(
            f"non-finite signature kernel for pair ({rows[bad[0]]}, {cols[bad[0]]})")
    return out


def sig_kernel_matrix(paths_a: Sequence[PiecewiseLinearPath],
                      paths_b: Sequence[PiecewiseLinearPath] | None = None,
                      base: BaseKernel = BaseKernel(), grid: PdeGrid = PdeGrid()) -> np.ndarray:
    """All pairwise signature kernels; symmetric input solves each pair once."""
    if paths_b is None:
        n = len(paths_a)
        rows, cols = np.triu_indices(n)
        vals = sig_kernel_pairs(paths_a, paths_a, rows, cols, base, grid)
        out = np.empty((n, n))
        out[rows, cols] = vals
        out[cols, rows] = vals
        return out
    rows, cols = np.meshgrid(np.arange(len(paths_a)), np.arange(len(paths_b)), indexing="ij")
    vals = sig_kernel_pairs(paths_a, paths_b, rows.ravel(), cols.ravel(), base, grid)
    return vals.reshape(len(paths_a), len(paths_b))


def median_heuristic(paths: Sequence[PiecewiseLinearPath], max_points: int = 1000,
                     random_state: int = 0) -> float:
    """Median pairwise Euclidean distance among (a sample of) knot values."""
    points = np.concatenate([p.points for p in paths], axis=0)
    rng = np.random.default_rng(random_state)
    if len(points) > max_points:
        points = points[rng.choice(len(points), size=max_points, replace=False)]
    dist = pdist(points)
    dist = dist[dist > 0]
    return float(np.median(dist)) if len(dist) else 1.0


# ---------------------------------------------------------------------------
# Truncated tensor algebra
# ---------------------------------------------------------------------------

class TruncatedTensor:
    """Element of the tensor algebra over R^d truncated at level ``m``.

    ``levels[k]`` has shape ``(d,) * k``; level 0 is a 0-d array.
    """

    def __init__(self, levels, dim: int):
        self.levels = [np.asarray(lv, dtype=float) for lv in levels]
        self.dim = int(dim)
        for k, lv in enumerate(self.levels):
            if lv.shape != (self.dim,) * k:
                raise ValueError(f"level {k} has shape {lv.shape}, expected {(self.dim,) * k}")

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @classmethod
    def unit(cls, dim: int, depth: int) -> "TruncatedTensor":
        levels = [np.array(1.0)] + [np.zeros((dim,) * k) for k in range(1, depth + 1)]
        return cls(levels, dim)

    @classmethod
    def zeros(cls, dim: int, depth: int) -> "TruncatedTensor":
        return cls([np.zeros((dim,) * k) for k in range(depth + 1)], dim)

    def _check_compatible(self, other: "TruncatedTensor"):
        if self.dim != other.dim or self.depth != other.depth:
            raise ValueError(
                f"incompatible tensors: (d={self.dim}, m={self.depth}) vs "
                f"(d={other.dim}, m={other.depth})")

    def __add__(self, other):
        self._check_compatible(other)
        return TruncatedTensor([a + b for a, b in zip(self.levels, other.levels)], self.dim)

    def __sub__(self, other):
        self._check_compatible(other)
        return TruncatedTensor([a - b for a, b in zip(self.levels, other.levels)], self.dim)

    def __mul__(self, scalar: float):
        return TruncatedTensor([lv * scalar for lv in self.levels], self.dim)

    __rmul__ = __mul__

    def max_abs_diff(self, other: "TruncatedTensor") -> float:
        self._check_compatible(other)
        return max(float(np.max(np.abs(a - b))) if a.size else 0.0
                   for a, b in zip(self.levels, other.levels))

    def flatten(self) -> np.ndarray:
        return np.concatenate([lv.ravel() for lv in self.levels])


def chen_product(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated tensor product: level k is ``sum_{i+j=k} a_i (x) b_j``."""
    a._check_compatible(b)
    levels = []
    for k in range(a.depth + 1):
        acc = np.zeros((a.dim,) * k)
        for i in range(k + 1):
            acc = acc + np.multiply.outer(a.levels[i], b.levels[k - i])
        levels.append(acc)
    return TruncatedTensor(levels, a.dim)


def segment_signature(increment, depth: int) -> TruncatedTensor:
    """Signature of a straight segment: level k is ``v^{(x)k} / k!``."""
    v = np.asarray(increment, dtype=float)
    levels = [np.array(1.0)]
    for k in range(1, depth + 1):
        levels.append(np.multiply.outer(levels[-1], v) / k)
    return TruncatedTensor(levels, len(v))


def _extend_by_segment(sig: TruncatedTensor, v: np.ndarray) -> TruncatedTensor:
    # S (x) exp(v) by Horner: new_k = (((S_0 v/k + S_1) v/(k-1) + ...) v/1 + S_k
    levels = [sig.levels[0].copy()]
    for k in range(1, sig.depth + 1):
        acc = sig.levels[0] * 1.0
        for j in range(k):
            acc = np.multiply.outer(acc, v) / (k - j) + sig.levels[j + 1]
        levels.append(acc)
    return TruncatedTensor(levels, sig.dim)


def sig_truncated(X: PiecewiseLinearPath, m: int) -> TruncatedTensor:
    """Levels ``0..m`` of the signature of a piecewise-linear path (exact)."""
    if m < 0:
        raise ValueError("truncation level must be non-negative")
    sig = TruncatedTensor.unit(X.dim, m)
    for v in X.increments():
        sig = _extend_by_segment(sig, v)
    return sig


def sig_inner_truncated(a: TruncatedTensor, b: TruncatedTensor) -> float:
    """Sum over levels of the Euclidean inner products."""
    a._check_compatible(b)
    return float(sum(np.sum(x * y) for x, y in zip(a.levels, b.levels)))


def expected_sig_truncated(tree: StreamingTree, m: int,
                           weighting: str = "leaves") -> TruncatedTensor:
    """Expected signature of the uniform measure on a tree's branches.

    A leaf returns the signature of its own series; otherwise the node
    signature is multiplied by a weighted average over children. Each child
    path starts at the parent's last knot so that the straight bridge between
    the two belongs to the child, exactly as in the interpolated branch.

    Parameters
    ----------
    weighting : {"leaves", "children"}
        ``"leaves"`` weights child ``i`` by its share of the leaves, which
        reproduces the mean over branches for every tree shape.
        ``"children"`` gives each child weight ``1/n``; the two agree when all
        sibling subtrees hold the same number of leaves.
    """
    if weighting not in ("leaves", "children"):
        raise ValueError(f"unknown weighting {weighting!r}")

    def rec(node: StreamingTree, anchor) -> tuple[TruncatedTensor, int]:
        rows = node.series.rows()
        if anchor is not None:
            rows = np.vstack([anchor, rows])
        own = sig_truncated(PiecewiseLinearPath.from_points(rows), m)
        if node.is_leaf():
            return own, 1
        parts = [rec(child, rows[-1]) for child in node.children]
        n_leaves = sum(k for _, k in parts)
        total = TruncatedTensor.zeros(tree.dim, m)
        for sig, k in parts:
            w = k / n_leaves if weighting == "leaves" else 1.0 / len(parts)
            total = total + sig * w
        return chen_product(own, total), n_leaves

    return rec(tree, None)[0]
