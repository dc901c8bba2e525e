"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .tree_model import StreamingTree


def check_trees(X, dim: int | None = None) -> list[StreamingTree]:
    """Return ``X`` as a list of trees of one common dimension."""
    if hasattr(X, "trees"):
        X = X.trees
    trees = list(X)
    if not trees:
        raise ValueError("empty dataset")
    for i, t in enumerate(trees):
        if not isinstance(t, StreamingTree):
            raise TypeError(f"element {i} is {type(t).__name__}, expected StreamingTree")
    dims = {t.dim for t in trees}
    if len(dims) != 1:
        raise ValueError(f"trees have mixed dimensions {sorted(dims)}")
    if dim is not None and dims != {dim}:
        raise ValueError(f"expected trees of dimension {dim}, got {dims.pop()}")
    return trees


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if n is not None and len(y) != n:
        raise ValueError(f"got {len(y)} labels for {n} samples")
    uniq = set(np.unique(y).tolist())
    if not uniq <= {0, 1}:
        raise ValueError(f"labels must be in {{0, 1}}, got {sorted(uniq)}")
    return y.astype(int)


def check_gram(K, n_cols: int | None = None, square: bool = False) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise ValueError("kernel matrix must be two-dimensional")
    if square and K.shape[0] != K.shape[1]:
        raise ValueError(f"Gram matrix must be square, got {K.shape}")
    if n_cols is not None and K.shape[1] != n_cols:
        raise ValueError(f"kernel matrix has {K.shape[1]} columns, expected {n_cols}")
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel matrix contains non-finite values")
    return K
