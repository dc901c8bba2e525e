"""Binary soft-margin SVM on precomputed Gram matrices.

The dual ``min 1/2 a'Qa - e'a  s.t. 0 <= a <= C, y'a = 0`` with
``Q = diag(y) K diag(y)`` is solved by SMO using the maximal violating pair.
Labels are {0, 1} at the API and {-1, +1} internally.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ConvergenceError(RuntimeError):
    pass


class NotPSDError(ValueError):
    pass


@dataclass
class SvmModel:
    alphas: np.ndarray
    bias: float
    labels: np.ndarray  # internal {-1, +1}
    C: float
    support_indices: np.ndarray = field(default=None)
    tree_ids: list = field(default_factory=list)
    config_hash: str = ""
    n_iter: int = 0

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.support_indices is None:
            self.support_indices = np.flatnonzero(self.alphas > 0)
        self.support_indices = np.asarray(self.support_indices, dtype=int)

    def dual_objective(self, K: np.ndarray) -> float:
        """``sum(a) - 1/2 a'Qa`` (the maximised form)."""
        ya = self.alphas * self.labels
        return float(np.sum(self.alphas) - 0.5 * ya @ K @ ya)

    def to_dict(self) -> dict:
        return {"alphas": self.alphas.tolist(), "bias": self.bias,
                "support_indices": self.support_indices.tolist(),
                "labels": ((self.labels + 1) // 2).astype(int).tolist(),
                "C": self.C, "config_hash": self.config_hash,
                "training_tree_ids": list(self.tree_ids)}

    @classmethod
    def from_dict(cls, doc: dict) -> "SvmModel":
        labels = 2.0 * np.asarray(doc["labels"], dtype=float) - 1.0
        return cls(np.asarray(doc["alphas"]), float(doc["bias"]), labels, float(doc["C"]),
                   np.asarray(doc["support_indices"], dtype=int),
                   list(doc.get("training_tree_ids", [])), doc.get("config_hash", ""))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def to_signed(labels) -> np.ndarray:
    labels = np.asarray(labels)
    values = set(np.unique(labels).tolist())
    if not values <= {0, 1}:
        raise ValueError(f"labels must be in {{0, 1}}, got {sorted(values)}")
    return np.where(labels == 1, 1.0, -1.0)


def check_psd(K: np.ndarray, tol: float = 1e-8) -> None:
    lam_min = float(np.linalg.eigvalsh(0.5 * (K + K.T))[0])
    scale = max(1.0, float(np.max(np.abs(np.diag(K)))))
    if lam_min < -tol * scale:
        raise NotPSDError(
            f"Gram matrix is not positive semidefinite (min eigenvalue {lam_min:.3e}); "
            "apply tree_kernel.psd_repair and record the psd_shift before training")


def train(K, labels, C: float = 1.0, tol: float = 1e-3, max_iter: int = 100_000,
          check: bool = True) -> SvmModel:
    """Train on a precomputed Gram matrix ``K`` with labels in {0, 1}."""
    K = np.asarray(K, dtype=float)
    n = len(K)
    if K.shape != (n, n):
        raise ValueError(f"Gram matrix must be square, got {K.shape}")
    y = to_signed(labels)
    if len(y) != n:
        raise ValueError("labels and Gram matrix sizes differ")
    if not C > 0:
        raise ValueError("C must be positive")
    if check:
        check_psd(K)

    alpha = np.zeros(n)
    grad = -np.ones(n)  # Q a - e
    diag = np.diag(K).copy()
    n_iter = 0
    while True:
        score = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if gap <= tol:
            break
        if n_iter >= max_iter:
            raise ConvergenceError(
                f"SMO did not converge in {max_iter} iterations (violation {gap:.3e})")
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        step = gap / eta
        step = min(step, C - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # clean round-off at the box edges
        for t in (i, j):
            if alpha[t] < 1e-14 * C:
                alpha[t] = 0.0
            elif alpha[t] > C * (1 - 1e-14):
                alpha[t] = C
        grad += step * y * (K[:, i] - K[:, j])
        n_iter += 1

    bias = _bias(alpha, y, grad, C)
    return SvmModel(alpha, bias, y, float(C), n_iter=n_iter)


def _bias(alpha, y, grad, C) -> float:
    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(np.mean(score[free]))
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    hi = np.max(score[up]) if up.any() else None
    lo = np.min(score[low]) if low.any() else None
    if hi is None:
        return float(lo)
    if lo is None:
        return float(hi)
    return float(0.5 * (hi + lo))


def decision(model: SvmModel, kernel_row) -> np.ndarray | float:
    """Signed margin ``bias + sum_i y_i a_i k(T, T_i)`` for one row or a matrix of rows."""
    rows = np.asarray(kernel_row, dtype=float)
    if rows.shape[-1] != len(model.alphas):
        raise ValueError(
            f"kernel row has length {rows.shape[-1]}, model was trained on {len(model.alphas)}")
    out = rows @ (model.alphas * model.labels) + model.bias
    return float(out) if rows.ndim == 1 else out


def predict(model: SvmModel, kernel_row):
    value = decision(model, kernel_row)
    return (np.asarray(value) > 0).astype(int) if np.ndim(value) else int(value > 0)
