"""scikit-learn estimators wrapping the tree kernel and the SVM."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import svm as _svm
from .sig_numerics import BaseKernel, PdeGrid, median_heuristic, sig_kernel_matrix
from .tree_kernel import (BranchKernelTable, MmdConfig, _within_term, mmd_cross_matrix,
                          mmd_matrix, psd_repair)
from .tree_model import branch_paths
from .validation import check_binary_labels, check_gram, check_trees


class TreeKernel(TransformerMixin, BaseEstimator):
    """Streaming-tree kernel ``exp(-sigma^2 * MMD^2)`` against the fitted trees.

    ``fit`` stores the training trees and resolves the base-kernel bandwidth
    (``"median"`` applies the median heuristic to the training knots, scaled by
    ``bandwidth_scale``). ``transform`` returns the ``(n_query, n_train)``
    kernel matrix; ``fit_transform`` the training Gram matrix.
    """

    def __init__(self, sigma=1.0, base="rbf", bandwidth="median", bandwidth_scale=1.0,
                 refinement=2, estimator="unbiased", clamp_negative=True, cache=None):
        self.sigma = sigma
        self.base = base
        self.bandwidth = bandwidth
        self.bandwidth_scale = bandwidth_scale
        self.refinement = refinement
        self.estimator = estimator
        self.clamp_negative = clamp_negative
        self.cache = cache

    def _config(self) -> MmdConfig:
        return MmdConfig(self.estimator, self.clamp_negative,
                         BaseKernel(self.base, self.bandwidth_), PdeGrid(self.refinement))

    def fit(self, X, y=None):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        trees = check_trees(X)
        if self.bandwidth == "median":
            paths = [p for t in trees for p in branch_paths(t)]
            self.bandwidth_ = median_heuristic(paths) * self.bandwidth_scale
        else:
            self.bandwidth_ = float(self.bandwidth) * self.bandwidth_scale
        self.config_ = self._config()
        self.table_ = BranchKernelTable(trees, self.config_, cache=self.cache)
        self.trees_ = trees
        self.n_features_in_ = trees[0].dim
        self.train_mmd_ = mmd_matrix(self.table_, self.estimator, self.clamp_negative)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).gram()

    def gram(self, sigma=None) -> np.ndarray:
        check_is_fitted(self, "table_")
        sigma = self.sigma if sigma is None else sigma
        return np.exp(-sigma ** 2 * self.train_mmd_)

    def query_mmd(self, X) -> np.ndarray:
        check_is_fitted(self, "table_")
        trees = check_trees(X, dim=self.n_features_in_)
        within, paths, offsets = [], [], [0]
        for t in trees:
            bp = branch_paths(t)
            block = sig_kernel_matrix(bp, None, self.config_.base, self.config_.grid)
            within.append(_within_term(block, self.estimator))
            paths.extend(bp)
            offsets.append(offsets[-1] + len(bp))
        cross = sig_kernel_matrix(paths, self.table_.paths, self.config_.base, self.config_.grid)
        train_within = [_within_term(self.table_.block(i, i), self.estimator)
                        for i in range(len(self.trees_))]
        return mmd_cross_matrix(cross, np.asarray(offsets), self.table_.offsets,
                                within, train_within, self.clamp_negative)

    def transform(self, X) -> np.ndarray:
        return np.exp(-self.sigma ** 2 * self.query_mmd(X))


class PrecomputedSVC(ClassifierMixin, BaseEstimator):
    """Binary SVM on a precomputed kernel; labels in {0, 1}.

    ``fit`` takes the ``(n, n)`` training Gram matrix, the prediction methods
    take ``(n_query, n)`` kernel rows against the training samples.
    """

    def __init__(self, C=1.0, tol=1e-3, max_iter=100_000, repair_psd=True):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.repair_psd = repair_psd

    def fit(self, K, y):
        K = check_gram(K, square=True)
        y = check_binary_labels(y, len(K))
        self.psd_shift_ = 0.0
        if self.repair_psd:
            K, self.psd_shift_ = psd_repair(K)
        self.model_ = _svm.train(K, y, C=self.C, tol=self.tol, max_iter=self.max_iter)
        self.classes_ = np.array([0, 1])
        self.n_train_ = len(K)
        return self

    def decision_function(self, K):
        check_is_fitted(self, "model_")
        K = check_gram(np.atleast_2d(K), n_cols=self.n_train_)
        return _svm.decision(self.model_, K)

    def predict(self, K):
        return (self.decision_function(K) > 0).astype(int)


class SKTreeClassifier(ClassifierMixin, BaseEstimator):
    """Streaming-tree classifier: tree kernel Gram matrix followed by an SVM.

    Parameters
    ----------
    sigma : float
        Scale inside ``exp(-sigma^2 * MMD^2)``.
    C : float
        SVM box constraint.
    base : {"rbf", "linear"}
        Static kernel driving the signature-kernel PDE.
    bandwidth : float or "median"
        RBF bandwidth; ``"median"`` uses the median heuristic on training knots.
    bandwidth_scale : float
        Multiplier applied to ``bandwidth``.
    refinement : int
        Dyadic refinement of each knot interval in the PDE grid.
    estimator : {"unbiased", "biased", "algorithm1-literal"}
        MMD estimator.
    clamp_negative : bool
        Clamp negative MMD^2 estimates at zero.
    tol : float
        KKT tolerance of the SMO solver.
    cache : BlockCache, optional
        On-disk branch-kernel block cache.
    """

    def __init__(self, sigma=1.0, C=1.0, base="rbf", bandwidth="median", bandwidth_scale=1.0,
                 refinement=2, estimator="unbiased", clamp_negative=True, tol=1e-3, cache=None):
        self.sigma = sigma
        self.C = C
        self.base = base
        self.bandwidth = bandwidth
        self.bandwidth_scale = bandwidth_scale
        self.refinement = refinement
        self.estimator = estimator
        self.clamp_negative = clamp_negative
        self.tol = tol
        self.cache = cache

    def fit(self, X, y):
        trees = check_trees(X)
        y = check_binary_labels(y, len(trees))
        self.kernel_ = TreeKernel(self.sigma, self.base, self.bandwidth, self.bandwidth_scale,
                                  self.refinement, self.estimator, self.clamp_negative,
                                  self.cache)
        G = self.kernel_.fit_transform(trees)
        self.svc_ = PrecomputedSVC(C=self.C, tol=self.tol).fit(G, y)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "svc_")
        return self.svc_.decision_function(self.kernel_.transform(X))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)
