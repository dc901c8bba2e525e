import numpy as np
import pytest
from sklearn.base import clone

from sktree.estimators import PrecomputedSVC, SKTreeClassifier, TreeKernel
from sktree.synthetic import generate_synthetic
from sktree.tree_kernel import MmdConfig, gram
from sktree.sig_numerics import BaseKernel, PdeGrid


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(6, seed=11)


def test_get_params_and_clone():
    clf = SKTreeClassifier(sigma=0.5, C=10.0, refinement=1)
    params = clf.get_params()
    assert params["sigma"] == 0.5 and params["C"] == 10.0
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    assert TreeKernel().set_params(sigma=2.0).sigma == 2.0


def test_tree_kernel_matches_functional_gram(data):
    tk = TreeKernel(sigma=0.8, bandwidth=1.5, refinement=1)
    G = tk.fit_transform(data.trees)
    config = MmdConfig(base=BaseKernel("rbf", 1.5), grid=PdeGrid(1))
    np.testing.assert_allclose(G, gram(data.trees, 0.8, config).values, atol=1e-12)
    # transform on the training trees reproduces the Gram matrix
    np.testing.assert_allclose(tk.transform(data.trees), G, atol=1e-10)
    assert tk.transform(data.trees[:3]).shape == (3, len(data))


def test_median_bandwidth_scaled(data):
    a = TreeKernel(refinement=1).fit(data.trees)
    b = TreeKernel(refinement=1, bandwidth_scale=4.0).fit(data.trees)
    assert b.bandwidth_ == pytest.approx(4.0 * a.bandwidth_)


def test_classifier_fit_predict(data):
    clf = SKTreeClassifier(sigma=1.0, C=10.0, refinement=1).fit(data.trees, data.labels)
    pred = clf.predict(data.trees)
    assert set(pred.tolist()) <= {0, 1} and len(pred) == len(data)
    assert clf.decision_function(data.trees[:2]).shape == (2,)


def test_validation_errors(data):
    with pytest.raises(ValueError, match="empty dataset"):
        TreeKernel().fit([])
    with pytest.raises(TypeError):
        TreeKernel().fit([1, 2])
    with pytest.raises(ValueError):
        TreeKernel(sigma=0.0).fit(data.trees)
    svc = PrecomputedSVC().fit(np.eye(4), [0, 1, 0, 1])
    with pytest.raises(ValueError):
        svc.decision_function(np.ones((2, 3)))
    with pytest.raises(ValueError):
        PrecomputedSVC().fit(np.eye(3), [0, 1])


def test_svc_repairs_indefinite_gram():
    K = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]])
    assert np.linalg.eigvalsh(K)[0] < 0
    svc = PrecomputedSVC().fit(K, [0, 1, 0])
    assert svc.psd_shift_ > 0
    with pytest.raises(ValueError, match="psd_shift"):
        PrecomputedSVC(repair_psd=False).fit(K, [0, 1, 0])
