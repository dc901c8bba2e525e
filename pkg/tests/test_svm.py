import numpy as np
import pytest

from sktree.svm import NotPSDError, SvmModel, decision, predict, train

cvxopt = pytest.importorskip("cvxopt")


def qp_oracle(K, labels, C):
    """Dual SVM objective from a generic QP solver."""
    from cvxopt import matrix, solvers
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    n = len(y)
    P = matrix(np.outer(y, y) * K)
    q = matrix(-np.ones(n))
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.concatenate([np.zeros(n), np.full(n, C)]))
    A = matrix(y.reshape(1, -1))
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12,
                           maxiters=200)
    sol = solvers.qp(P, q, G, h, A, matrix(0.0))
    a = np.asarray(sol["x"]).ravel()
    return float(np.sum(a) - 0.5 * (a * y) @ K @ (a * y))


def random_instance(rng):
    m = int(rng.integers(6, 31))
    d = int(rng.integers(2, 6))
    X = rng.normal(size=(m, d))
    labels = (X[:, 0] + 0.7 * rng.normal(size=m) > 0).astype(int)
    labels[:2] = [0, 1]
    gamma = float(rng.uniform(0.1, 1.0))
    K = np.exp(-gamma * np.sum((X[:, None] - X[None]) ** 2, axis=-1))
    C = float(rng.choice([0.1, 1.0, 10.0, 100.0]))
    return K, labels, C


def kkt_violations(model, K, labels, tol):
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    margin = y * decision(model, K)
    a, C = model.alphas, model.C
    bad = []
    for i in range(len(y)):
        if 0 < a[i] < C and abs(margin[i] - 1) > tol:
            bad.append(i)
        elif a[i] == 0 and margin[i] < 1 - tol:
            bad.append(i)
        elif a[i] == C and margin[i] > 1 + tol:
            bad.append(i)
    return bad


def test_dual_objective_matches_qp_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        K, labels, C = random_instance(rng)
        model = train(K, labels, C=C, tol=1e-8)
        ours = model.dual_objective(K)
        ref = qp_oracle(K, labels, C)
        assert abs(ours - ref) <= 1e-6 * abs(ref)


def test_kkt_and_feasibility_at_default_tol():
    rng = np.random.default_rng(1)
    for _ in range(20):
        K, labels, C = random_instance(rng)
        model = train(K, labels, C=C, tol=1e-3)
        assert kkt_violations(model, K, labels, 1e-3) == []
        assert np.all(model.alphas >= 0) and np.all(model.alphas <= C)
        assert abs(model.alphas @ model.labels) <= 1e-6 * C * len(K)


def test_two_point_closed_form():
    g = 0.3
    K = np.array([[1.0, g], [g, 1.0]])
    model = train(K, [0, 1], C=1e6, tol=1e-10)
    assert np.allclose(model.alphas, 1.0 / (1.0 - g))
    assert model.bias == pytest.approx(0.0, abs=1e-9)
    assert decision(model, [0.4, 0.4]) == pytest.approx(0.0, abs=1e-9)
    capped = train(K, [0, 1], C=0.5)
    assert np.allclose(capped.alphas, 0.5)


def test_separable_zero_hinge_loss():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(-2, 0.5, (10, 2)), rng.normal(2, 0.5, (10, 2))])
    labels = np.repeat([0, 1], 10)
    K = X @ X.T
    model = train(K, labels, C=1e6, tol=1e-6)
    y = 2 * labels - 1
    assert np.all(np.maximum(0, 1 - y * decision(model, K)) <= 1e-5)
    assert abs(model.dual_objective(K) - qp_oracle(K, labels, 1e6)) <= 1e-6 * abs(
        qp_oracle(K, labels, 1e6))


@pytest.mark.parametrize("label", [0, 1])
def test_single_class(label):
    K = np.eye(4)
    model = train(K, [label] * 4)
    queries = np.random.default_rng(0).uniform(0, 1, size=(5, 4))
    assert np.all(predict(model, queries) == label)


def test_zero_alphas_give_bias():
    model = SvmModel(np.zeros(3), 0.25, np.array([1.0, -1.0, 1.0]), 1.0)
    assert decision(model, [0.1, 0.9, 0.3]) == 0.25
    assert predict(model, [5.0, 5.0, 5.0]) == 1


def test_support_vector_margin():
    K, labels, C = random_instance(np.random.default_rng(4))
    model = train(K, labels, C=C)
    y = 2 * np.asarray(labels) - 1
    for i in np.flatnonzero((model.alphas > 0) & (model.alphas < C)):
        assert y[i] * decision(model, K[i]) >= 1 - 1e-3


def test_errors():
    model = train(np.eye(2), [0, 1])
    with pytest.raises(ValueError):
        decision(model, [1.0, 0.0, 0.0])
    with pytest.raises(NotPSDError, match="psd_shift"):
        train(np.array([[1.0, 2.0], [2.0, 1.0]]), [0, 1])
    with pytest.raises(ValueError):
        train(np.eye(2), [0, 2])


def test_label_relabeling_invariance():
    K, labels, C = random_instance(np.random.default_rng(5))
    a = train(K, labels, C=C)
    a.tree_ids = [f"x{i}" for i in range(len(K))]
    b = train(K, labels, C=C)
    b.tree_ids = [f"y{i}" for i in range(len(K))][::-1]
    assert np.array_equal(decision(a, K), decision(b, K))


def test_model_json_round_trip(tmp_path):
    K, labels, C = random_instance(np.random.default_rng(6))
    model = train(K, labels, C=C)
    model.save(tmp_path / "m.json")
    back = SvmModel.load(tmp_path / "m.json")
    assert np.array_equal(decision(back, K), decision(model, K))
    assert back.to_dict()["labels"] == list(labels)
