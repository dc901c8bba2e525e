import numpy as np
import pytest

from sktree.tree_model import PiecewiseLinearPath, StreamingTree, TimeSeries


def random_path(rng, n_knots, dim, time_channel=True):
    """Unit-scale random path; coordinate 0 is time on [0, 1] when requested."""
    inc = rng.normal(0.0, 1.0 / np.sqrt(max(n_knots - 1, 1)), size=(n_knots - 1, dim))
    points = np.vstack([np.zeros(dim), np.cumsum(inc, axis=0)])
    if time_channel:
        inner = np.sort(rng.uniform(0.0, 1.0, size=max(n_knots - 2, 0)))
        points[:, 0] = np.concatenate([[0.0], inner, [1.0]])[:n_knots]
    return PiecewiseLinearPath.from_points(points)


def random_tree(rng, dim=3, max_leaves=6, t0=0.0):
    """Random streaming tree with at most ``max_leaves`` leaves."""
    budget = [max_leaves - 1]  # extra leaves still allowed

    def node(t_start, depth):
        n = int(rng.integers(1, 4))
        times = t_start + np.cumsum(rng.uniform(0.1, 1.0, size=n))
        series = TimeSeries(times, rng.normal(size=(n, dim - 1)))
        children = []
        if depth < 3:
            # k children add k - 1 leaves
            n_children = min(int(rng.integers(0, 3)), budget[0] + 1)
            budget[0] -= max(n_children - 1, 0)
            children = [node(times[-1], depth + 1) for _ in range(n_children)]
        return StreamingTree(series, tuple(children))

    return node(t0, 0)


def example_tree(n=3, i=2, j=4, dim=3, seed=0):
    """Root series of n + 1 knots with two leaf children of i and j knots."""
    rng = np.random.default_rng(seed)
    root = TimeSeries(np.arange(n + 1, dtype=float), rng.normal(size=(n + 1, dim - 1)))
    c1 = TimeSeries(n + 1 + np.arange(i, dtype=float), rng.normal(size=(i, dim - 1)))
    c2 = TimeSeries(n + 1 + np.arange(j, dtype=float), rng.normal(size=(j, dim - 1)))
    return StreamingTree(root, (StreamingTree(c1), StreamingTree(c2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one "PASS/FAIL <criterion>: <detail>" line per acceptance criterion
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
