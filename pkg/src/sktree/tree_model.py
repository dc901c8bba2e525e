"""Time series, streaming trees and their branch representation.

A streaming tree is a rooted tree whose nodes carry multivariate time series.
Each root-to-leaf chain, concatenated, is a *branch*; the tree is equivalent to
the ordered list of its branches, all starting at the root's first timestamp.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Strictly time-ordered samples ``((t_0, x_0), ..., (t_n, x_n))``.

    ``values`` has shape ``(n + 1, d - 1)``; ``dim`` is ``d`` (time included).
    Arrays are copied and frozen on construction.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(len(times), -1)
        if len(times) == 0:
            raise ValueError("a time series needs at least one point")
        if values.ndim != 2 or values.shape[0] != len(times):
            raise ValueError(
                f"values shape {values.shape} does not match {len(times)} timestamps")
        if np.any(np.diff(times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("time series contains non-finite entries")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_rows(cls, rows) -> "TimeSeries":
        """Build from rows ``[t, v_1, ..., v_{d-1}]``."""
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise ValueError("rows must be a 2-d array with time in column 0")
        return cls(arr[:, 0], arr[:, 1:])

    @property
    def dim(self) -> int:
        return self.values.shape[1] + 1

    def __len__(self) -> int:
        return len(self.times)

    def rows(self) -> np.ndarray:
        """``(n + 1, d)`` array with time as column 0."""
        return np.column_stack([self.times, self.values])

    def concat(self, other: "TimeSeries") -> "TimeSeries":
        return TimeSeries(np.concatenate([self.times, other.times]),
                          np.concatenate([self.values, other.values]))

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (self.times.shape == other.times.shape
                and self.values.shape == other.values.shape
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.times.tobytes(), self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class StreamingTree:
    """A node series plus an ordered tuple of child trees.

    Children continue the parent's history: each child's first timestamp is
    strictly later than the parent's last one.
    """

    series: TimeSeries
    children: tuple = field(default_factory=tuple)

    def __post_init__(self):
        children = tuple(self.children)
        last = self.series.times[-1]
        for child in children:
            if not isinstance(child, StreamingTree):
                raise TypeError("children must be StreamingTree instances")
            if child.series.dim != self.series.dim:
                raise ValueError(
                    f"child dimension {child.series.dim} != parent dimension {self.series.dim}")
            if child.series.times[0] <= last:
                raise ValueError("child series must start after the parent's last timestamp")
        object.__setattr__(self, "children", children)

    @property
    def dim(self) -> int:
        return self.series.dim

    def is_leaf(self) -> bool:
        return not self.children

    def nodes(self) -> Iterator["StreamingTree"]:
        """Pre-order traversal."""
        yield self
        for child in self.children:
            yield from child.nodes()

    def __eq__(self, other):
        if not isinstance(other, StreamingTree):
            return NotImplemented
        return self.series == other.series and self.children == other.children

    def __hash__(self):
        return hash((self.series, self.children))

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {"series": self.series.rows().tolist(),
                "children": [c.to_dict() for c in self.children]}

    @classmethod
    def from_dict(cls, doc: dict) -> "StreamingTree":
        return cls(TimeSeries.from_rows(doc["series"]),
                   tuple(cls.from_dict(c) for c in doc.get("children", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "StreamingTree":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    """Continuous piecewise-linear path through ``points`` at parameter ``times``.

    ``points`` has shape ``(n, d)``. When built from a branch the first
    coordinate is time itself.
    """

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.shape[0] != len(times) or len(times) == 0:
            raise ValueError("points and times must have the same nonzero length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("path parameter must be strictly increasing")
        times.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_points(cls, points) -> "PiecewiseLinearPath":
        """Path through ``points`` parametrized by knot index."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        return cls(np.arange(len(points), dtype=float), points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __len__(self) -> int:
        return len(self.times)

    def increments(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    def __call__(self, t):
        """Evaluate at scalar or array ``t``; clamps outside the domain."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t_arr), self.dim))
        for c in range(self.dim):
            out[:, c] = np.interp(t_arr, self.times, self.points[:, c])
        return out[0] if np.ndim(t) == 0 else out

    def refine(self, refinement: int) -> np.ndarray:
        """Knots with every interval split into ``2 ** refinement`` equal pieces."""
        if refinement == 0 or len(self.points) == 1:
            return np.array(self.points)
        n_sub = 2 ** refinement
        frac = np.arange(n_sub) / n_sub
        start = self.points[:-1]
        step = np.diff(self.points, axis=0)
        fine = start[:, None, :] + frac[None, :, None] * step[:, None, :]
        return np.concatenate([fine.reshape(-1, self.dim), self.points[-1:]], axis=0)


def enumerate_branches(tree: StreamingTree) -> list[TimeSeries]:
    """Root-to-leaf concatenations, depth first, children in stored order."""
    branches = []

    def walk(node, prefix_t, prefix_v):
        times = prefix_t + [node.series.times]
        values = prefix_v + [node.series.values]
        if node.is_leaf():
            branches.append(TimeSeries(np.concatenate(times), np.concatenate(values)))
            return
        for child in node.children:
            walk(child, times, values)

    walk(tree, [], [])
    return branches


def interpolate(branch: TimeSeries) -> PiecewiseLinearPath:
    """Lift a branch to a path in R^d with time as coordinate 0."""
    return PiecewiseLinearPath(branch.times, branch.rows())


def branch_paths(tree: StreamingTree) -> list[PiecewiseLinearPath]:
    return [interpolate(b) for b in enumerate_branches(tree)]


def branch_count(tree: StreamingTree) -> int:
    return sum(1 for node in tree.nodes() if node.is_leaf())


def event_count(tree: StreamingTree) -> int:
    """Total number of points over all nodes."""
    return sum(len(node.series) for node in tree.nodes())


def tree_from_branches(branches: Sequence[TimeSeries]) -> StreamingTree:
    """Inverse of :func:`enumerate_branches` by longest-common-prefix merging.

    Branches that share a knot prefix share the corresponding nodes; a node is
    split wherever branches diverge.
    """
    if not branches:
        raise ValueError("need at least one branch")
    rows = [b.rows() for b in branches]

    def build(group: list[np.ndarray], start: int) -> StreamingTree:
        # common prefix length of the group from `start`
        end = start
        shortest = min(len(r) for r in group)
        while end < shortest and all(np.array_equal(r[end], group[0][end]) for r in group[1:]):
            end += 1
        if end == start:
            raise ValueError("branches diverge at their first point")
        series = TimeSeries.from_rows(group[0][start:end])
        rest = [r for r in group if len(r) > end]
        if len(rest) < len(group) and rest:
            raise ValueError("a branch is a strict prefix of another branch")
        children = []
        # group remaining branches by their next knot, preserving first-seen order
        while rest:
            head = rest[0][end]
            same = [r for r in rest if np.array_equal(r[end], head)]
            rest = [r for r in rest if not np.array_equal(r[end], head)]
            children.append(build(same, end))
        return StreamingTree(series, tuple(children))

    return build(rows, 0)
