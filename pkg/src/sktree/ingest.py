"""eCAR-style event logs to labeled 23-dimensional streaming trees.

Each (top process, window) pair becomes one tree. Channel 0 is time in
seconds from the window start, channel 1 the depth below the tree's root
process, channel 2 the number of processes spawned along the branch, and the
remaining channels cumulative counts of the configured (object, action)
event types.

A ``(PROCESS, CREATE)`` event closes the parent's current node with a point
recording the fork; two child nodes follow one microsecond later, first the
continuing parent (spawn count + 1) then the new child (depth + 1). Child
branches carry the parent's counter values forward.
"""
from __future__ import annotations

import gzip
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .tree_model import StreamingTree, TimeSeries, enumerate_branches

logger = logging.getLogger(__name__)

TIE_OFFSET = 1e-6  # seconds
N_STRUCT = 2  # depth, spawn count
DEPTH, SPAWN = 0, 1  # indices into the value vector (time excluded)
PROCESS_CREATE = ("PROCESS", "CREATE")
POOLS = ("branches", "nodes")

DEFAULT_EVENT_TYPES = (
    ("PROCESS", "OPEN"), ("PROCESS", "TERMINATE"),
    ("THREAD", "CREATE"), ("THREAD", "REMOTE_CREATE"), ("THREAD", "TERMINATE"),
    ("MODULE", "LOAD"),
    ("FILE", "CREATE"), ("FILE", "DELETE"), ("FILE", "MODIFY"),
    ("FILE", "READ"), ("FILE", "WRITE"), ("FILE", "RENAME"),
    ("FLOW", "START"), ("FLOW", "MESSAGE"), ("FLOW", "OPEN"),
    ("REGISTRY", "ADD"), ("REGISTRY", "EDIT"), ("REGISTRY", "REMOVE"),
    ("TASK", "CREATE"), ("SHELL", "COMMAND"),
)

_REQUIRED = {"action": "action", "actorID": "actor_id", "object": "object",
             "objectID": "object_id", "timestamp": "timestamp"}


@dataclass(frozen=True)
class HostEvent:
    action: str
    actor_id: str
    object: str
    object_id: str
    hostname: str
    timestamp: int  # milliseconds

    def __post_init__(self):
        if not self.actor_id:
            raise ValueError("actor_id must be nonempty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


class EventTypeMap:
    """Ordered (object, action) pairs, each owning one counter channel."""

    def __init__(self, pairs=DEFAULT_EVENT_TYPES):
        pairs = [tuple(p) for p in pairs]
        if len(set(pairs)) != len(pairs):
            raise ValueError("event types must be unique")
        if PROCESS_CREATE in pairs:
            raise ValueError("(PROCESS, CREATE) drives branching and cannot be a counter")
        self.pairs = pairs
        self._index = {p: i for i, p in enumerate(pairs)}

    def __len__(self):
        return len(self.pairs)

    def channel(self, obj: str, action: str):
        return self._index.get((obj, action))

    def __eq__(self, other):
        return isinstance(other, EventTypeMap) and self.pairs == other.pairs


@dataclass
class FeaturizationConfig:
    event_type_map: EventTypeMap = field(default_factory=EventTypeMap)
    window_seconds: float = 900.0
    min_events: int = 2
    max_events: int = 200
    normalize: bool = True
    pool: str = "branches"  # normalization statistics, see normalize_tree

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ValueError("window_seconds must be positive")
        if self.min_events < 1 or self.max_events < self.min_events:
            raise ValueError("need 1 <= min_events <= max_events")
        if self.pool not in POOLS:
            raise ValueError(f"pool must be one of {POOLS}")

    @property
    def dim(self) -> int:
        return 1 + N_STRUCT + len(self.event_type_map)

    def to_dict(self) -> dict:
        return {"event_types": [list(p) for p in self.event_type_map.pairs],
                "window_seconds": self.window_seconds, "min_events": self.min_events,
                "max_events": self.max_events, "normalize": self.normalize, "pool": self.pool}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeaturizationConfig":
        doc = dict(doc)
        types = doc.pop("event_types", None)
        etm = EventTypeMap(types) if types is not None else EventTypeMap()
        return cls(event_type_map=etm, **doc)


@dataclass
class ParseReport:
    n_lines: int = 0
    n_events: int = 0
    missing_fields: int = 0
    malformed: list = field(default_factory=list)  # (line number, message)

    @property
    def n_errors(self) -> int:
        return self.missing_fields + len(self.malformed)


@dataclass
class LabeledDataset:
    trees: list
    labels: list
    meta: list

    def __post_init__(self):
        if not (len(self.trees) == len(self.labels) == len(self.meta)):
            raise ValueError("trees, labels and meta must have equal lengths")
        if not set(self.labels) <= {0, 1}:
            raise ValueError("labels must be binary")

    def __len__(self):
        return len(self.trees)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset([self.trees[i] for i in idx], [self.labels[i] for i in idx],
                              [self.meta[i] for i in idx])

    def to_jsonl(self) -> str:
        lines = [json.dumps({"tree": t.to_dict(), "label": int(y), "meta": m},
                            sort_keys=True, separators=(",", ":"))
                 for t, y, m in zip(self.trees, self.labels, self.meta)]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        trees, labels, meta = [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                trees.append(StreamingTree.from_dict(doc["tree"]))
                labels.append(int(doc["label"]))
                meta.append(doc.get("meta", {}))
        return cls(trees, labels, meta)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def open_events(path) -> Iterator[str]:
    """Lines from a file, a ``.gz`` file, or stdin for ``-``."""
    if path in (None, "-"):
        yield from sys.stdin
        return
    with open(path, "rb") as raw:
        magic = raw.read(2)
    opener = gzip.open if magic == b"\x1f\x8b" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        yield from fh


def parse_events(lines: Iterable[str], report: ParseReport | None = None) -> list[HostEvent]:
    """Parse newline-delimited JSON records; bad lines are reported, not raised."""
    report = report if report is not None else ParseReport()
    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        report.n_lines += 1
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            report.malformed.append((lineno, str(exc)))
            continue
        if not isinstance(doc, dict) or any(doc.get(k) in (None, "") for k in _REQUIRED):
            report.missing_fields += 1
            continue
        try:
            event = HostEvent(action=str(doc["action"]), actor_id=str(doc["actorID"]),
                              object=str(doc["object"]), object_id=str(doc["objectID"]),
                              hostname=str(doc.get("hostname", "")),
                              timestamp=int(doc["timestamp"]))
        except (TypeError, ValueError) as exc:
            report.malformed.append((lineno, str(exc)))
            continue
        events.append(event)
    report.n_events += len(events)
    return events


def read_labels(lines: Iterable[str]) -> set[str]:
    """Malicious root process ids, one per line; ``#`` starts a comment."""
    out = set()
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            out.add(line)
    return out


# ---------------------------------------------------------------------------
# Tree construction
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("times", "values", "children")

    def __init__(self):
        self.times: list[float] = []
        self.values: list[np.ndarray] = []
        self.children: list[_Node] = []

    def freeze(self) -> StreamingTree:
        return StreamingTree(TimeSeries(self.times, np.array(self.values)),
                             tuple(c.freeze() for c in self.children))


class _WindowTree:
    """Mutable builder for one (root process, window) tree."""

    def __init__(self, root_pid: str, hostname: str, window_start_ms: int, dim: int,
                 orphan: bool):
        self.root_pid = root_pid
        self.hostname = hostname
        self.window_start_ms = window_start_ms
        self.root = _Node()
        self.dim = dim
        self.orphan = orphan
        self.n_events = 0
        # process id -> (current leaf node, last time on its branch, current state)
        self.cursor: dict[str, list] = {root_pid: [self.root, -math.inf, np.zeros(dim - 1)]}

    def _append(self, node: _Node, last_t: float, t: float, state: np.ndarray) -> float:
        t = max(t, last_t + TIE_OFFSET)
        node.times.append(t)
        node.values.append(state.copy())
        return t

    def record(self, pid: str, t: float, index: int) -> None:
        """Append a point to ``pid``'s branch with state entry ``index`` incremented."""
        node, last_t, state = self.cursor[pid]
        state[index] += 1.0
        self.cursor[pid][1] = self._append(node, last_t, t, state)
        self.n_events += 1

    def spawn(self, pid: str, child_pid: str, t: float) -> None:
        node, last_t, state = self.cursor[pid]
        fork_t = self._append(node, last_t, t, state)
        self.n_events += 1
        cont, child = _Node(), _Node()
        node.children.extend([cont, child])
        parent_state = state.copy()
        parent_state[SPAWN] += 1.0
        child_state = state.copy()
        child_state[DEPTH] += 1.0
        t_cont = self._append(cont, fork_t, t, parent_state)
        t_child = self._append(child, fork_t, t, child_state)
        self.cursor[pid] = [cont, t_cont, parent_state]
        self.cursor[child_pid] = [child, t_child, child_state]

    def build(self) -> StreamingTree:
        return self.root.freeze()


def _descendants(roots: set[str], children: dict[str, list[str]]) -> set[str]:
    out = set()
    stack = list(roots)
    while stack:
        pid = stack.pop()
        if pid in out:
            continue
        out.add(pid)
        stack.extend(children.get(pid, ()))
    return out


def build_process_trees(events: Iterable[HostEvent], malicious_roots: Iterable[str] = (),
                        config: FeaturizationConfig | None = None,
                        stats: dict | None = None) -> LabeledDataset:
    """Reconstruct process trees, window them and featurize.

    ``malicious_roots`` are process ids whose whole descendant set is labelled 1.
    A tree's label is 1 when its root process is in that set. ``stats`` (if
    given) receives mapped/kept/discarded event counts.
    """
    config = config or FeaturizationConfig()
    etm = config.event_type_map
    dim = config.dim
    window_ms = int(round(config.window_seconds * 1000))

    by_host: dict[str, list[tuple[int, HostEvent]]] = {}
    for pos, ev in enumerate(events):
        by_host.setdefault(ev.hostname, []).append((pos, ev))

    trees, labels, meta = [], [], []
    counters = {"mapped": 0, "kept": 0, "discarded": 0, "discarded_trees": 0}
    malicious_roots = set(malicious_roots)

    for host in sorted(by_host):
        host_events = [ev for _, ev in sorted(by_host[host], key=lambda p: (p[1].timestamp, p[0]))]
        children: dict[str, list[str]] = {}
        for ev in host_events:
            if (ev.object, ev.action) == PROCESS_CREATE:
                children.setdefault(ev.actor_id, []).append(ev.object_id)
        malicious = _descendants(malicious_roots, children)

        created: set[str] = set()
        owner: dict[tuple[int, str], _WindowTree] = {}  # (window, pid) -> tree
        finished: list[_WindowTree] = []

        for ev in host_events:
            is_create = (ev.object, ev.action) == PROCESS_CREATE
            channel = etm.channel(ev.object, ev.action)
            if not is_create and channel is None:
                continue
            counters["mapped"] += 1
            window = ev.timestamp // window_ms
            wstart = window * window_ms
            t = (ev.timestamp - wstart) / 1000.0
            key = (window, ev.actor_id)
            tree = owner.get(key)
            if tree is None:
                orphan = ev.actor_id not in created
                if orphan:
                    logger.debug("orphan actor %s on %s", ev.actor_id, host)
                tree = _WindowTree(ev.actor_id, host, wstart, dim, orphan)
                owner[key] = tree
                finished.append(tree)
            if is_create:
                created.add(ev.object_id)
                child_key = (window, ev.object_id)
                if child_key in owner:
                    # child already active in this window: count the spawn only
                    tree.record(ev.actor_id, t, SPAWN)
                else:
                    tree.spawn(ev.actor_id, ev.object_id, t)
                    owner[child_key] = tree
            else:
                tree.record(ev.actor_id, t, N_STRUCT + channel)

        for wt in sorted(finished, key=lambda w: (w.window_start_ms, w.root_pid)):
            if not config.min_events <= wt.n_events <= config.max_events:
                counters["discarded"] += wt.n_events
                counters["discarded_trees"] += 1
                continue
            tree = wt.build()
            if config.normalize:
                tree = normalize_tree(tree, config.window_seconds, pool=config.pool)
            trees.append(tree)
            labels.append(int(wt.root_pid in malicious))
            meta.append({"hostname": wt.hostname, "window_start": wt.window_start_ms,
                         "root": wt.root_pid, "orphan": wt.orphan, "n_events": wt.n_events})
            counters["kept"] += wt.n_events

    if stats is not None:
        stats.update(counters)
    return LabeledDataset(trees, labels, meta)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _map_values(tree: StreamingTree, fn) -> StreamingTree:
    return StreamingTree(TimeSeries(*fn(tree.series.times, tree.series.values)),
                         tuple(_map_values(c, fn) for c in tree.children))


def normalize_tree(tree: StreamingTree, window_seconds: float | None = None,
                   window_start: float = 0.0, pool: str = "branches") -> StreamingTree:
    """Standardize value channels and rescale time to [0, 1] over the window.

    One mean and population sd per channel is used for the whole tree, so
    shared prefixes keep identical values on every branch. ``pool="branches"``
    pools over all knots of all branches (shared knots weighted by the number
    of branches through them); ``pool="nodes"`` counts every node knot once.
    Channels with sd below 1e-12 become 0. Without a window, time is rescaled
    over the tree's own time span.
    """
    if pool not in POOLS:
        raise ValueError(f"pool must be one of {POOLS}")
    branches = enumerate_branches(tree)
    if pool == "branches":
        pooled = np.concatenate([b.values for b in branches], axis=0)
    else:
        pooled = np.concatenate([n.series.values for n in tree.nodes()], axis=0)
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    degenerate = sd < 1e-12
    safe_sd = np.where(degenerate, 1.0, sd)

    if window_seconds is not None:
        t0, span = window_start, window_seconds
    else:
        all_t = np.concatenate([b.times for b in branches])
        t0, span = float(all_t.min()), float(all_t.max() - all_t.min()) or 1.0

    def fn(times, values):
        z = (values - mean) / safe_sd
        z[:, degenerate] = 0.0
        return (times - t0) / span, z

    return _map_values(tree, fn)


def dataset_stats(dataset: LabeledDataset) -> dict:
    from .tree_model import branch_count, event_count
    out = {"n_trees": len(dataset), "n_positive": int(sum(dataset.labels))}
    if len(dataset):
        out["mean_branches"] = float(np.mean([branch_count(t) for t in dataset.trees]))
        out["mean_points"] = float(np.mean([event_count(t) for t in dataset.trees]))
    return out
