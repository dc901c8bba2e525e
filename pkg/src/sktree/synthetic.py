"""Synthetic process activity shaped like ingested eCAR data.

Trees are produced by simulating raw host events and running them through
:func:`sktree.ingest.build_process_trees`, so the featurization is exactly
the one applied to real logs.
"""
from __future__ import annotations

import logging

import numpy as np

from .ingest import FeaturizationConfig, HostEvent, LabeledDataset, build_process_trees

logger = logging.getLogger(__name__)

PROFILES = ("separable", "null")

# (object, action) mixes: benign services load modules and touch the registry,
# the malicious profile writes/deletes files, opens flows and runs shells.
BENIGN_MIX = {
    ("MODULE", "LOAD"): 0.35, ("REGISTRY", "EDIT"): 0.15, ("THREAD", "CREATE"): 0.15,
    ("FILE", "READ"): 0.2, ("PROCESS", "OPEN"): 0.1, ("PROCESS", "TERMINATE"): 0.05,
}
MALICIOUS_MIX = {
    ("FILE", "WRITE"): 0.25, ("FILE", "DELETE"): 0.15, ("FILE", "RENAME"): 0.1,
    ("FLOW", "START"): 0.15, ("FLOW", "MESSAGE"): 0.15, ("SHELL", "COMMAND"): 0.1,
    ("THREAD", "REMOTE_CREATE"): 0.1,
}

_CLASS_PARAMS = {
    # spawn probability per event, max depth, events per process (mean), burstiness
    0: {"mix": BENIGN_MIX, "spawn": 0.08, "depth": 1, "events": 6, "burst": 0.0},
    1: {"mix": MALICIOUS_MIX, "spawn": 0.2, "depth": 2, "events": 4, "burst": 0.6},
}


def _simulate_process(rng, pid, t_start, t_end, params, depth, counter, out):
    mix = params["mix"]
    kinds = list(mix)
    probs = np.array([mix[k] for k in kinds])
    probs = probs / probs.sum()
    n = 1 + rng.poisson(params["events"])
    t_start = min(t_start, t_end)
    if rng.random() < params["burst"]:
        centre = rng.uniform(t_start, t_end)
        times = np.clip(rng.normal(centre, 5_000.0, n), t_start, t_end)
    else:
        times = rng.uniform(t_start, t_end, n)
    for t in np.sort(times).astype(np.int64):
        if depth < params["depth"] and rng.random() < params["spawn"]:
            counter[0] += 1
            child = f"{pid}.{counter[0]}"
            out.append(HostEvent("CREATE", pid, "PROCESS", child, "synth-host", int(t)))
            _simulate_process(rng, child, int(t) + 1, t_end, params, depth + 1, counter, out)
        else:
            obj, action = kinds[rng.choice(len(kinds), p=probs)]
            out.append(HostEvent(action, pid, obj, f"obj-{rng.integers(1 << 30)}",
                                 "synth-host", int(t)))


def generate_synthetic(n_per_class: int, seed: int = 0, profile: str = "separable",
                       config: FeaturizationConfig | None = None) -> LabeledDataset:
    """Labeled dataset with ``n_per_class`` trees of each class.

    ``"separable"`` draws class 1 from a deeper, more branching, bursty
    profile with a file/network-heavy activity mix; ``"null"`` draws every
    tree from a 50/50 mixture of the two profiles regardless of label.
    Trees outside the configured event-count filter are redrawn.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    config = config or FeaturizationConfig()
    rng = np.random.default_rng(seed)
    window_ms = int(round(config.window_seconds * 1000))

    trees, labels, meta = [], [], []
    slot = 0
    for label in [0] * n_per_class + [1] * n_per_class:
        while True:
            source = label if profile == "separable" else int(rng.random() < 0.5)
            root = f"p{slot:06d}"
            t0 = slot * window_ms
            slot += 1
            events: list[HostEvent] = []
            _simulate_process(rng, root, t0 + 1_000, t0 + window_ms - 60_000,
                              _CLASS_PARAMS[source], 0, [0], events)
            ds = build_process_trees(events, {root} if label else set(), config)
            tree_idx = [i for i, m in enumerate(ds.meta) if m["root"] == root]
            if tree_idx:
                i = tree_idx[0]
                trees.append(ds.trees[i])
                labels.append(label)
                meta.append(dict(ds.meta[i], profile=profile, source_class=source))
                break
    if n_per_class < 5:
        logger.warning("synthetic dataset with %d trees per class is too small for CV",
                       n_per_class)
    for m in meta:
        m["too_small_for_cv"] = n_per_class < 5
    return LabeledDataset(trees, labels, meta)
