import gzip
import json
from pathlib import Path

import numpy as np
import pytest

from sktree.ingest import (DEFAULT_EVENT_TYPES, EventTypeMap, FeaturizationConfig, HostEvent,
                           LabeledDataset, ParseReport, build_process_trees, normalize_tree,
                           open_events, parse_events, read_labels)
from sktree.tree_model import (StreamingTree, TimeSeries, branch_count, enumerate_branches,
                               event_count)

GOLDEN = Path(__file__).parent / "data" / "golden_events.jsonl"
RAW = FeaturizationConfig(normalize=False)
DIM = 23
WINDOW_1000 = 1000 * 900_000
CH = {pair: i for i, pair in enumerate(DEFAULT_EVENT_TYPES)}

EXAMPLE_RECORD = ('{"action":"CREATE",\n"actorID":"437acfc7-d9ef-4c60-a108-...",\n'
                  '"hostname":"SysClient0201.systemia.com",\n"object":"PROCESS",\n'
                  '"objectID":"b9d06a48-0968-4bda-b743-...",\n"properties":{},\n'
                  '"timestamp":1569245579591}')


def row(t, depth=0, spawn=0, **counts):
    """Raw 23-channel knot; ``counts`` keys are ``OBJECT_ACTION``."""
    out = np.zeros(DIM)
    out[0], out[1], out[2] = t, depth, spawn
    for key, n in counts.items():
        obj, action = key.split("_", 1)
        out[3 + CH[(obj, action)]] = n
    return out


def node(rows, *children):
    rows = np.array(rows)
    return StreamingTree(TimeSeries(rows[:, 0], rows[:, 1:]), tuple(children))


def ev(action, actor, obj, oid, ts, host="h"):
    return HostEvent(action, actor, obj, oid, host, ts)


def assert_same_tree(actual, expected):
    assert branch_count(actual) == branch_count(expected)
    for a, e in zip(enumerate_branches(actual), enumerate_branches(expected)):
        np.testing.assert_allclose(a.times, e.times, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(a.values, e.values)
    assert [len(n.series) for n in actual.nodes()] == [len(n.series) for n in expected.nodes()]


# -- parsing ------------------------------------------------------------------

def test_example_record_parses_exactly():
    events = parse_events([json.dumps(json.loads(EXAMPLE_RECORD))])
    assert events == [HostEvent(action="CREATE", actor_id="437acfc7-d9ef-4c60-a108-...",
                                object="PROCESS", object_id="b9d06a48-0968-4bda-b743-...",
                                hostname="SysClient0201.systemia.com",
                                timestamp=1569245579591)]


def test_empty_and_bad_lines():
    report = ParseReport()
    assert parse_events([], report) == []
    assert report.n_errors == 0
    lines = ['{"action":"READ","actorID":"a","object":"FILE","objectID":"f"}',
             "{not json", "", '{"action":"READ","actorID":"a","object":"FILE",'
             '"objectID":"f","timestamp":5,"extra":1}']
    events = parse_events(lines, report)
    assert len(events) == 1 and events[0].timestamp == 5
    assert report.missing_fields == 1
    assert [n for n, _ in report.malformed] == [2]
    assert report.n_errors == 2


def test_host_event_invariants():
    with pytest.raises(ValueError):
        ev("READ", "", "FILE", "f", 0)
    with pytest.raises(ValueError):
        ev("READ", "a", "FILE", "f", -1)


def test_event_type_map_rules():
    assert len(EventTypeMap()) == 20
    assert RAW.dim == 23
    with pytest.raises(ValueError):
        EventTypeMap([("PROCESS", "CREATE")])
    with pytest.raises(ValueError):
        EventTypeMap([("FILE", "READ"), ("FILE", "READ")])
    with pytest.raises(ValueError):
        FeaturizationConfig(min_events=3, max_events=2)


def test_read_labels():
    assert read_labels(["a\n", "# comment\n", " b  # trailing\n", "\n"]) == {"a", "b"}


def test_gzip_and_plain_input(tmp_path):
    plain = GOLDEN.read_text()
    gz = tmp_path / "events.jsonl.gz"
    with gzip.open(gz, "wt") as fh:
        fh.write(plain)
    assert parse_events(open_events(gz)) == parse_events(open_events(GOLDEN))


# -- tree construction --------------------------------------------------------

def test_delete_then_create_splits_into_two_branches():
    t1, t2 = WINDOW_1000 + 1000, WINDOW_1000 + 2000
    data = build_process_trees([ev("DELETE", "p", "FILE", "f", t1),
                                ev("CREATE", "p", "PROCESS", "c", t2)], config=RAW)
    (tree,) = data.trees
    assert len(tree.series) >= 2 and branch_count(tree) == 2
    parent, child = enumerate_branches(tree)
    # parent branch: spawn count 0 -> 1 across t2
    assert parent.values[:, 1].tolist() == [0, 0, 1]
    assert parent.times[-1] == pytest.approx(2.0 + 1e-6)
    # child branch: depth parent + 1 from the fork onward
    assert child.values[:, 0].tolist() == [0, 0, 1]
    assert child.values[-1, 2 + CH[("FILE", "DELETE")]] == 1


def test_event_count_filter_bounds():
    one = [ev("READ", "p", "FILE", "f", 10)]
    assert len(build_process_trees(one, config=RAW)) == 0
    many = [ev("READ", "p", "FILE", "f", 10 + k) for k in range(201)]
    stats = {}
    assert len(build_process_trees(many, config=RAW, stats=stats)) == 0
    assert stats["discarded_trees"] == 1 and stats["discarded"] == 201
    assert len(build_process_trees(many[:200], config=RAW)) == 1
    assert len(build_process_trees(one * 2, config=RAW)) == 1


def test_timestamp_ties_are_offset():
    events = [ev("READ", "p", "FILE", "f", 7000)] * 3
    (tree,) = build_process_trees(events, config=RAW).trees
    np.testing.assert_allclose(tree.series.times, [7.0, 7.000001, 7.000002], atol=1e-12)


def test_orphans_and_labels():
    events = [ev("CREATE", "root", "PROCESS", "kid", 1000),
              ev("READ", "kid", "FILE", "f", 2000),
              ev("READ", "stray", "FILE", "f", 3000),
              ev("READ", "stray", "FILE", "f", 4000),
              ev("CREATE", "kid", "PROCESS", "grandkid", 900_500),
              ev("READ", "grandkid", "FILE", "f", 900_600)]
    data = build_process_trees(events, {"kid"}, RAW)
    roots = [(m["window_start"], m["root"], m["orphan"]) for m in data.meta]
    assert roots == [(0, "root", True), (0, "stray", True), (900_000, "kid", False)]
    assert data.labels == [0, 0, 1]


def test_golden_log_parse_report():
    report = ParseReport()
    events = parse_events(open_events(GOLDEN), report)
    assert report.n_lines == 30
    assert len(events) == 28
    assert report.missing_fields == 1
    assert [n for n, _ in report.malformed] == [25]


def golden_dataset(roots=("B",)):
    stats = {}
    data = build_process_trees(parse_events(open_events(GOLDEN)), set(roots), RAW, stats)
    return data, stats


def test_golden_log_tree_set():
    data, stats = golden_dataset()
    assert [(m["hostname"], m["window_start"], m["root"]) for m in data.meta] == [
        ("h1", WINDOW_1000, "A"), ("h1", WINDOW_1000, "D"),
        ("h1", WINDOW_1000 + 900_000, "A"), ("h1", WINDOW_1000 + 900_000, "B"),
        ("h2", WINDOW_1000, "X")]
    assert [m["orphan"] for m in data.meta] == [True, True, True, False, True]
    assert [m["n_events"] for m in data.meta] == [11, 3, 2, 3, 6]
    assert data.labels == [0, 0, 0, 1, 0]
    # 26 mapped events: 25 kept, 1 in the single-event tree of process E
    assert stats == {"mapped": 26, "kept": 25, "discarded": 1, "discarded_trees": 1}
    assert golden_dataset(("A",))[0].labels == [1, 0, 1, 1, 0]

    eps = 1e-6
    A = node([row(1.0, FILE_READ=1), row(2.0, FILE_READ=1)],
             node([row(2.0 + eps, 0, 1, FILE_READ=1),
                   row(4.0, 0, 1, FILE_READ=1, MODULE_LOAD=1),
                   row(7.0, 0, 1, FILE_READ=1, MODULE_LOAD=1, FILE_DELETE=1),
                   row(9.0, 0, 1, FILE_READ=1, MODULE_LOAD=1, FILE_DELETE=1, REGISTRY_ADD=1)]),
             node([row(2.0 + eps, 1, 0, FILE_READ=1),
                   row(3.0, 1, 0, FILE_READ=1, FILE_WRITE=1),
                   row(3.0 + eps, 1, 0, FILE_READ=1, FILE_WRITE=2),
                   row(5.0, 1, 0, FILE_READ=1, FILE_WRITE=2)],
                  node([row(5.0 + eps, 1, 1, FILE_READ=1, FILE_WRITE=2)]),
                  node([row(5.0 + eps, 2, 0, FILE_READ=1, FILE_WRITE=2),
                        row(6.0, 2, 0, FILE_READ=1, FILE_WRITE=2, FLOW_START=1),
                        row(8.0, 2, 0, FILE_READ=1, FILE_WRITE=2, FLOW_START=1,
                            REGISTRY_EDIT=1),
                        row(200.0, 2, 0, FILE_READ=1, FILE_WRITE=2, FLOW_START=1,
                            REGISTRY_EDIT=1, FILE_RENAME=1)])))
    D = node([row(1.5, FILE_CREATE=1), row(2.5, FILE_CREATE=2),
              row(3.5, FILE_CREATE=2, THREAD_CREATE=1)])
    A2 = node([row(0.1, FILE_READ=1), row(0.3, FILE_READ=2)])
    B2 = node([row(0.2, FILE_WRITE=1), row(0.4, FILE_WRITE=1)],
              node([row(0.4 + eps, 0, 1, FILE_WRITE=1)]),
              node([row(0.4 + eps, 1, 0, FILE_WRITE=1),
                    row(0.5, 1, 0, FILE_WRITE=1, FILE_MODIFY=1)]))
    X = node([row(0.5, PROCESS_OPEN=1), row(1.0, PROCESS_OPEN=1)],
             node([row(1.0 + eps, 0, 1, PROCESS_OPEN=1), row(1.0 + 2 * eps, 0, 1, PROCESS_OPEN=1)],
                  node([row(1.0 + 3 * eps, 0, 2, PROCESS_OPEN=1)]),
                  # counters carry forward, so Z inherits X's earlier spawn of Y
                  node([row(1.0 + 3 * eps, 1, 1, PROCESS_OPEN=1),
                        row(3.0, 1, 1, PROCESS_OPEN=1, TASK_CREATE=1)])),
             node([row(1.0 + eps, 1, 0, PROCESS_OPEN=1),
                   row(2.0, 1, 0, PROCESS_OPEN=1, SHELL_COMMAND=1),
                   row(4.0, 1, 0, PROCESS_OPEN=1, SHELL_COMMAND=1, PROCESS_TERMINATE=1)]))
    for actual, expected in zip(data.trees, [A, D, A2, B2, X]):
        assert_same_tree(actual, expected)
    # every spawn adds two knots on top of its event
    assert [event_count(t) for t in data.trees] == [15, 3, 2, 5, 10]


def test_counters_non_decreasing_along_branches():
    data, _ = golden_dataset()
    for tree in data.trees:
        for b in enumerate_branches(tree):
            assert np.all(np.diff(b.values, axis=0) >= 0)


def test_ingestion_is_deterministic(tmp_path):
    a, _ = golden_dataset()
    b, _ = golden_dataset()
    assert a.to_jsonl() == b.to_jsonl()
    # input order only matters among events sharing a timestamp
    events = parse_events(open_events(GOLDEN))
    shuffled = sorted(events, key=lambda e: -e.timestamp)
    c = build_process_trees(shuffled, {"B"}, RAW)
    assert c.to_jsonl() == a.to_jsonl()
    a.save(tmp_path / "d.jsonl")
    assert LabeledDataset.load(tmp_path / "d.jsonl").to_jsonl() == a.to_jsonl()


# -- normalization ------------------------------------------------------------

def test_normalize_examples():
    tree = StreamingTree(TimeSeries([900.0, 1350.0, 1800.0], [[0.0, 5.0], [2.0, 5.0], [2.0, 5.0]]))
    out = normalize_tree(tree, window_seconds=900.0, window_start=900.0)
    np.testing.assert_allclose(out.series.times, [0.0, 0.5, 1.0])
    assert np.all(out.series.values[:, 1] == 0.0)
    two = normalize_tree(StreamingTree(TimeSeries([0.0, 1.0], [[0.0], [2.0]])))
    np.testing.assert_allclose(two.series.values[:, 0], [-1.0, 1.0])


def test_normalize_pools_over_branches():
    data, _ = golden_dataset()
    tree = normalize_tree(data.trees[0], 900.0)
    values = np.concatenate([b.values for b in enumerate_branches(tree)])
    live = values.std(axis=0) > 0
    np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(values.std(axis=0)[live], 1.0)
    # shared prefix identical on every branch
    first = [b.values[:2] for b in enumerate_branches(tree)]
    assert all(np.array_equal(first[0], f) for f in first)
    with pytest.raises(ValueError):
        normalize_tree(tree, pool="leaves")


def test_default_config_normalizes():
    data = build_process_trees(parse_events(open_events(GOLDEN)), {"B"})
    for tree in data.trees:
        times = np.concatenate([b.times for b in enumerate_branches(tree)])
        assert times.min() >= 0.0 and times.max() <= 1.0
