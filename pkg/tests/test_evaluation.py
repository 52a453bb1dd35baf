import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagacfl.evaluation import (ClientGraph, approval_edges, build_graph, community_count, louvain,
                                misclassification, modularity, round_cluster_metrics, satisfaction_rate)
from dagacfl.fedcore import ParamVector
from dagacfl.ledger import GENESIS_CREATOR, DagLedger, GenesisConfig
from dagacfl.trace import TraceEvent

G = "00" * 32


def set_partitions(n):
    """Every partition of range(n) as a restricted growth string."""
    def rec(prefix, k):
        if len(prefix) == n:
            yield list(prefix)
            return
        for c in range(k + 1):
            yield from rec(prefix + [c], max(k, c + 1))
    yield from rec([0], 1)


def brute_max(g):
    return max(modularity(g, p) for p in set_partitions(g.n))


def random_graph(rng, n):
    A = np.triu(rng.integers(0, 3, size=(n, n)) * (rng.random((n, n)) < 0.5), 1).astype(float)
    A = A + A.T
    if A.sum() == 0:
        A[0, 1] = A[1, 0] = 1.0
    return ClientGraph(A)


def test_partition_enumeration_counts():
    assert [sum(1 for _ in set_partitions(n)) for n in range(1, 8)] == [1, 2, 5, 15, 52, 203, 877]


def test_louvain_matches_brute_force():
    rng = np.random.default_rng(2024)
    hits = 0
    for trial in range(100):
        g = random_graph(rng, int(rng.integers(3, 8)))
        best = brute_max(g)
        part, q = louvain(g, seed=trial)
        assert q <= best + 1e-9
        assert q == pytest.approx(modularity(g, part), abs=1e-12)
        assert sorted(set(part)) == list(range(max(part) + 1))
        hits += q >= best - 1e-9
    assert hits >= 95


def test_two_disjoint_edges():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    g = ClientGraph(A)
    assert modularity(g, [0, 0, 1, 1]) == pytest.approx(0.5)
    part, q = louvain(g)
    assert q == pytest.approx(0.5) and part == [0, 0, 1, 1]


def test_two_cliques_found():
    A = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    A[i, j] = 1
    part, q = louvain(ClientGraph(A))
    assert part == [0] * 4 + [1] * 4
    assert q == pytest.approx(brute_max(ClientGraph(A)))


def test_complete_graph_has_no_structure():
    A = np.ones((6, 6)) - np.eye(6)
    _, q = louvain(ClientGraph(A))
    assert q <= 1e-9 and brute_max(ClientGraph(A)) <= 1e-9


def test_empty_graph_rejected():
    g = ClientGraph(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        modularity(g, [0, 1, 2])
    with pytest.raises(ValueError):
        louvain(g)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_modularity_identities(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    assert abs(modularity(g, [0] * n)) < 1e-12
    part = rng.integers(0, 3, size=n).tolist()
    assert -0.5 - 1e-12 <= modularity(g, part) <= 1 + 1e-12
    _, q = louvain(g, seed)
    assert q >= modularity(g, list(range(n))) - 1e-12


def _event(client, selected, available=(), rnd=1):
    return TraceEvent(rnd, 0, client, 0, False, False, list(available), list(selected), "ff" * 32, 0, {})


def test_build_graph_counts_and_skips():
    events = [_event(0, [("a", 1)]), _event(1, [("b", 0)]), _event(0, [("c", 1), ("g", GENESIS_CREATOR)]),
              _event(2, [("d", 2)])]
    g = build_graph(events, 3)
    assert g.weights[0, 1] == g.weights[1, 0] == 3
    assert g.weights[2].sum() == 0  # self-approval only
    assert g.m == 3
    np.testing.assert_array_equal(g.weights, g.weights.T)


def test_hand_counted_three_client_fixture():
    # 0 approves 1 twice, 2 approves 0 once and 1 once, 1 approves 2 once, 0 approves itself once
    events = [_event(0, [("x", 1)]), _event(0, [("x", 1), ("y", 0)]), _event(2, [("p", 0), ("q", 1)]),
              _event(1, [("r", 2)])]
    expected = np.array([[0, 2, 1], [2, 0, 2], [1, 2, 0]], dtype=float)
    np.testing.assert_array_equal(build_graph(events, 3).weights, expected)


def test_graph_from_ledger_equals_graph_from_trace():
    pv = ParamVector(np.array([1.0]), (("W", 0, 1),))
    led = DagLedger(GenesisConfig(pv))
    a = led.append(0, pv, [led.genesis_hash], 1, 1)
    b = led.append(1, pv, [led.genesis_hash], 2, 1)
    led.append(2, pv, [a, b], 3, 2)
    led.append(0, pv, [a], 4, 2)
    from_ledger = build_graph(led, 3)
    assert sorted(approval_edges(led)) == [(0, 0), (2, 0), (2, 1)]
    assert sorted(approval_edges(led.dump())) == [(0, 0), (2, 0), (2, 1)]
    assert from_ledger.m == 2


def test_satisfaction_and_misclassification():
    truth = [0, 0, 0, 1, 1]
    avail = [("a", 1, 0.9), ("b", 2, 0.8), ("c", 0, 0.7), ("d", 4, 0.1), ("g", GENESIS_CREATOR, 0.0)]
    assert satisfaction_rate(_event(0, [("a", 1), ("b", 2), ("c", 0)], avail), truth) == 1.0
    assert satisfaction_rate(_event(0, [("a", 1)], avail[:2] + [("x", 1, 0.5), ("y", 0, 0.5)]), truth) == 0.25
    assert satisfaction_rate(_event(3, [("g", GENESIS_CREATOR)], [("g", GENESIS_CREATOR, 1.0)]), truth) is None
    ok = _event(0, [("a", 1), ("g", GENESIS_CREATOR)], avail)
    bad = _event(0, [("a", 1), ("d", 4)], avail)
    assert misclassification([ok], truth) == 0
    assert misclassification([ok, bad], truth) == 1


def test_round_metrics_skip_undefined_mr():
    truth = [0, 1]
    events = [_event(0, [("g", GENESIS_CREATOR)], [("g", GENESIS_CREATOR, 1.0)]),
              _event(1, [("g", GENESIS_CREATOR)], [("g", GENESIS_CREATOR, 1.0)])]
    cm = round_cluster_metrics(events, events, 2, truth)
    assert np.isnan(cm.modularity) and cm.community_count == 0
    assert np.isnan(cm.mr_mean) and cm.mr_skipped == 2 and cm.misclassification == 0


def test_community_count_ignores_isolated():
    A = np.zeros((5, 5))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    g = ClientGraph(A)
    part, _ = louvain(g)
    assert community_count(g, part) == 2
