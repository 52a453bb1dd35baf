import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagacfl.fedcore import ParamVector
from dagacfl.ledger import DagLedger, GenesisConfig
from dagacfl.tipselect import (ADAPTIVE, TOPK, DegenerateVectorError, RankedTip, TipSelectConfig, adaptive_cutoff,
                               rank_tips, select, select_adaptive, select_topk, similarity)

LAYERS = ("W",)


def _pv(*values):
    v = np.asarray(values, dtype=float)
    return ParamVector(v, (("W", 0, v.size),))


def _ledger_with(payloads, creators=None):
    led = DagLedger(GenesisConfig(_pv(*np.ones(len(payloads[0])))))
    hashes = []
    for i, p in enumerate(payloads):
        hashes.append(led.append(i if creators is None else creators[i], p, [led.genesis_hash], i + 1, 1))
    return led, hashes


def _ranking(sims):
    return [RankedTip(f"{i:064x}", s, i) for i, s in enumerate(sims)]


def test_similarity_examples():
    assert similarity(_pv(1, 2), _pv(1, 2), LAYERS) == pytest.approx(1.0)
    assert similarity(_pv(1, 0), _pv(0, 1), LAYERS) == 0.0
    assert similarity(_pv(1, 2, 2), _pv(2, 4, 4), LAYERS) == pytest.approx(1.0)
    assert similarity(_pv(1, 0), _pv(-3, 0), LAYERS) == pytest.approx(-1.0)
    assert similarity(_pv(1, 1), _pv(1, 0), LAYERS) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_similarity_uses_only_named_layers():
    layout = (("W", 0, 2), ("b", 2, 1))
    a = ParamVector(np.array([1.0, 0.0, 5.0]), layout)
    b = ParamVector(np.array([2.0, 0.0, -7.0]), layout)
    assert similarity(a, b, ("W",)) == pytest.approx(1.0)
    assert similarity(a, b, ("W", "b")) < 0


def test_similarity_zero_norm():
    with pytest.raises(DegenerateVectorError):
        similarity(_pv(0, 0), _pv(1, 0), LAYERS)


vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(0.01, 100))
def test_similarity_properties(a, b, c):
    pa, pb = _pv(*a), _pv(*b)
    s = similarity(pa, pb, LAYERS)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(similarity(pb, pa, LAYERS), abs=1e-12)
    assert s == pytest.approx(similarity(_pv(*(np.array(a) * c)), pb, LAYERS), abs=1e-9)


def test_rank_single_tip_and_equal_before_orthogonal():
    led, hashes = _ledger_with([_pv(1, 0)])
    assert [e.hash for e in rank_tips(led, _pv(3, 0), TipSelectConfig(similarity_layers=LAYERS))] == hashes
    led, (eq, orth) = _ledger_with([_pv(2, 1), _pv(-1, 2)])
    ranking = rank_tips(led, _pv(2, 1), TipSelectConfig(similarity_layers=LAYERS))
    assert [e.hash for e in ranking] == [eq, orth]


def test_rank_five_tips_against_sort_oracle():
    payloads = [_pv(1, 0, 0), _pv(0, 1, 0), _pv(1, 1, 0), _pv(-1, 0, 0), _pv(1, 0.1, 0.2)]
    led, hashes = _ledger_with(payloads)
    query = _pv(1, 0.2, 0)
    ranking = rank_tips(led, query, TipSelectConfig(similarity_layers=LAYERS))
    q = query.values
    expected = sorted(range(5), key=lambda i: -float(q @ payloads[i].values
                                                      / np.linalg.norm(q) / np.linalg.norm(payloads[i].values)))
    assert [e.hash for e in ranking] == [hashes[i] for i in expected]
    assert [e.creator for e in ranking] == expected


def test_ties_broken_by_hash_and_degenerate_last():
    led, hashes = _ledger_with([_pv(1, 0), _pv(2, 0), _pv(0, 0)])
    ranking = rank_tips(led, _pv(1, 0), TipSelectConfig(similarity_layers=LAYERS))
    assert [e.hash for e in ranking[:2]] == sorted(hashes[:2])
    assert ranking[-1].hash == hashes[2] and ranking[-1].similarity == -1.0


def test_topk_examples():
    r = _ranking([0.9, 0.8, 0.7, 0.6, 0.5])
    assert select_topk(r, 2) == [r[0].hash, r[1].hash]
    assert select_topk(r, 9) == [e.hash for e in r]
    assert select_topk(r, 1) == [r[0].hash]
    with pytest.raises(ValueError):
        select_topk(r, 0)


def test_adaptive_examples():
    cfg = TipSelectConfig(ADAPTIVE, nt=1, alpha=0.5)
    r = _ranking([0.98, 0.97, 0.96, 0.12, 0.11])
    assert select_adaptive(r, cfg) == [e.hash for e in r[:3]]
    flat = _ranking([0.5, 0.5, 0.5, 0.5])
    assert select_adaptive(flat, cfg) == [e.hash for e in flat]
    early = _ranking([0.99, 0.1, 0.1, 0.1, 0.1, 0.1])
    assert adaptive_cutoff(early, cfg) == 1
    assert len(select_adaptive(early, TipSelectConfig(ADAPTIVE, nt=2, alpha=0.5))) == 2


def test_select_dispatch_and_config_validation():
    r = _ranking([0.9, 0.1, 0.05])
    assert select(r, TipSelectConfig(TOPK, nt=2)) == [r[0].hash, r[1].hash]
    for bad in (dict(mode="random"), dict(nt=0), dict(alpha=1.0)):
        with pytest.raises(ValueError):
            TipSelectConfig(**bad)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=15), st.integers(1, 4))
def test_selections_are_ranking_prefixes(sims, nt):
    r = _ranking(sorted(sims, reverse=True))
    hashes = [e.hash for e in r]
    top = select_topk(r, nt)
    assert top == hashes[:len(top)]
    ada = select_adaptive(r, TipSelectConfig(ADAPTIVE, nt=nt))
    assert ada == hashes[:len(ada)]
    assert len(ada) >= min(nt, len(r))


def _unit(v):
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("seed", range(5))
def test_cluster_recovery(seed):
    rng = np.random.default_rng(seed)
    dim = 40
    while True:
        centroids = [_unit(rng.normal(size=dim)) for _ in range(3)]
        if all(abs(centroids[i] @ centroids[j]) < 0.3 for i in range(3) for j in range(i)):
            break
    params, truth = [], []
    for k, c in enumerate(centroids):
        for _ in range(4):
            while True:
                p = c + 0.15 * rng.normal(size=dim) / math.sqrt(dim)
                if _unit(p) @ c > 0.95:
                    break
            params.append(_pv(*p))
            truth.append(k)
    for i in range(len(params)):
        for j in range(len(params)):
            if truth[i] == truth[j]:
                assert similarity(params[i], params[j], LAYERS) > 0.9
    led, hashes = _ledger_with(params)
    cfg = TipSelectConfig(ADAPTIVE, nt=1, alpha=0.5, similarity_layers=LAYERS)
    for i, p in enumerate(params):
        chosen = set(select(rank_tips(led, p, cfg), cfg))
        same = {h for h, k in zip(hashes, truth) if k == truth[i]}
        assert chosen == same
