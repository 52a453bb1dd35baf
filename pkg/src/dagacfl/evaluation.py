"""Cluster-quality analytics over approval graphs and traces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ledger import GENESIS_CREATOR, DagLedger, Transaction
from .trace import TraceEvent

_EPS = 1e-12


@dataclass(frozen=True)
class ClientGraph:
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def m(self) -> float:
        return float(self.weights.sum()) / 2.0


def approval_edges(source) -> list[tuple[int, int]]:
    """(child creator, parent creator) for every approval, genesis parents skipped.

    ``source`` may be a ledger, transactions, ledger dump records, or trace events.
    """
    if isinstance(source, DagLedger):
        source = list(source)
    items = list(source)
    edges: list[tuple[int, int]] = []
    if items and isinstance(items[0], TraceEvent):
        for ev in items:
            edges.extend((ev.client, c) for _, c in ev.selected if c != GENESIS_CREATOR)
        return edges
    creator: dict[str, int] = {}
    parents: list[tuple[int, Sequence[str]]] = []
    for tx in items:
        if isinstance(tx, Transaction):
            h, c, ps = tx.hash, tx.creator, tx.parents
        else:
            h, c, ps = tx["hash"], int(tx["creator"]), tx["parents"]
        creator[h] = c
        parents.append((c, ps))
    for c, ps in parents:
        edges.extend((c, creator[p]) for p in ps if creator[p] != GENESIS_CREATOR)
    return edges


def build_graph(source, n_clients: int | None = None) -> ClientGraph:
    """Symmetric approval-count matrix between clients; self-approvals are dropped."""
    edges = approval_edges(source)
    if n_clients is None:
        n_clients = 1 + max((max(e) for e in edges), default=-1)
    A = np.zeros((n_clients, n_clients))
    for i, j in edges:
        if i != j:
            A[i, j] += 1
            A[j, i] += 1
    return ClientGraph(A)


def modularity(g: ClientGraph, partition: Sequence[int]) -> float:
    m = g.m
    if m <= 0:
        raise ValueError("modularity is undefined on a graph without edges")
    labels = np.asarray(partition)
    k = g.degrees
    same = labels[:, None] == labels[None, :]
    return float(((g.weights - np.outer(k, k) / (2 * m)) * same).sum() / (2 * m))


def _dense(labels: Sequence[int]) -> list[int]:
    seen: dict[int, int] = {}
    return [seen.setdefault(c, len(seen)) for c in labels]


def _local_moves(A: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    n = A.shape[0]
    k = A.sum(axis=1)
    two_m = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n):
            if k[i] == 0:
                continue
            own = comm[i]
            tot[own] -= k[i]
            links = np.bincount(comm, weights=A[i], minlength=n)
            links[own] -= A[i, i]
            candidates = np.unique(np.append(comm[A[i] > 0], own))
            gains = links[candidates] - tot[candidates] * k[i] / two_m
            best = gains.max()
            own_gain = gains[candidates == own][0]
            if best > own_gain + _EPS:
                ties = candidates[gains >= best - _EPS]
                target = ties[0] if ties.size == 1 else rng.choice(ties)
            else:
                target = own
            tot[target] += k[i]
            if target != own:
                comm[i] = target
                improved = moved_any = True
    return comm, moved_any


def louvain(g: ClientGraph, seed=0) -> tuple[list[int], float]:
    """Two-phase Louvain; nodes visited in ascending id, ties broken by ``seed``."""
    if g.m <= 0:
        raise ValueError("louvain needs a graph with at least one edge")
    rng = np.random.default_rng(seed)
    membership = np.arange(g.n)
    A = g.weights.copy()
    while True:
        comm, moved = _local_moves(A, rng)
        if not moved:
            break
        labels = np.asarray(_dense(comm.tolist()))
        membership = labels[membership]
        P = np.zeros((A.shape[0], labels.max() + 1))
        P[np.arange(A.shape[0]), labels] = 1.0
        A = P.T @ A @ P
    partition = _dense(membership.tolist())
    return partition, modularity(g, partition)


def community_count(g: ClientGraph, partition: Sequence[int]) -> int:
    """Communities containing at least one client with an approval edge."""
    active = g.degrees > 0
    return len({c for c, a in zip(partition, active) if a})


def satisfaction_rate(event: TraceEvent, truth: Sequence[int]) -> float | None:
    """Share of same-cluster tips in the serving snapshot that were selected.

    Returns ``None`` when the snapshot holds no same-cluster tip.
    """
    cluster = truth[event.client]
    pool = {h for h, c, _ in event.available if c != GENESIS_CREATOR and truth[c] == cluster}
    if not pool:
        return None
    hit = {h for h, c in event.selected if c != GENESIS_CREATOR and truth[c] == cluster}
    return len(hit & pool) / len(pool)


def misclassification(events: Iterable[TraceEvent], truth: Sequence[int]) -> int:
    return sum(1 for ev in events for _, c in ev.selected
               if c != GENESIS_CREATOR and truth[c] != truth[ev.client])


@dataclass
class ClusterMetrics:
    modularity: float
    community_count: int
    mr_mean: float
    mr_skipped: int
    misclassification: int


def round_cluster_metrics(events_so_far: list[TraceEvent], round_events: list[TraceEvent],
                          n_clients: int, truth: Sequence[int] | None, louvain_seed=0) -> ClusterMetrics:
    g = build_graph(events_so_far, n_clients)
    if g.m > 0:
        part, q = louvain(g, louvain_seed)
        count = community_count(g, part)
    else:
        q, count = float("nan"), 0
    if truth is None:
        return ClusterMetrics(q, count, float("nan"), 0, -1)
    rates = [satisfaction_rate(ev, truth) for ev in round_events]
    valid = [r for r in rates if r is not None]
    mr = float(np.mean(valid)) if valid else float("nan")
    return ClusterMetrics(q, count, mr, len(rates) - len(valid), misclassification(round_events, truth))
