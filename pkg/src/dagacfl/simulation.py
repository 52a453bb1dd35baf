"""Round-driven simulation of clients and ledger servers, plus a FedAvg baseline.

Participants of a round are visited in a seeded shuffled order. A client turn
is split into a request half (tip selection and aggregation) and a publish half
(training and append). Up to ``in_flight`` turns may sit between the two halves,
so later requests can see a ledger that earlier requests have not yet extended;
``in_flight=1`` gives strictly serialised turns and ``None`` lets the whole round
select before anyone publishes. Each server owns a ledger replica; replicas
exchange newly published transactions every ``sync_period`` rounds and after
the final round.
"""
from __future__ import annotations

import logging
import math
import os
import zlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import trace as tr
from .config import SimConfig
from .datasets import ClientDataset, load_mnist_idx, make_synthetic, partition
from .evaluation import round_cluster_metrics
from .fedcore import ParamVector, Samples, evaluate, fedavg, init_params, local_train
from .ledger import DagLedger, GenesisConfig, Transaction, UnknownTransactionError
from .tipselect import rank_tips, select
from .trace import TraceEvent

log = logging.getLogger(__name__)

ROUND_TICKS = 1_000_000  # simulated microseconds per round

METRIC_COLUMNS = ("round", "mean-accuracy", "mean-loss", "modularity", "community-count",
                  "mr-mean", "mr-skipped", "misclassification", "bytes-total", "bytes-predicted")


class InvariantViolation(RuntimeError):
    def __init__(self, message: str, event: TraceEvent | None = None):
        super().__init__(message)
        self.event = event


def stream(seed: int, name: str, *ids: int) -> np.random.Generator:
    """Independent named RNG stream derived from the run seed."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in ids)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class ClientState:
    id: int
    train: Samples
    test: Samples
    rng: np.random.Generator
    latest_hash: str | None = None
    local_params: ParamVector | None = None
    connected_server: int | None = None


@dataclass
class ServerState:
    id: int
    replica: DagLedger
    outbox: list[Transaction] = field(default_factory=list)
    traffic: dict[str, int] = field(default_factory=dict)

    def count(self, category: str, nbytes: int):
        self.traffic[category] = self.traffic.get(category, 0) + nbytes


@dataclass
class _Turn:
    """A client turn between its tip request and its publication."""

    client: ClientState
    server: ServerState
    round: int
    turn: int
    first_join: bool
    resent: bool = False
    available: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    aggregate: ParamVector | None = None
    moved: dict[str, int] = field(default_factory=dict)


@dataclass
class MetricsRecord:
    round: int
    mean_accuracy: float
    mean_loss: float
    modularity: float = float("nan")
    community_count: int = 0
    mr_mean: float = float("nan")
    mr_skipped: int = 0
    misclassification: int = -1
    bytes_total: int = 0
    bytes_predicted: int = 0

    def row(self) -> list:
        return [self.round, self.mean_accuracy, self.mean_loss, self.modularity, self.community_count,
                self.mr_mean, self.mr_skipped, self.misclassification, self.bytes_total, self.bytes_predicted]


@dataclass
class RunResult:
    metrics: list[MetricsRecord]
    trace: list[TraceEvent]
    servers: list[ServerState]
    truth: list[int]
    datasets: list[ClientDataset]

    @property
    def ledgers(self) -> list[DagLedger]:
        return [s.replica for s in self.servers]


def build_datasets(cfg: SimConfig) -> list[ClientDataset]:
    d = cfg.data
    if d.source == "mnist":
        return partition(load_mnist_idx(d.mnist_images, d.mnist_labels), cfg.plan, seed=cfg.seed)
    return make_synthetic(cfg.plan, d.input_dim, cfg.class_count, seed=cfg.seed,
                          noise=d.noise, max_cosine=d.max_cosine)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DAGACFL_WORKERS", "1")))
    except ValueError:
        return 1


def _participants(cfg: SimConfig, n: int, rng: np.random.Generator) -> list[int]:
    k = math.ceil(cfg.participation_rate * n - 1e-9)
    return [int(i) for i in rng.choice(n, size=k, replace=False)]


def predicted_round_bytes(n_participants: int, cfg: SimConfig, model_bytes: int) -> int:
    """Closed-form per-round DAG traffic: 2|C|{|hash| + |w| + (|S|-1)(|w| + |sigma|)}."""
    h, s = cfg.sizes.hash_bytes, cfg.sizes.overhead_bytes
    return 2 * n_participants * (h + model_bytes + (cfg.servers - 1) * (model_bytes + s))


class Simulation:
    """Mutable state of one DAG run. ``run(cfg)`` is the usual entry point."""

    def __init__(self, cfg: SimConfig, datasets: list[ClientDataset] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.spec = cfg.model_spec()
        self.tsa = cfg.tip_config()
        self.datasets = build_datasets(cfg) if datasets is None else datasets
        # cluster ids stay here, evaluation-only; clients never see them
        self.truth = [c.cluster_id for c in self.datasets]
        genesis = init_params(self.spec, stream(cfg.seed, "genesis"))
        self.genesis_params = genesis
        self.servers = [ServerState(s, DagLedger(GenesisConfig(genesis, self.tsa.mode)))
                        for s in range(cfg.servers)]
        self.clients = [ClientState(c.client_id, c.train, c.test, stream(cfg.seed, "client", c.client_id))
                        for c in self.datasets]
        self.sampling_rng = stream(cfg.seed, "sampling")
        self.server_rng = stream(cfg.seed, "server-choice")
        self.trace: list[TraceEvent] = []
        self.metrics: list[MetricsRecord] = []
        self.model_bytes = genesis.nbytes

    # -- protocol ---------------------------------------------------------

    def request(self, client: ClientState, server: ServerState, rnd: int, turn: int) -> _Turn:
        """Steps 1-3: identify the client, select tips, send back their aggregate."""
        cfg, spec, replica = self.cfg, self.spec, server.replica
        wb, hb = self.model_bytes, cfg.sizes.hash_bytes
        turn_state = _Turn(client, server, rnd, turn, first_join=client.latest_hash is None)
        client.connected_server = server.id

        if turn_state.first_join:
            start = init_params(spec, client.rng) if cfg.first_join == "train" else self.genesis_params
            query = local_train(start, spec, client.train, cfg.train, client.rng, epochs=cfg.train.initial_epochs)
            turn_state.moved[tr.C2S_PARAMS] = wb
        else:
            try:
                query = replica.get_params(client.latest_hash)
                turn_state.moved[tr.C2S_HASH] = hb
            except UnknownTransactionError:
                # not yet synced to this replica: upload the locally held model instead
                query = client.local_params
                turn_state.resent = True
                turn_state.moved[tr.C2S_PARAMS] = wb

        ranking = rank_tips(replica, query, self.tsa)
        selected = select(ranking, self.tsa)
        if not selected:
            raise InvariantViolation("tip selection returned no tips")
        creators = {e.hash: e.creator for e in ranking}
        turn_state.available = [(e.hash, e.creator, e.similarity) for e in ranking]
        turn_state.selected = [(h, creators[h]) for h in selected]
        turn_state.aggregate = fedavg([replica.get_params(h) for h in selected])
        turn_state.moved[tr.S2C_AGG] = wb
        return turn_state

    def publish(self, t: _Turn) -> TraceEvent:
        """Steps 4-7: local training, publication approving the selected tips, hash reply."""
        cfg, client, server = self.cfg, t.client, t.server
        wb, hb = self.model_bytes, cfg.sizes.hash_bytes
        trained = local_train(t.aggregate, self.spec, client.train, cfg.train, client.rng)
        t.moved[tr.C2S_MODEL] = wb
        timestamp = t.round * ROUND_TICKS + t.turn + 1
        parents = [h for h, _ in t.selected]
        new_hash = server.replica.append(client.id, trained, parents, timestamp, t.round)
        t.moved[tr.S2C_HASH] = hb
        server.outbox.append(server.replica.get_by_hash(new_hash))
        peers = cfg.servers - 1
        t.moved[tr.S2S_OUT] = peers * (wb + cfg.sizes.overhead_bytes)
        t.moved[tr.S2S_IN] = peers * (wb + cfg.sizes.overhead_bytes)
        for cat in (tr.C2S_HASH, tr.C2S_PARAMS, tr.C2S_MODEL, tr.S2C_AGG, tr.S2C_HASH):
            if cat in t.moved:
                server.count(cat, t.moved[cat])

        client.latest_hash = new_hash
        client.local_params = trained
        event = TraceEvent(t.round, t.turn, client.id, server.id, t.first_join, t.resent, t.available,
                           t.selected, new_hash, timestamp, dict(t.moved))
        snapshot = {h for h, _, _ in t.available}
        if not set(parents) <= snapshot:
            raise InvariantViolation("published transaction approves tips outside its selection snapshot", event)
        return event

    def client_turn(self, client: ClientState, server: ServerState, rnd: int, turn: int) -> TraceEvent:
        return self.publish(self.request(client, server, rnd, turn))

    def sync(self):
        if len(self.servers) > 1:
            record = self.cfg.sizes.overhead_bytes
            for src in self.servers:
                nbytes = sum(tx.payload.nbytes + record for tx in src.outbox)
                for dst in self.servers:
                    if dst is src:
                        continue
                    dst.replica.merge(src.outbox)
                    src.count(tr.S2S_OUT, nbytes)
                    dst.count(tr.S2S_IN, nbytes)
        for s in self.servers:
            s.outbox.clear()
        ref = self.servers[0].replica
        for s in self.servers[1:]:
            if s.replica.transaction_set() != ref.transaction_set() or s.replica.tips != ref.tips:
                raise InvariantViolation(f"replica of server {s.id} diverged after sync")
            if s.replica.pending:
                raise InvariantViolation(f"server {s.id} holds unresolved transactions after sync")

    # -- evaluation -------------------------------------------------------

    def _client_global_model(self, client: ClientState) -> ParamVector:
        replica = self.servers[0].replica
        ranking = rank_tips(replica, client.local_params, self.tsa)
        return fedavg([replica.get_params(h) for h in select(ranking, self.tsa)])

    def evaluate_participants(self) -> tuple[float, float]:
        """Mean accuracy/loss of every historical participant's aggregated tip model."""
        active = [c for c in self.clients if c.local_params is not None]

        def one(c):
            return evaluate(self._client_global_model(c), self.spec, c.test)

        workers = _workers()
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(one, active))
        else:
            results = [one(c) for c in active]
        acc = float(np.mean([r[0] for r in results]))
        loss = float(np.mean([r[1] for r in results]))
        return acc, loss

    # -- main loop --------------------------------------------------------

    def run_round(self, rnd: int) -> MetricsRecord:
        cfg = self.cfg
        order = _participants(cfg, len(self.clients), self.sampling_rng)
        window = len(order) if cfg.in_flight is None else cfg.in_flight
        in_flight: deque[_Turn] = deque()
        events = []
        for turn, cid in enumerate(order):
            if len(in_flight) >= window:
                events.append(self.publish(in_flight.popleft()))
            server = self.servers[int(self.server_rng.integers(cfg.servers))]
            in_flight.append(self.request(self.clients[cid], server, rnd, turn))
        while in_flight:
            events.append(self.publish(in_flight.popleft()))
        self.trace.extend(events)
        if rnd % cfg.sync_period == 0 or rnd == cfg.rounds:
            self.sync()

        acc, loss = self.evaluate_participants()
        cm = round_cluster_metrics(self.trace, events, len(self.clients), self.truth, cfg.louvain_seed)
        observed = sum(ev.total_bytes for ev in events)
        rec = MetricsRecord(rnd, acc, loss, cm.modularity, cm.community_count, cm.mr_mean,
                            cm.mr_skipped, cm.misclassification, observed,
                            predicted_round_bytes(len(events), cfg, self.model_bytes)
                            + sum(ev.first_join or ev.resent for ev in events)
                            * (self.model_bytes - cfg.sizes.hash_bytes))
        self.metrics.append(rec)
        log.debug("round %d acc=%.4f Q=%.3f communities=%d", rnd, acc, cm.modularity, cm.community_count)
        return rec

    def run(self) -> RunResult:
        for rnd in range(1, self.cfg.rounds + 1):
            self.run_round(rnd)
        return RunResult(self.metrics, self.trace, self.servers, self.truth, self.datasets)


def run(cfg: SimConfig, datasets: list[ClientDataset] | None = None) -> RunResult:
    return Simulation(cfg, datasets).run()


def run_fedavg_baseline(cfg: SimConfig, datasets: list[ClientDataset] | None = None) -> list[MetricsRecord]:
    """Synchronous FedAvg with sample-count weights on the same sampling schedule."""
    cfg.validate()
    spec = cfg.model_spec()
    datasets = build_datasets(cfg) if datasets is None else datasets
    sampling = stream(cfg.seed, "sampling")
    client_rngs = [stream(cfg.seed, "client", c.client_id) for c in datasets]
    w = init_params(spec, stream(cfg.seed, "genesis"))
    out = []
    for rnd in range(1, cfg.rounds + 1):
        order = _participants(cfg, len(datasets), sampling)
        traffic = 0
        updates = []
        for c in order:
            traffic += w.nbytes  # global model down
            update = local_train(w, spec, datasets[c].train, cfg.train, client_rngs[c])
            traffic += update.nbytes  # local model up
            updates.append((update, len(datasets[c].train)))
        w = fedavg(updates)
        results = [evaluate(w, spec, c.test) for c in datasets]
        out.append(MetricsRecord(rnd, float(np.mean([r[0] for r in results])),
                                 float(np.mean([r[1] for r in results])),
                                 bytes_total=traffic, bytes_predicted=2 * len(order) * w.nbytes))
    return out


@dataclass
class RoundCost:
    round: int
    participants: int
    uploads_instead_of_hash: int
    observed: int
    by_category: dict[str, int]
    closed_form: int
    predicted: int


@dataclass
class CostReport:
    rounds: list[RoundCost]
    client_bytes: dict[int, int]
    server_bytes: dict[int, int]
    transactions: int
    depth: int
    width: float
    ledger_bytes: int
    storage_formula: float


def account_costs(trace: list[TraceEvent], cfg: SimConfig, ledger: DagLedger | None = None) -> CostReport:
    """Observed traffic per round and actor, next to the closed-form predictions.

    A first-joining client uploads its model instead of a hash, so each such
    event adds ``|w| - |hash|`` on top of the closed form.
    """
    h, sigma, peers = cfg.sizes.hash_bytes, cfg.sizes.overhead_bytes, cfg.servers - 1
    by_round: dict[int, list[TraceEvent]] = {}
    for ev in trace:
        by_round.setdefault(ev.round, []).append(ev)
    clients: dict[int, int] = {}
    servers: dict[int, int] = {s: 0 for s in range(cfg.servers)}
    rounds = []
    model_bytes = 0
    for rnd in sorted(by_round):
        events = by_round[rnd]
        cats: dict[str, int] = {}
        for ev in events:
            model_bytes = ev.bytes_moved[tr.S2C_AGG]
            for k, v in ev.bytes_moved.items():
                cats[k] = cats.get(k, 0) + v
            facing = sum(v for k, v in ev.bytes_moved.items() if k not in (tr.S2S_OUT, tr.S2S_IN))
            clients[ev.client] = clients.get(ev.client, 0) + facing
            servers[ev.server] += facing + ev.bytes_moved.get(tr.S2S_OUT, 0)
            for s in servers:
                if s != ev.server:
                    servers[s] += model_bytes + sigma
        uploads = sum(ev.first_join or ev.resent for ev in events)
        closed = 2 * len(events) * (h + model_bytes + peers * (model_bytes + sigma))
        rounds.append(RoundCost(rnd, len(events), uploads, sum(cats.values()), cats, closed,
                                closed + uploads * (model_bytes - h)))
    if ledger is not None:
        count, depth = len(ledger), ledger.depth()
        width = count / depth
        stored = ledger.storage_bytes(sigma)
        per_tx = ledger.get_params(ledger.genesis_hash).nbytes + sigma
        formula = depth * width * per_tx
    else:
        count = depth = stored = 0
        width = formula = 0.0
    return CostReport(rounds, clients, servers, count, depth, width, stored, formula)
