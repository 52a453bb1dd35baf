"""Append-only DAG ledger of model transactions.

Transactions are content addressed: the hash is SHA-256 over a canonical
little-endian serialisation of (sorted parents, creator, timestamp, payload).
The tip set is maintained incrementally and always equals the set of
transactions that no other transaction lists as a parent.
"""
from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .fedcore import ParamVector

GENESIS_CREATOR = -1
HASH_BYTES = 32


class UnknownTransactionError(KeyError):
    """Raised when a hash does not resolve in a ledger replica."""


class LedgerError(ValueError):
    pass


def canonical_bytes(parents: Iterable[str], creator: int, timestamp: int, payload: ParamVector) -> bytes:
    parents = sorted(parents)
    out = [struct.pack("<I", len(parents))]
    out += [bytes.fromhex(p) for p in parents]
    out.append(struct.pack("<q", creator))
    out.append(struct.pack("<q", timestamp))
    out.append(payload.to_bytes())
    return b"".join(out)


def transaction_hash(parents: Iterable[str], creator: int, timestamp: int, payload: ParamVector) -> str:
    return hashlib.sha256(canonical_bytes(parents, creator, timestamp, payload)).hexdigest()


@dataclass(frozen=True)
class Transaction:
    hash: str
    parents: tuple[str, ...]
    creator: int
    payload: ParamVector
    timestamp: int
    round: int

    @classmethod
    def create(cls, parents, creator: int, payload: ParamVector, timestamp: int, round: int) -> "Transaction":
        parents = tuple(sorted(set(parents)))
        h = transaction_hash(parents, creator, timestamp, payload)
        return cls(h, parents, int(creator), payload, int(timestamp), int(round))

    @property
    def is_genesis(self) -> bool:
        return not self.parents

    def verify(self) -> bool:
        return self.hash == transaction_hash(self.parents, self.creator, self.timestamp, self.payload)

    def to_record(self, include_payload: bool = True) -> dict:
        rec = {
            "hash": self.hash,
            "parents": list(self.parents),
            "creator": self.creator,
            "round": self.round,
            "timestamp": self.timestamp,
            "payload_digest": hashlib.sha256(self.payload.to_bytes()).hexdigest(),
        }
        if include_payload:
            rec["payload"] = base64.b64encode(self.payload.to_bytes()).decode("ascii")
            rec["layout"] = [list(entry) for entry in self.payload.layout]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Transaction":
        try:
            raw = base64.b64decode(rec["payload"], validate=True)
            payload = ParamVector(np.frombuffer(raw, dtype="<f8").astype(np.float64),
                                  tuple(tuple(e) for e in rec["layout"]))
            tx = cls(str(rec["hash"]), tuple(rec["parents"]), int(rec["creator"]), payload,
                     int(rec["timestamp"]), int(rec["round"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise LedgerError(f"malformed ledger record: {exc!r}") from None
        if not tx.verify():
            raise LedgerError(f"hash mismatch for transaction {rec['hash']}")
        return tx


@dataclass(frozen=True)
class GenesisConfig:
    initial_params: ParamVector
    tsa_kind: str = "adaptive"

    def __post_init__(self):
        if self.tsa_kind not in ("topk", "adaptive"):
            raise ValueError(f"unknown tip selection kind {self.tsa_kind!r}")


class DagLedger:
    """One replica of the DAG ledger.

    Single writer: the simulation serialises every mutation.
    """

    def __init__(self, genesis: GenesisConfig):
        self.tsa_kind = genesis.tsa_kind
        tx = Transaction.create((), GENESIS_CREATOR, genesis.initial_params, 0, 0)
        self.genesis_hash = tx.hash
        self.transactions: dict[str, Transaction] = {tx.hash: tx}
        self.children: dict[str, set[str]] = {tx.hash: set()}
        self.tips: set[str] = {tx.hash}
        self.pending: dict[str, Transaction] = {}

    def __len__(self):
        return len(self.transactions)

    def __contains__(self, h: str) -> bool:
        return h in self.transactions

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.transactions.values())

    def _insert(self, tx: Transaction):
        self.transactions[tx.hash] = tx
        self.children[tx.hash] = set()
        for p in tx.parents:
            self.children[p].add(tx.hash)
            self.tips.discard(p)
        self.tips.add(tx.hash)

    def append(self, creator: int, payload: ParamVector, parents, time: int, round: int) -> str:
        parents = tuple(parents)
        if not parents:
            raise LedgerError("a non-genesis transaction needs at least one parent")
        missing = [p for p in parents if p not in self.transactions]
        if missing:
            raise LedgerError(f"unknown parent transaction(s): {missing}")
        tx = Transaction.create(parents, creator, payload, time, round)
        if tx.hash in self.transactions:
            raise LedgerError(f"duplicate transaction {tx.hash}")
        self._insert(tx)
        return tx.hash

    def get_tips(self) -> list[tuple[str, Transaction]]:
        return [(h, self.transactions[h]) for h in sorted(self.tips)]

    def get_by_hash(self, h: str) -> Transaction:
        try:
            return self.transactions[h]
        except KeyError:
            raise UnknownTransactionError(h) from None

    def get_params(self, h: str) -> ParamVector:
        return self.get_by_hash(h).payload

    def merge(self, foreign: Iterable[Transaction]) -> int:
        """Insert foreign transactions parent-before-child; returns the count inserted.

        Transactions whose parents are still unknown wait in ``pending`` and
        are retried on every later merge.
        """
        for tx in foreign:
            if tx.hash in self.transactions or tx.hash in self.pending:
                continue
            if tx.is_genesis:
                if tx.hash != self.genesis_hash:
                    raise LedgerError("foreign genesis does not match this ledger")
                continue
            if not tx.verify():
                raise LedgerError(f"transaction {tx.hash} fails hash verification")
            self.pending[tx.hash] = tx
        inserted = 0
        progress = True
        while progress and self.pending:
            progress = False
            for h in sorted(self.pending):
                tx = self.pending[h]
                if all(p in self.transactions for p in tx.parents):
                    del self.pending[h]
                    self._insert(tx)
                    inserted += 1
                    progress = True
        return inserted

    def transaction_set(self) -> frozenset[str]:
        return frozenset(self.transactions)

    def depth(self) -> int:
        """Number of layers: longest genesis-to-transaction path, counted in nodes."""
        level: dict[str, int] = {}
        for h in self.topological_order():
            tx = self.transactions[h]
            level[h] = 1 + max((level[p] for p in tx.parents), default=0)
        return max(level.values())

    def topological_order(self) -> list[str]:
        indeg = {h: len(tx.parents) for h, tx in self.transactions.items()}
        ready = sorted(h for h, d in indeg.items() if d == 0)
        order = []
        while ready:
            h = ready.pop()
            order.append(h)
            for c in sorted(self.children[h]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.transactions):
            raise LedgerError("ledger contains a cycle")
        return order

    def storage_bytes(self, overhead_bytes: int) -> int:
        return sum(tx.payload.nbytes + overhead_bytes for tx in self.transactions.values())

    def dump(self, include_payload: bool = True) -> list[dict]:
        return [self.transactions[h].to_record(include_payload) for h in self.topological_order()]

    @classmethod
    def from_records(cls, records: list[dict], tsa_kind: str = "adaptive") -> "DagLedger":
        txs = [Transaction.from_record(r) for r in records]
        genesis = [t for t in txs if t.is_genesis]
        if len(genesis) != 1:
            raise LedgerError(f"expected exactly one genesis, found {len(genesis)}")
        ledger = cls(GenesisConfig(genesis[0].payload, tsa_kind))
        ledger.merge(txs)
        if ledger.pending:
            raise LedgerError(f"{len(ledger.pending)} transaction(s) with unresolved parents")
        return ledger


def write_jsonl(records: Iterable[dict], fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True))
        fh.write("\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON line ({exc.msg})") from None
    return out
