"""Cluster-wise non-IID client datasets.

Clients are grouped by superclass (a disjoint set of labels). Within a
superclass, type I clients get balanced label counts while type II clients
get Dirichlet-skewed label proportions.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fedcore import Samples

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_SUPERCLASSES = ((0, 1, 2), (3, 4, 5), (6, 7, 8, 9))


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterPlan:
    superclasses: tuple[tuple[int, ...], ...] = ((0, 1, 2), (3, 4, 5), (6, 7, 8))
    clients_per_superclass: tuple[int, ...] = (3, 3, 3)
    type: str = "I"
    samples_per_client: int = 120
    skew_alpha: float = 0.5
    train_fraction: float = 0.8

    def __post_init__(self):
        sc = tuple(tuple(int(l) for l in s) for s in self.superclasses)
        object.__setattr__(self, "superclasses", sc)
        object.__setattr__(self, "clients_per_superclass", tuple(int(c) for c in self.clients_per_superclass))
        flat = [l for s in sc for l in s]
        if not sc or any(not s for s in sc) or len(flat) != len(set(flat)):
            raise ValueError("superclasses must be non-empty, pairwise disjoint label sets")
        if len(self.clients_per_superclass) != len(sc) or min(self.clients_per_superclass) < 1:
            raise ValueError("need one positive client count per superclass")
        if self.type not in ("I", "II"):
            raise ValueError("plan type must be 'I' or 'II'")
        if self.samples_per_client < 2:
            raise ValueError("samples_per_client must be >= 2")
        if self.skew_alpha <= 0:
            raise ValueError("skew_alpha must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        n_train = self.n_train
        if n_train < 1 or n_train >= self.samples_per_client:
            raise ValueError("train/test split leaves an empty side")

    @property
    def n_clients(self) -> int:
        return sum(self.clients_per_superclass)

    @property
    def labels(self) -> list[int]:
        return sorted(l for s in self.superclasses for l in s)

    @property
    def n_train(self) -> int:
        return int(round(self.train_fraction * self.samples_per_client))

    def cluster_of_clients(self) -> list[int]:
        return [k for k, c in enumerate(self.clients_per_superclass) for _ in range(c)]


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    cluster_id: int
    train: Samples
    test: Samples


def _label_counts(plan: ClusterPlan, labels, rng: np.random.Generator) -> np.ndarray:
    k, n = len(labels), plan.samples_per_client
    if plan.type == "I":
        counts = np.full(k, n // k)
        counts[: n % k] += 1
        return counts
    return rng.multinomial(n, rng.dirichlet(np.full(k, plan.skew_alpha)))


def _split(client_id: int, cluster_id: int, X, y, plan: ClusterPlan, rng) -> ClientDataset:
    order = rng.permutation(len(y))
    X, y = X[order], y[order]
    cut = plan.n_train
    return ClientDataset(client_id, cluster_id, Samples(X[:cut], y[:cut]), Samples(X[cut:], y[cut:]))


def make_centroids(n: int, dim: int, rng: np.random.Generator, max_cosine: float = 0.5,
                   max_tries: int = 10_000) -> np.ndarray:
    """Unit-norm vectors with pairwise cosine at most ``max_cosine`` (rejection sampled)."""
    out: list[np.ndarray] = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(np.dot(v, u) <= max_cosine for u in out):
            out.append(v)
    if len(out) < n:
        raise ValueError(f"could not place {n} centroids in {dim} dims with cosine <= {max_cosine}")
    return np.stack(out)


def make_synthetic(plan: ClusterPlan, input_dim: int = 32, class_count: int | None = None, seed=0,
                   noise: float = 0.3, max_cosine: float = 0.5) -> list[ClientDataset]:
    """Gaussian class blobs around separated unit-norm centroids, split per ``plan``."""
    class_count = max(plan.labels) + 1 if class_count is None else class_count
    if class_count <= max(plan.labels) or input_dim < 1:
        raise ValueError(f"class_count {class_count} cannot hold labels up to {max(plan.labels)}")
    rng = np.random.default_rng(seed)
    centroids = make_centroids(class_count, input_dim, rng, max_cosine)
    clients = []
    cid = 0
    for k, labels in enumerate(plan.superclasses):
        for _ in range(plan.clients_per_superclass[k]):
            counts = _label_counts(plan, labels, rng)
            y = np.repeat(np.asarray(labels), counts)
            X = centroids[y] + noise * rng.standard_normal((y.size, input_dim))
            clients.append(_split(cid, k, X, y, plan, rng))
            cid += 1
    return clients


def _read_idx(path, magic: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x} at byte offset 0 (expected 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxFormatError(f"{path}: truncated data at byte offset {len(raw)}, "
                             f"expected {header + size} bytes")
    if len(raw) > header + size:
        raise IdxFormatError(f"{path}: {len(raw) - header - size} trailing bytes at byte offset {header + size}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)
    return dims, data


def load_mnist_idx(images_path, labels_path) -> Samples:
    """Parse an IDX image/label file pair; pixels are scaled to [0, 1] and flattened."""
    dims, images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if dims[0] != n_labels:
        raise IdxFormatError(f"{labels_path}: label count {n_labels} at byte offset 4 "
                             f"does not match image count {dims[0]}")
    X = images.reshape(dims[0], -1).astype(np.float64) / 255.0
    return Samples(X, labels.astype(np.int64))


def partition(data: Samples, plan: ClusterPlan, seed=0) -> list[ClientDataset]:
    """Deal real samples to clients of each superclass without reuse."""
    missing = set(plan.labels) - set(np.unique(data.y).tolist())
    if missing:
        raise ValueError(f"labels {sorted(missing)} absent from source data")
    rng = np.random.default_rng(seed)
    pools = {l: list(rng.permutation(np.flatnonzero(data.y == l))) for l in plan.labels}

    wanted: list[tuple[int, int, np.ndarray]] = []
    for k, labels in enumerate(plan.superclasses):
        for _ in range(plan.clients_per_superclass[k]):
            wanted.append((k, labels, _label_counts(plan, labels, rng)))
    need: dict[int, int] = {l: 0 for l in plan.labels}
    for _, labels, counts in wanted:
        for l, c in zip(labels, counts):
            need[l] += int(c)
    short = {l: need[l] - len(pools[l]) for l in plan.labels if need[l] > len(pools[l])}
    if short:
        report = ", ".join(f"label {l}: short by {s}" for l, s in sorted(short.items()))
        raise ValueError(f"not enough samples for plan ({report})")

    clients = []
    for cid, (k, labels, counts) in enumerate(wanted):
        idx = []
        for l, c in zip(labels, counts):
            idx.extend(pools[l][:c])
            del pools[l][:c]
        idx = np.asarray(idx, dtype=np.int64)
        clients.append(_split(cid, k, data.X[idx], data.y[idx], plan, rng))
    return clients


def dataset_manifest(clients: list[ClientDataset]) -> list[dict]:
    out = []
    for c in clients:
        labels, counts = np.unique(np.concatenate([c.train.y, c.test.y]), return_counts=True)
        out.append({
            "client_id": c.client_id,
            "cluster_id": c.cluster_id,
            "label_histogram": {str(int(l)): int(n) for l, n in zip(labels, counts)},
            "n_train": len(c.train),
            "n_test": len(c.test),
        })
    return out
