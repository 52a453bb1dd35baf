"""Flat parameter vectors, softmax models, local SGD and FedAvg.

Models are stored as a single float64 vector plus a layout describing how
the vector splits into named layers. Every function here is pure: inputs are
never mutated and a fresh vector is returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LOGISTIC = "logistic-regression"
MLP = "mlp-1hidden"


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple((str(n), int(o), int(l)) for n, o, l in self.layout))
        expected = 0
        for name, offset, length in self.layout:
            if offset != expected or length < 0:
                raise ValueError(f"layout not contiguous at layer {name!r}")
            expected += length
        if values.ndim != 1 or expected != values.size:
            raise ValueError(f"layout covers {expected} values, vector has {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite values")

    def __len__(self):
        return self.values.size

    @property
    def layer_names(self) -> list[str]:
        return [name for name, _, _ in self.layout]

    def layer(self, name: str) -> np.ndarray:
        for layer_name, offset, length in self.layout:
            if layer_name == name:
                return self.values[offset:offset + length]
        raise KeyError(name)

    def subvector(self, names: Iterable[str]) -> np.ndarray:
        return np.concatenate([self.layer(n) for n in names])

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def to_bytes(self) -> bytes:
        return self.values.astype("<f8").tobytes()

    @property
    def nbytes(self) -> int:
        return 8 * self.values.size


@dataclass(frozen=True)
class ModelSpec:
    kind: str = LOGISTIC
    input_dim: int = 32
    output_dim: int = 10
    hidden_dim: int = 128
    similarity_layers: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (LOGISTIC, MLP):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1 or (self.kind == MLP and self.hidden_dim < 1):
            raise ValueError("model dimensions must be positive")
        if self.similarity_layers is None:
            default = ("W", "b") if self.kind == LOGISTIC else ("W2", "b2")
            object.__setattr__(self, "similarity_layers", default)
        else:
            object.__setattr__(self, "similarity_layers", tuple(self.similarity_layers))
        names = {name for name, _ in self.shapes()}
        if not self.similarity_layers or not set(self.similarity_layers) <= names:
            raise ValueError(f"similarity layers must be a non-empty subset of {sorted(names)}")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == LOGISTIC:
            return [("W", (self.input_dim, self.output_dim)), ("b", (self.output_dim,))]
        return [
            ("W1", (self.input_dim, self.hidden_dim)),
            ("b1", (self.hidden_dim,)),
            ("W2", (self.hidden_dim, self.output_dim)),
            ("b2", (self.output_dim,)),
        ]

    def layout(self) -> tuple[tuple[str, int, int], ...]:
        out, offset = [], 0
        for name, shape in self.shapes():
            size = int(np.prod(shape))
            out.append((name, offset, size))
            offset += size
        return tuple(out)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 10
    learning_rate: float = 0.05
    initial_epochs: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.initial_epochs < 0:
            raise ValueError("epochs and batch_size must be >= 1, initial_epochs >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass(frozen=True)
class Samples:
    """Labeled sample set: ``X`` is (n, d) float64, ``y`` is (n,) int."""

    X: np.ndarray
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent sample shapes X{X.shape} y{y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    def subset(self, idx) -> "Samples":
        return Samples(self.X[idx], self.y[idx])


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_params(spec: ModelSpec, seed) -> ParamVector:
    """Per-layer uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    rng = _as_rng(seed)
    chunks = []
    for name, shape in spec.shapes():
        fan_in = shape[0] if len(shape) == 2 else (spec.input_dim if name in ("b", "b1") else spec.hidden_dim)
        r = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-r, r, size=int(np.prod(shape))))
    return ParamVector(np.concatenate(chunks), spec.layout())


def _unpack(params: ParamVector, spec: ModelSpec) -> dict[str, np.ndarray]:
    if params.layout != spec.layout():
        raise ValueError("parameter layout does not match model spec")
    return {name: params.layer(name).reshape(shape) for name, shape in spec.shapes()}


def _check_batch(batch: Samples, spec: ModelSpec):
    if len(batch) == 0:
        raise ValueError("empty sample set")
    if batch.X.shape[1] != spec.input_dim:
        raise ValueError(f"feature dim {batch.X.shape[1]} != model input dim {spec.input_dim}")
    if batch.y.min() < 0 or batch.y.max() >= spec.output_dim:
        raise ValueError("label outside model output range")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _forward(p: dict[str, np.ndarray], spec: ModelSpec, X: np.ndarray):
    if spec.kind == LOGISTIC:
        return X @ p["W"] + p["b"], None
    pre = X @ p["W1"] + p["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p["W2"] + p["b2"], (pre, hidden)


def logits(params: ParamVector, spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    return _forward(_unpack(params, spec), spec, np.asarray(X, dtype=np.float64))[0]


def loss_and_grad(params: ParamVector, spec: ModelSpec, batch: Samples) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy over ``batch`` and its gradient."""
    _check_batch(batch, spec)
    p = _unpack(params, spec)
    X, y = batch.X, batch.y
    n = len(batch)
    z, cache = _forward(p, spec, X)
    logp = _log_softmax(z)
    loss = -logp[np.arange(n), y].mean()

    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if spec.kind == LOGISTIC:
        grads = {"W": X.T @ dz, "b": dz.sum(axis=0)}
    else:
        pre, hidden = cache
        dh = (dz @ p["W2"].T) * (pre > 0)
        grads = {
            "W1": X.T @ dh,
            "b1": dh.sum(axis=0),
            "W2": hidden.T @ dz,
            "b2": dz.sum(axis=0),
        }
    flat = np.concatenate([grads[name].ravel() for name, _ in spec.shapes()])
    return float(loss), params.with_values(flat)


def local_train(params: ParamVector, spec: ModelSpec, data: Samples, cfg: TrainConfig, seed,
                epochs: int | None = None) -> ParamVector:
    """Minibatch SGD for ``cfg.epochs`` (or ``epochs``) passes over shuffled data."""
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = _as_rng(seed)
    n_epochs = cfg.epochs if epochs is None else epochs
    w = params.values.copy()
    current = params
    for _ in range(n_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = data.subset(order[start:start + cfg.batch_size])
            _, grad = loss_and_grad(current, spec, batch)
            w = w - cfg.learning_rate * grad.values
            current = params.with_values(w)
    return current


def fedavg(models: Sequence[tuple[ParamVector, float]] | Sequence[ParamVector]) -> ParamVector:
    """Weighted component-wise mean; bare vectors get weight 1."""
    pairs = [m if isinstance(m, tuple) else (m, 1.0) for m in models]
    if not pairs:
        raise ValueError("fedavg needs at least one model")
    layout = pairs[0][0].layout
    weights = np.array([float(w) for _, w in pairs])
    if any(p.layout != layout for p, _ in pairs):
        raise ValueError("fedavg inputs have different layouts")
    if np.any(weights < 0) or not np.isfinite(weights).all() or weights.sum() <= 0:
        raise ValueError("fedavg weights must be non-negative with positive sum")
    weights = weights / weights.sum()
    stacked = np.stack([p.values for p, _ in pairs])
    return ParamVector(weights @ stacked, layout)


def evaluate(params: ParamVector, spec: ModelSpec, testset: Samples) -> tuple[float, float]:
    """Return ``(accuracy, mean cross-entropy)`` on ``testset``."""
    _check_batch(testset, spec)
    z = logits(params, spec, testset.X)
    logp = _log_softmax(z)
    acc = float(np.mean(z.argmax(axis=1) == testset.y))
    loss = float(-logp[np.arange(len(testset)), testset.y].mean())
    return acc, loss
