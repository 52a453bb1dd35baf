"""Similarity-ranked tip selection: fixed top-k and change-point adaptive."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .changepoint import SegmentPrior, confidence, first_changepoint
from .fedcore import ParamVector
from .ledger import DagLedger

TOPK = "topk"
ADAPTIVE = "adaptive"


class DegenerateVectorError(ValueError):
    """Cosine similarity is undefined for a zero-norm subvector."""


@dataclass(frozen=True)
class TipSelectConfig:
    mode: str = ADAPTIVE
    nt: int = 1
    alpha: float = 0.5
    similarity_layers: tuple[str, ...] = ("W", "b")
    prior: SegmentPrior = field(default_factory=SegmentPrior)

    def __post_init__(self):
        if self.mode not in (TOPK, ADAPTIVE):
            raise ValueError(f"unknown tip selection mode {self.mode!r}")
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "similarity_layers", tuple(self.similarity_layers))


class RankedTip(NamedTuple):
    hash: str
    similarity: float
    creator: int


def similarity(a: ParamVector, b: ParamVector, layers) -> float:
    if a.layout != b.layout:
        raise ValueError("similarity needs identical layouts")
    u, v = a.subvector(layers), b.subvector(layers)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateVectorError("zero-norm parameter subvector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def rank_tips(ledger: DagLedger, client_params: ParamVector, cfg: TipSelectConfig) -> list[RankedTip]:
    """Every tip with its similarity to ``client_params``, best first, ties by hash."""
    entries = []
    for h, tx in ledger.get_tips():
        try:
            s = similarity(client_params, tx.payload, cfg.similarity_layers)
        except DegenerateVectorError:
            s = -1.0
        entries.append(RankedTip(h, s, tx.creator))
    entries.sort(key=lambda e: (-e.similarity, e.hash))
    return entries


def select_topk(ranking: list[RankedTip], nt: int) -> list[str]:
    if nt < 1:
        raise ValueError("nt must be >= 1")
    return [e.hash for e in ranking[:nt]]


def adaptive_cutoff(ranking: list[RankedTip], cfg: TipSelectConfig) -> int:
    conf = confidence([e.similarity for e in ranking], cfg.prior)
    cutoff = first_changepoint(conf, cfg.alpha)
    if cutoff is None:
        cutoff = len(ranking)
    if cutoff < cfg.nt:
        cutoff = min(cfg.nt, len(ranking))
    return cutoff


def select_adaptive(ranking: list[RankedTip], cfg: TipSelectConfig) -> list[str]:
    if not ranking:
        raise ValueError("cannot select from an empty ranking")
    return [e.hash for e in ranking[:adaptive_cutoff(ranking, cfg)]]


def select(ranking: list[RankedTip], cfg: TipSelectConfig) -> list[str]:
    if cfg.mode == TOPK:
        return select_topk(ranking, cfg.nt)
    return select_adaptive(ranking, cfg)
