"""Exact Bayesian segmentation of a short sequence into constant-mean pieces.

The model: every interior index is independently a segment boundary with
probability ``hazard`` (a geometric segment-length prior), and each segment
is Normal with unknown mean and variance under a Normal-Inverse-Gamma prior.
``confidence`` returns the posterior probability that each index starts a
new segment, by a forward-backward sum over all segmentations in O(n^2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp


@dataclass(frozen=True)
class SegmentPrior:
    """Normal-Inverse-Gamma segment prior. ``mu0=None`` means the sequence mean."""

    mu0: float | None = None
    kappa0: float = 1.0
    alpha0: float = 1.0
    beta0: float = 0.01
    hazard: float | None = None

    def __post_init__(self):
        if self.kappa0 <= 0 or self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("kappa0, alpha0 and beta0 must be positive")
        if self.hazard is not None and not 0 < self.hazard < 1:
            raise ValueError("hazard must lie in (0, 1)")


def segment_log_evidence(y: np.ndarray, mu0: float, prior: SegmentPrior) -> float:
    """Log marginal likelihood of ``y`` as one segment (mean and variance integrated out)."""
    n = y.size
    ybar = y.mean()
    kn = prior.kappa0 + n
    an = prior.alpha0 + n / 2
    bn = (prior.beta0 + 0.5 * np.sum((y - ybar) ** 2)
          + prior.kappa0 * n * (ybar - mu0) ** 2 / (2 * kn))
    return float(gammaln(an) - gammaln(prior.alpha0)
                 + prior.alpha0 * np.log(prior.beta0) - an * np.log(bn)
                 + 0.5 * np.log(prior.kappa0 / kn) - 0.5 * n * np.log(2 * np.pi))


def _segment_table(y: np.ndarray, mu0: float, prior: SegmentPrior) -> np.ndarray:
    """``table[s, t]`` = segment_log_evidence(y[s:t]) for all s < t, -inf elsewhere."""
    n = y.size
    c1 = np.concatenate(([0.0], np.cumsum(y - mu0)))
    c2 = np.concatenate(([0.0], np.cumsum((y - mu0) ** 2)))
    s, t = np.triu_indices(n + 1, k=1)
    length = (t - s).astype(np.float64)
    total = c1[t] - c1[s]
    dev_mean = total / length  # segment mean minus mu0
    ss = np.maximum(c2[t] - c2[s] - total * dev_mean, 0.0)
    kn = prior.kappa0 + length
    an = prior.alpha0 + length / 2
    bn = prior.beta0 + 0.5 * ss + prior.kappa0 * length * dev_mean ** 2 / (2 * kn)
    table = np.full((n + 1, n + 1), -np.inf)
    table[s, t] = (gammaln(an) - gammaln(prior.alpha0)
                   + prior.alpha0 * np.log(prior.beta0) - an * np.log(bn)
                   + 0.5 * np.log(prior.kappa0 / kn) - 0.5 * length * np.log(2 * np.pi))
    return table


def _resolve(seq, prior: SegmentPrior):
    y = np.asarray(seq, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("change-point input must be non-empty")
    if not np.all(np.isfinite(y)):
        raise ValueError("change-point input must be finite")
    mu0 = float(y.mean()) if prior.mu0 is None else prior.mu0
    hazard = 1.0 / y.size if prior.hazard is None else prior.hazard
    return y, mu0, hazard


def confidence(seq, prior: SegmentPrior = SegmentPrior()) -> np.ndarray:
    """Posterior probability that index ``i`` begins a new segment; entry 0 is 0."""
    y, mu0, h = _resolve(seq, prior)
    n = y.size
    if n == 1:
        return np.zeros(1)
    log_h, log_stay = np.log(h), np.log1p(-h)

    # seg[s, t]: evidence of y[s:t] as one segment, times its prior weight
    # (t-s-1 interior non-boundaries, plus a boundary at t unless t == n).
    seg = _segment_table(y, mu0, prior)
    s_idx, t_idx = np.triu_indices(n + 1, k=1)
    seg[s_idx, t_idx] += (t_idx - s_idx - 1) * log_stay + np.where(t_idx < n, log_h, 0.0)

    fwd = np.full(n + 1, -np.inf)
    fwd[0] = 0.0
    for t in range(1, n + 1):
        fwd[t] = logsumexp(fwd[:t] + seg[:t, t])
    bwd = np.full(n + 1, -np.inf)
    bwd[n] = 0.0
    for s in range(n - 1, -1, -1):
        bwd[s] = logsumexp(seg[s, s + 1:] + bwd[s + 1:])

    conf = np.exp(fwd[:n] + bwd[:n] - fwd[n])
    conf[0] = 0.0
    return np.clip(conf, 0.0, 1.0)


def first_changepoint(conf, alpha: float) -> int | None:
    """Smallest index whose confidence exceeds ``alpha``, used as an exclusive cutoff."""
    hits = np.flatnonzero(np.asarray(conf) > alpha)
    return int(hits[0]) if hits.size else None
