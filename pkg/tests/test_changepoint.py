import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagacfl.changepoint import SegmentPrior, confidence, first_changepoint, segment_log_evidence


def _enumerate(seq, prior=SegmentPrior()):
    """Boundary posteriors by summing over every one of the 2^(n-1) segmentations."""
    y = np.asarray(seq, dtype=float)
    n = y.size
    mu0 = y.mean() if prior.mu0 is None else prior.mu0
    h = 1.0 / n if prior.hazard is None else prior.hazard
    logw, masks = [], []
    for mask in itertools.product((0, 1), repeat=n - 1):
        cuts = [0] + [i + 1 for i, b in enumerate(mask) if b] + [n]
        lw = sum(segment_log_evidence(y[s:t], mu0, prior) for s, t in zip(cuts, cuts[1:]))
        lw += sum(mask) * np.log(h) + (n - 1 - sum(mask)) * np.log1p(-h)
        logw.append(lw)
        masks.append(mask)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    post = np.zeros(n)
    post[1:] = w @ np.array(masks, dtype=float)
    return post


@pytest.mark.parametrize("n", [2, 3, 5, 8, 12])
@pytest.mark.parametrize("seed", [0, 1])
def test_dynamic_program_matches_enumeration(n, seed):
    rng = np.random.default_rng(seed * 100 + n)
    seq = np.sort(rng.uniform(-1, 1, n))[::-1]
    np.testing.assert_allclose(confidence(seq), _enumerate(seq), atol=1e-9, rtol=0)


def test_enumeration_with_custom_prior():
    prior = SegmentPrior(mu0=0.2, kappa0=2.0, alpha0=1.5, beta0=0.05, hazard=0.3)
    seq = [0.95, 0.9, 0.91, 0.4, 0.38, 0.1, 0.12, 0.11, -0.2, -0.25]
    np.testing.assert_allclose(confidence(seq, prior), _enumerate(seq, prior), atol=1e-9, rtol=0)


def test_step_sequences_match_enumeration():
    for seq in ([0.98, 0.97, 0.96, 0.12, 0.11], [0.9] * 6 + [0.1] * 6, [0.5] * 12):
        np.testing.assert_allclose(confidence(seq), _enumerate(seq), atol=1e-9, rtol=0)


def test_constant_sequence_has_no_change_point():
    conf = confidence([0.9] * 20)
    assert conf[1:].max() < 0.2


def test_noise_free_step():
    conf = confidence([0.9] * 10 + [0.1] * 10)
    assert int(np.argmax(conf)) == 10
    assert conf[10] > 0.95


def test_small_similarity_step():
    conf = confidence([0.98, 0.97, 0.96, 0.12, 0.11])
    assert first_changepoint(conf, 0.5) == 3


def test_length_one():
    np.testing.assert_array_equal(confidence([0.3]), [0.0])


def test_empty_and_non_finite_rejected():
    with pytest.raises(ValueError):
        confidence([])
    with pytest.raises(ValueError):
        confidence([0.1, np.inf])


def test_first_changepoint_examples():
    assert first_changepoint([0, 0.01, 0.99, 0.02], 0.5) == 2
    assert first_changepoint([0, 0.1, 0.2], 0.5) is None
    assert first_changepoint([0, 0.6, 0.7], 0.5) == 1


@pytest.mark.parametrize("shift", [-5.0, -0.3, 0.7, 12.0])
def test_argmax_shift_invariant(shift):
    base = np.array([0.8] * 7 + [0.2] * 5)
    assert int(np.argmax(confidence(base + shift))) == int(np.argmax(confidence(base))) == 7


def test_confidence_monotone_in_step_size():
    for seed in range(5):
        noise = np.random.default_rng(seed).normal(0, 0.02, 16)
        prev = -1.0
        for step in np.linspace(0.0, 1.0, 21):
            seq = np.concatenate([np.full(8, step), np.zeros(8)]) + noise
            c = confidence(seq)[8]
            assert c >= prev - 1e-12
            prev = c


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=40))
def test_output_shape_and_range(seq):
    conf = confidence(seq)
    assert conf.shape == (len(seq),)
    assert conf[0] == 0.0
    assert np.all((conf >= 0) & (conf <= 1))
