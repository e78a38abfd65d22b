import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandit_lab.core import BanditError
from bandit_lab.igw import ActionDistribution, igw_kl, igw_square, sample

mpmath.mp.dps = 50


def mp_square(preds, gamma):
    preds = [mpmath.mpf(p) for p in preds]
    k, z = len(preds), min(range(len(preds)), key=lambda i: preds[i])
    p = [1 / (k + gamma * (y - preds[z])) for y in preds]
    p[z] = 1 - sum(p[i] for i in range(k) if i != z)
    return p


def mp_kl(preds, gamma):
    preds = [mpmath.mpf(p) for p in preds]
    k, z = len(preds), min(range(len(preds)), key=lambda i: preds[i])
    yz = preds[z]
    p = [yz / (k * yz + gamma * (y - yz)) for y in preds]
    p[z] = 1 - sum(p[i] for i in range(k) if i != z)
    return p


# Frozen from mp_square / mp_kl at 50 digits.
SQUARE_1E6 = 3.333311111259258e-06
KL_SMALL = 1.111112320988972e-08


def test_square_frozen_value_matches_oracle():
    assert float(mp_square([0.2, 0.5], mpmath.mpf(10) ** 6)[1]) == pytest.approx(SQUARE_1E6, rel=1e-12)
    assert float(mp_kl([mpmath.mpf("1e-6"), 0.9], 100)[1]) == pytest.approx(KL_SMALL, rel=1e-12)


def test_square_examples():
    d = igw_square([0.2, 0.5], 10)
    np.testing.assert_allclose(d.probs, [0.8, 0.2], rtol=0, atol=1e-15)
    assert d.greedy_arm == 0
    np.testing.assert_allclose(igw_square([0.4, 0.4, 0.4], 7.0).probs, [1 / 3] * 3, atol=1e-15)
    big = igw_square([0.2, 0.5], 1e6)
    assert big.probs[1] == pytest.approx(SQUARE_1E6, rel=1e-12)
    assert big.probs[0] == pytest.approx(1 - SQUARE_1E6, rel=1e-12)


def test_kl_examples():
    d = igw_kl([0.2, 0.5], 10)
    np.testing.assert_allclose(d.probs, [16 / 17, 1 / 17], rtol=1e-14)
    np.testing.assert_allclose(igw_kl([0.3, 0.3], 5.0).probs, [0.5, 0.5], atol=1e-16)
    small = igw_kl([1e-6, 0.9], 100)
    assert small.probs[1] == pytest.approx(KL_SMALL, rel=1e-12)
    assert small.probs[0] == pytest.approx(1 - KL_SMALL, rel=1e-12)


def test_tie_break_is_lowest_index():
    assert igw_square([0.5, 0.1, 0.1], 3.0).greedy_arm == 1
    assert igw_kl([0.5, 0.1, 0.1], 3.0).greedy_arm == 1


@pytest.mark.parametrize(
    "preds,gamma",
    [([0.5], 1.0), ([0.1, np.nan], 1.0), ([0.1, 0.2], 0.0), ([0.1, 0.2], -1.0), ([0.1, 0.2], np.inf)],
)
def test_square_errors(preds, gamma):
    with pytest.raises(BanditError):
        igw_square(preds, gamma)


@pytest.mark.parametrize("preds", [[0.0, 0.5], [0.2, 1.0]])
def test_kl_rejects_boundary_predictions(preds):
    with pytest.raises(BanditError):
        igw_kl(preds, 10.0)


preds_st = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12)
kl_preds_st = st.lists(st.floats(1e-6, 1 - 1e-6), min_size=2, max_size=12)
gamma_st = st.floats(1e-3, 1e7)


def _check(dist: ActionDistribution, preds):
    p = dist.probs
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)
    z = dist.greedy_arm
    assert p[z] >= p.max() - 1e-15
    order = np.argsort(preds, kind="stable")
    others = [i for i in order if i != z]
    for a, b in zip(others, others[1:]):
        if preds[a] < preds[b]:
            assert p[a] >= p[b]


@settings(max_examples=300, deadline=None)
@given(preds_st, gamma_st)
def test_square_properties(preds, gamma):
    _check(igw_square(preds, gamma), np.array(preds))


@settings(max_examples=300, deadline=None)
@given(kl_preds_st, gamma_st)
def test_kl_properties(preds, gamma):
    _check(igw_kl(preds, gamma), np.array(preds))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6), st.floats(0.1, 1e4))
def test_square_agrees_with_high_precision(preds, gamma):
    got = igw_square(preds, gamma).probs
    want = [float(v) for v in mp_square(preds, mpmath.mpf(gamma))]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-13)


def test_sample_examples():
    d = igw_square([0.2, 0.5], 10)
    assert sample(d, 0.79) == 0
    assert sample(d, 0.80) == 1
    u = igw_square([0.4, 0.4, 0.4], 1.0)
    assert sample(u, 0.5) == 1


def test_sample_rejects_bad_draw():
    d = igw_square([0.2, 0.5], 10)
    for bad in (-0.1, 1.0, np.nan):
        with pytest.raises(BanditError):
            sample(d, bad)


def test_sample_skips_zero_mass_tail():
    d = ActionDistribution(np.array([0.3, 0.7 - 1e-12, 0.0]), 0)
    assert sample(d, 1 - 1e-13) == 1


def test_sample_frequencies():
    d = igw_square([0.2, 0.5, 0.35, 0.9], 8.0)
    draws = np.random.default_rng(11).random(200_000)
    arms = np.array([sample(d, u) for u in draws])
    freq = np.bincount(arms, minlength=4) / draws.size
    sd = np.sqrt(d.probs * (1 - d.probs) / draws.size)
    assert np.all(np.abs(freq - d.probs) <= 5 * sd)
