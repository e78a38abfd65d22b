import math

import numpy as np
import pytest

from bandit_lab.core import BanditError
from bandit_lab.neural import NetworkConfig
from bandit_lab.oracles import (
    BufferedOracle,
    NeuralOracle,
    RidgeOracle,
    RidgeState,
    kl_clamp,
    regret_budget,
    ridge_predict,
    ridge_update,
    with_bias_feature,
)


def test_fresh_ridge_predicts_zero():
    assert ridge_predict(RidgeState.fresh(2), np.array([0.3, 0.4])) == 0.0


def test_ridge_closed_form():
    s = RidgeState.fresh(2, 1.0)
    for _ in range(100):
        s = ridge_update(s, np.array([1.0, 0.0]), 0.5)
    assert ridge_predict(s, np.array([1.0, 0.0])) == pytest.approx(50 / 101, rel=1e-12)
    assert ridge_predict(s, np.array([0.0, 1.0])) == 0.0


def test_ridge_rank_one_update():
    s = ridge_update(RidgeState.fresh(2, 1.0), np.array([1.0, 0.0]), 1.0)
    np.testing.assert_array_equal(s.gram, [[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(s.moment, [1.0, 0.0])
    assert s.count == 1


def test_ridge_updates_commute():
    x1, x2 = np.array([0.6, 0.8]), np.array([1.0, 0.0])
    a = ridge_update(ridge_update(RidgeState.fresh(2), x1, 0.2), x2, 0.9)
    b = ridge_update(ridge_update(RidgeState.fresh(2), x2, 0.9), x1, 0.2)
    np.testing.assert_allclose(a.gram, b.gram, rtol=0, atol=1e-15)
    np.testing.assert_allclose(a.moment, b.moment, rtol=0, atol=1e-15)


def test_ridge_rejects_bad_target_and_shape():
    s = RidgeState.fresh(2)
    with pytest.raises(BanditError):
        ridge_update(s, np.array([1.0, 0.0]), 1.5)
    with pytest.raises(BanditError):
        ridge_predict(s, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(BanditError):
        RidgeState.fresh(2, 0.0)


def test_regret_budget_examples():
    assert regret_budget("c_log_T", 1.0, 0) == 1.0
    assert regret_budget("c_log_T", 2.0, round(math.e**3 - 1)) == pytest.approx(6.0, abs=1e-2)
    assert regret_budget("constant", 5.0, 123) == 5.0
    assert regret_budget("constant", 0.2, 5) == 1.0
    with pytest.raises(BanditError):
        regret_budget("nope", 1.0, 5)
    with pytest.raises(BanditError):
        regret_budget("constant", 0.0, 5)


def test_kl_clamp():
    assert kl_clamp(0.5) == 0.5
    assert kl_clamp(0.0) == 1e-6
    assert kl_clamp(1.0) == 1 - 1e-6
    np.testing.assert_array_equal(kl_clamp(np.array([-3.0, 2.0])), [1e-6, 1 - 1e-6])


def test_bias_feature_keeps_unit_ball():
    x = np.array([[0.6, 0.8], [0.0, 0.0]])
    z = with_bias_feature(x)
    assert z.shape == (2, 3)
    assert np.all(np.linalg.norm(z, axis=1) <= 1 + 1e-12)


def test_ridge_oracle_outputs_are_clamped():
    o = RidgeOracle(2)
    for _ in range(20):
        o.update(np.array([1.0, 0.0]), 1.0)
    p = o.predict(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert 0.0 <= p.min() and p.max() <= 1.0
    ko = RidgeOracle(2, kl=True)
    assert ko.predict(np.zeros((2, 2)))[0] == 1e-6


def test_ridge_online_regret_is_sublinear():
    # Cumulative excess square loss against the true linear model grows like log T.
    rng = np.random.default_rng(0)
    d = 5
    theta = rng.normal(size=d)
    theta /= 2 * np.linalg.norm(theta)
    o = RidgeOracle(d, bias_feature=True)
    excess = []
    total = 0.0
    for t in range(4000):
        x = rng.normal(size=d)
        x /= np.linalg.norm(x)
        h = 0.5 + x @ theta
        total += (o.predict(x[None, :])[0] - h) ** 2
        excess.append(total)
        o.update(x, float(rng.random() < h))
    assert excess[3999] / excess[1999] < 1.5


def test_buffered_oracle_replays_in_order():
    direct, buffered = RidgeOracle(2), BufferedOracle(RidgeOracle(2), update_every=10)
    rng = np.random.default_rng(2)
    for t in range(1, 31):
        x = rng.normal(size=2)
        x /= np.linalg.norm(x)
        y = float(rng.random())
        direct.update(x, y)
        buffered.update(x, y)
        buffered.end_round(t)
        if t % 10:
            assert len(buffered.buffer) == t % 10
        else:
            assert not buffered.buffer
            np.testing.assert_array_equal(buffered.inner.state.gram, direct.state.gram)


def test_buffered_oracle_matches_neural_steps():
    cfg = NetworkConfig(input_dim=3, width=8, ensemble_size=2)
    a = NeuralOracle(cfg, 0.1, seed=4)
    b = BufferedOracle(NeuralOracle(cfg, 0.1, seed=4), update_every=5)
    data = np.random.default_rng(1).random((5, 4))
    for t, row in enumerate(data, start=1):
        x = row[:3] / np.linalg.norm(row[:3])
        a.update(x, row[3])
        b.update(x, row[3])
        b.end_round(t)
    np.testing.assert_array_equal(a.params.theta, b.inner.params.theta)


def test_buffered_oracle_validation():
    with pytest.raises(BanditError):
        BufferedOracle(RidgeOracle(2), update_every=0)
    with pytest.raises(BanditError):
        BufferedOracle(RidgeOracle(2), passes=0)
