import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandit_lab.algorithms import (
    AlwaysBaseline,
    FastCB,
    GammaScheduleState,
    LinUCB,
    SafetyLedger,
    SquareCB,
    gamma_kl,
    gamma_square,
    replay_decisions,
    replay_ledger,
    safety_check_kl,
    safety_check_square,
    schedule_update,
)
from bandit_lab.core import AlgoConfig, BanditError, ContextSet
from bandit_lab.environments import Environment, Round, SyntheticEnv
from bandit_lab.oracles import RidgeOracle

# Frozen from mpmath at 30 digits: 40.5 + 16 sqrt(100 (5 + ln 16)) and sqrt(400 / (3 + ln 16)).
SAFETY_LHS = 486.56980539971364
GAMMA_K4 = 8.3242418078243256


def _mp(expr):
    mpmath.mp.dps = 30
    return float(expr(mpmath))


def test_safety_square_first_round():
    led = SafetyLedger()
    assert safety_check_square(led, 0.5, 0.1, 1.0, 0.1, 16.0, 0.6)
    assert not safety_check_square(led, 0.9, 0.1, 1.0, 0.1, 16.0, 0.6)


def test_safety_square_worked_example():
    assert _mp(lambda m: 40.5 + 16 * m.sqrt(100 * (5 + m.log(16)))) == pytest.approx(SAFETY_LHS, rel=1e-15)
    led = SafetyLedger(m=100, term_a=40.0, rhs_cum=60.0)
    assert not safety_check_square(led, 0.5, 0.1, 5.0, 0.25, 16.0, 0.6)
    # The same ledger passes once the right-hand side exceeds the left.
    assert safety_check_square(led, 0.5, (SAFETY_LHS + 1e-6) / 60.6 - 1.0, 5.0, 0.25, 16.0, 0.6)
    assert not safety_check_square(led, 0.5, (SAFETY_LHS - 1e-6) / 60.6 - 1.0, 5.0, 0.25, 16.0, 0.6)


def test_safety_kl_examples():
    led0 = SafetyLedger()
    assert safety_check_kl(led0, 0.5, 0.1, 3.0, 16.0, 0.6) == safety_check_square(led0, 0.5, 0.1, 3.0, 0.1, 16.0, 0.6)
    led = SafetyLedger(m=4, term_a=1.0)
    # LHS = 1.2 + 16 * 2 = 33.2
    assert not safety_check_kl(led, 0.2, 1.0, 1.0, 16.0, 33.2 / 2 - 1e-9)
    assert safety_check_kl(led, 0.2, 1.0, 1.0, 16.0, 33.2 / 2 + 1e-9)
    assert safety_check_kl(led, 0.2, 0.1, 1.0, 0.0, 1.1)


def test_include_candidate_counts_the_next_round():
    led = SafetyLedger()
    assert not safety_check_square(led, 0.0, 0.1, 1.0, 0.1, 1.0, 1.0, include_candidate=True)


def test_gamma_square_examples():
    assert _mp(lambda m: m.sqrt(400 / (3 + m.log(16)))) == pytest.approx(GAMMA_K4, rel=1e-15)
    assert gamma_square(100, 4, 3.0, 0.25) == pytest.approx(GAMMA_K4, rel=1e-12)
    assert gamma_square(0, 4, 3.0, 0.25) == 1.0
    values = [gamma_square(m, 5, 4.0, 0.1) for m in range(0, 2000, 7)]
    assert values == sorted(values)


def test_gamma_kl_examples():
    assert gamma_kl(GammaScheduleState(eta=1.0), 4, 1.0) == 40.0
    assert gamma_kl(GammaScheduleState(eta=1600.0), 4, 1.0) == 80.0
    assert gamma_kl(GammaScheduleState(eta=200.0), 2, 2.0) == 20.0


def test_schedule_update_examples():
    s = schedule_update(GammaScheduleState(1.0, 1.9, 0), 0.2)
    assert (s.eta, s.episode_count) == (2.0, 1)
    assert s.cum_opt_loss == pytest.approx(2.1)
    s = schedule_update(GammaScheduleState(1.0, 0.5, 0), 0.3)
    assert (s.eta, s.episode_count) == (1.0, 0)
    with pytest.raises(BanditError):
        schedule_update(GammaScheduleState(), 1.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), max_size=300))
def test_schedule_invariant(costs):
    s = GammaScheduleState()
    for c in costs:
        s = schedule_update(s, c)
        assert s.cum_opt_loss <= 2 * s.eta


def _run(alg, env, T, seed=0):
    rng = np.random.default_rng(seed)
    a_draws, c_draws = rng.random(T), rng.random(T)
    logs, trace = [], []
    for t in range(1, T + 1):
        logs.append(alg.step(env.round(t), a_draws[t - 1], c_draws[t - 1]))
        led = alg.ledger
        assert led.m + led.n == t
        trace.append((led.term_a, led.term_b, led.rhs_cum))
    return logs, np.array(trace)


def _cfg(**kw):
    kw.setdefault("horizon", 300)
    return AlgoConfig(**kw)


def test_tiny_alpha_defers_every_round():
    env = SyntheticEnv("linear", d=5, K=4, seed=1)
    for cls in (SquareCB, FastCB):
        alg = cls(RidgeOracle(5, kl=cls is FastCB), 4, _cfg(alpha=1e-9, margin_scale=16.0, horizon=100))
        logs, _ = _run(alg, env, 100)
        assert alg.ledger.n == 100
        assert all(lg.is_baseline for lg in logs)


@pytest.mark.parametrize("name", ["square", "fast", "lin"])
def test_huge_alpha_matches_ungated(name):
    env = SyntheticEnv("nonlinear_cosine", d=6, K=4, seed=3)
    cfg = _cfg(alpha=1e6, margin_scale=0.0)

    def make(gated):
        if name == "lin":
            return LinUCB(4, 6, cfg, gated=gated)
        cls = SquareCB if name == "square" else FastCB
        return cls(RidgeOracle(6, kl=name == "fast"), 4, cfg, gated=gated)

    a, ta = _run(make(True), env, 300)
    b, tb = _run(make(False), env, 300)
    assert a == b
    np.testing.assert_array_equal(ta, tb)


@pytest.mark.parametrize("cls", [SquareCB, FastCB])
def test_ledger_replay_and_decisions(cls):
    env = SyntheticEnv("linear", d=5, K=4, seed=2)
    cfg = _cfg(alpha=0.1, margin_scale=1.0)
    alg = cls(RidgeOracle(5, bias_feature=True, kl=cls is FastCB), 4, cfg)
    logs, trace = _run(alg, env, 300)
    assert 0 < alg.ledger.n < 300
    np.testing.assert_allclose(replay_ledger(logs), trace, rtol=0, atol=1e-9)
    online = [not lg.is_baseline for lg in logs]
    assert replay_decisions(logs, alg.name, cfg) == online


def test_linucb_ledger_replay():
    env = SyntheticEnv("linear", d=5, K=4, seed=2, baseline="fixed_suboptimal_policy")
    cfg = _cfg(alpha=0.1)
    alg = LinUCB(4, 5, cfg)
    logs, trace = _run(alg, env, 300)
    np.testing.assert_array_equal(replay_ledger(logs), trace)
    assert replay_decisions(logs, "c_linucb", cfg) == [not lg.is_baseline for lg in logs]


class _FixedEnv(Environment):
    """Same contexts every round; arm 0 always has cost 0."""

    def __init__(self, vectors, costs, baseline=1):
        self.vectors = np.asarray(vectors, dtype=float)
        self.costs = np.asarray(costs, dtype=float)
        self.n_arms, self.dim = self.vectors.shape
        self.b = baseline

    def round(self, t):
        return Round(t, ContextSet(self.vectors), self.costs, self.b, self)

    def sample_cost(self, t, arm, uniform_draw, expected=None):
        return float(self.costs[arm])


def test_linucb_cold_start_picks_lowest_index():
    env = _FixedEnv(np.eye(3), [0.5, 0.2, 0.9])
    alg = LinUCB(3, 3, _cfg(alpha=1e6))
    lower, upper = alg.bounds(env.vectors)
    assert np.all(lower == lower[0]) and np.all(upper == upper[0])
    log = alg.step(env.round(1), 0.3, 0.3)
    assert log.candidate_arm == 0 and log.chosen_arm == 0
    np.testing.assert_array_equal(alg.gram, np.diag([2.0, 1.0, 1.0]))


def test_linucb_gate_sums_ucbs():
    env = _FixedEnv(np.eye(3), [0.5, 0.2, 0.9])
    alg = LinUCB(3, 3, _cfg(alpha=0.1))
    log = alg.step(env.round(1), 0.3, 0.3)
    # The cold-start UCB clips to 1, which exceeds 1.1 * 0.2.
    assert log.is_baseline and log.predictions[0] == 1.0


def test_fastcb_oracle_optimal_zero_cost_keeps_gamma():
    env = _FixedEnv(np.eye(3) * 0.5, [0.0, 0.6, 0.8], baseline=1)
    cfg = _cfg(alpha=1e6, margin_scale=0.0, schedule_mode="oracle_optimal")
    alg = FastCB(RidgeOracle(3, kl=True), 3, cfg)
    gammas = []
    for t in range(1, 201):
        alg.step(env.round(t), (t * 0.618) % 1.0, 0.5)
        gammas.append(alg.last_gamma)
    assert set(gammas) == {30.0}
    assert alg.schedule.eta == 1.0


def test_fastcb_uniform_when_predictions_equal():
    env = _FixedEnv(np.zeros((3, 2)), [0.3, 0.3, 0.3], baseline=0)
    alg = FastCB(RidgeOracle(2, kl=True), 3, _cfg(alpha=1e6, margin_scale=0.0))
    log = alg.step(env.round(1), 0.5, 0.5)
    np.testing.assert_allclose(log.distribution, [1 / 3] * 3, rtol=1e-15)


def test_always_baseline():
    env = SyntheticEnv("linear", d=4, K=3, seed=0)
    alg = AlwaysBaseline(3, _cfg())
    logs, trace = _run(alg, env, 50)
    assert all(lg.is_baseline and lg.chosen_arm == 0 for lg in logs)
    np.testing.assert_array_equal(replay_ledger(logs), trace)


def test_algorithm_needs_two_arms():
    with pytest.raises(BanditError):
        AlwaysBaseline(1, _cfg())
    log = AlwaysBaseline(2, _cfg()).step(SyntheticEnv("linear", 2, 2).round(1), 0.1, 0.1)
    with pytest.raises(BanditError):
        replay_decisions([log], "unknown", _cfg())
