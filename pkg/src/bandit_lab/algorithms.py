"""Conservative contextual bandit algorithms and their ungated counterparts.

Each algorithm keeps a :class:`SafetyLedger` of running sums over the rounds
where it explored (IGW or UCB plays) and the rounds where it fell back to
the baseline arm. A candidate is played only when the optimistic estimate of
cumulative cost, plus a slack term, stays under ``(1 + alpha)`` times the
baseline's cumulative cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import AlgoConfig, BanditError, RoundLog, check_cost
from .environments import Round
from .igw import igw_kl, igw_square, sample
from .oracles import Oracle, kl_clamp, regret_budget, with_bias_feature


@dataclass
class SafetyLedger:
    m: int = 0
    n: int = 0
    term_a: float = 0.0
    term_b: float = 0.0
    rhs_cum: float = 0.0
    membership: list[bool] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return self.m + self.n

    def record_explore(self, expected_oracle_cost: float, baseline_cost: float) -> None:
        self.m += 1
        self.term_a += expected_oracle_cost
        self.rhs_cum += baseline_cost
        self.membership.append(False)

    def record_baseline(self, baseline_cost: float) -> None:
        self.n += 1
        self.term_b += baseline_cost
        self.rhs_cum += baseline_cost
        self.membership.append(True)


def expected_prediction(probs, predictions) -> float:
    """``sum_a p_a * y_hat_a``, the amount an exploring round adds to term A."""
    return float(np.dot(probs, predictions))


def gate(ledger: SafetyLedger, candidate_pred: float, alpha: float, slack: float, baseline_cost_now: float) -> bool:
    lhs = candidate_pred + ledger.term_a + ledger.term_b + slack
    rhs = (1.0 + alpha) * (ledger.rhs_cum + baseline_cost_now)
    return lhs <= rhs


def _slack_rounds(ledger: SafetyLedger, include_candidate: bool) -> int:
    return ledger.m + (1 if include_candidate else 0)


def safety_check_square(
    ledger: SafetyLedger,
    candidate_pred: float,
    alpha: float,
    regret_budget_at_m: float,
    delta: float,
    margin_scale: float,
    baseline_cost_now: float,
    *,
    include_candidate: bool = False,
    log_term: float | None = None,
) -> bool:
    """Squared-loss gate with slack ``margin * sqrt(m (Reg(m) + ln(4/delta)))``."""
    if log_term is None:
        log_term = math.log(4.0 / delta)
    m = _slack_rounds(ledger, include_candidate)
    slack = margin_scale * math.sqrt(m * (regret_budget_at_m + log_term))
    return gate(ledger, candidate_pred, alpha, slack, baseline_cost_now)


def safety_check_kl(
    ledger: SafetyLedger,
    candidate_pred: float,
    alpha: float,
    regret_budget_T: float,
    margin_scale: float,
    baseline_cost_now: float,
    *,
    include_candidate: bool = False,
    log_term: float | None = None,
) -> bool:
    """KL gate with slack ``margin * sqrt(m Reg_KL(T))`` (plus an optional log term)."""
    if log_term is None:
        log_term = 0.0
    m = _slack_rounds(ledger, include_candidate)
    slack = margin_scale * math.sqrt(m * (regret_budget_T + log_term))
    return gate(ledger, candidate_pred, alpha, slack, baseline_cost_now)


def gamma_square(m_so_far: int, K: int, regret_budget_T: float, delta: float) -> float:
    return max(1.0, math.sqrt(K * max(1, m_so_far) / (regret_budget_T + math.log(4.0 / delta))))


@dataclass(frozen=True)
class GammaScheduleState:
    eta: float = 1.0
    cum_opt_loss: float = 0.0
    episode_count: int = 0


def gamma_kl(state: GammaScheduleState, K: int, regret_budget_T: float) -> float:
    return max(10.0 * K, math.sqrt(K * state.eta / regret_budget_T))


def schedule_update(state: GammaScheduleState, step_cost: float) -> GammaScheduleState:
    """Accumulate one round's cost and double ``eta`` whenever the total passes ``2 * eta``."""
    step_cost = check_cost(step_cost, "schedule cost")
    total = state.cum_opt_loss + step_cost
    eta, episodes = state.eta, state.episode_count
    while total > 2.0 * eta:
        eta *= 2.0
        episodes += 1
    return GammaScheduleState(eta, total, episodes)


class Algorithm:
    name = "algorithm"
    gated = True

    def __init__(self, n_arms: int, config: AlgoConfig):
        if n_arms < 2:
            raise BanditError("need at least two arms")
        self.n_arms = n_arms
        self.config = config
        self.ledger = SafetyLedger()

    def step(self, rnd: Round, action_draw: float, cost_draw: float) -> RoundLog:
        raise NotImplementedError

    def _log(self, rnd: Round, arm: int, is_baseline: bool, preds, probs, observed: float, candidate: int) -> RoundLog:
        return RoundLog(
            round=rnd.t,
            chosen_arm=int(arm),
            is_baseline=is_baseline,
            predictions=tuple(float(p) for p in preds),
            distribution=() if is_baseline else tuple(float(p) for p in probs),
            observed_cost=float(observed),
            expected_cost_chosen=float(rnd.expected_costs[arm]),
            expected_cost_optimal=rnd.optimal_cost,
            baseline_expected_cost=rnd.baseline_cost,
            candidate_arm=int(candidate),
        )


class _OracleIGW(Algorithm):
    """Shared round loop for the two IGW variants."""

    def __init__(self, oracle: Oracle, n_arms: int, config: AlgoConfig, gated: bool = True):
        super().__init__(n_arms, config)
        self.oracle = oracle
        self.gated = gated
        self.budget_T = regret_budget(config.regret_budget_kind, config.regret_coef, config.horizon)
        self.last_gamma = math.nan

    def _predict(self, x: np.ndarray) -> np.ndarray:
        return self.oracle.predict(x)

    def _distribution(self, preds: np.ndarray):
        raise NotImplementedError

    def _safe(self, candidate_pred: float, baseline_cost: float) -> bool:
        raise NotImplementedError

    def _after_explore(self, rnd: Round, observed: float) -> None:
        pass

    def step(self, rnd: Round, action_draw: float, cost_draw: float) -> RoundLog:
        x = rnd.contexts.vectors
        preds = self._predict(x)
        dist = self._distribution(preds)
        candidate = sample(dist, action_draw)
        b_cost = rnd.baseline_cost
        if not self.gated or self._safe(float(preds[candidate]), b_cost):
            observed = rnd.observe(candidate, cost_draw)
            self.ledger.record_explore(expected_prediction(dist.probs, preds), b_cost)
            self.oracle.update(x[candidate], observed)
            self._after_explore(rnd, observed)
            log = self._log(rnd, candidate, False, preds, dist.probs, observed, candidate)
        else:
            self.ledger.record_baseline(b_cost)
            log = self._log(rnd, rnd.baseline_arm, True, preds, (), b_cost, candidate)
        self.oracle.end_round(rnd.t)
        return log


class SquareCB(_OracleIGW):
    """C-SquareCB (``gated=True``) or plain SquareCB (``gated=False``)."""

    def __init__(self, oracle: Oracle, n_arms: int, config: AlgoConfig, gated: bool = True):
        super().__init__(oracle, n_arms, config, gated)
        self.name = "c_squarecb" if gated else "vanilla_squarecb"

    def _distribution(self, preds):
        cfg = self.config
        self.last_gamma = gamma_square(self.ledger.m, self.n_arms, self.budget_T, cfg.delta)
        return igw_square(preds, self.last_gamma)

    def _safe(self, candidate_pred, baseline_cost):
        return square_gate(self.ledger, candidate_pred, baseline_cost, self.config)


class FastCB(_OracleIGW):
    """C-FastCB (``gated=True``) or plain FastCB, with the episodic gamma schedule."""

    def __init__(self, oracle: Oracle, n_arms: int, config: AlgoConfig, gated: bool = True):
        super().__init__(oracle, n_arms, config, gated)
        self.name = "c_fastcb" if gated else "vanilla_fastcb"
        self.schedule = GammaScheduleState()

    def _predict(self, x):
        return kl_clamp(self.oracle.predict(x))

    def _distribution(self, preds):
        self.last_gamma = gamma_kl(self.schedule, self.n_arms, self.budget_T)
        return igw_kl(preds, self.last_gamma)

    def _safe(self, candidate_pred, baseline_cost):
        return kl_gate(self.ledger, candidate_pred, baseline_cost, self.config)

    def _after_explore(self, rnd, observed):
        cost = rnd.optimal_cost if self.config.schedule_mode == "oracle_optimal" else observed
        self.schedule = schedule_update(self.schedule, cost)


def square_gate(ledger: SafetyLedger, candidate_pred: float, baseline_cost: float, cfg: AlgoConfig) -> bool:
    m = _slack_rounds(ledger, cfg.slack_includes_candidate)
    return safety_check_square(
        ledger,
        candidate_pred,
        cfg.alpha,
        regret_budget(cfg.regret_budget_kind, cfg.regret_coef, m),
        cfg.delta,
        cfg.margin_scale,
        baseline_cost,
        include_candidate=cfg.slack_includes_candidate,
        log_term=cfg.slack_log_term,
    )


def kl_gate(ledger: SafetyLedger, candidate_pred: float, baseline_cost: float, cfg: AlgoConfig) -> bool:
    return safety_check_kl(
        ledger,
        candidate_pred,
        cfg.alpha,
        regret_budget(cfg.regret_budget_kind, cfg.regret_coef, cfg.horizon),
        cfg.margin_scale,
        baseline_cost,
        include_candidate=cfg.slack_includes_candidate,
        log_term=cfg.slack_log_term,
    )


@dataclass(frozen=True)
class LinUCBParams:
    lambda_reg: float = 1.0
    s_bound: float = 1.0
    bias_feature: bool = False


class LinUCB(Algorithm):
    """Optimistic (lowest lower-bound) linear bandit with a UCB-based safety gate.

    The gate sums the clamped upper confidence bounds of past played arms and
    of the candidate; the bounds are what the round log stores as predictions,
    so the ledger is rebuilt from logs exactly as for the IGW algorithms.
    """

    def __init__(self, n_arms: int, dim: int, config: AlgoConfig, params: LinUCBParams = LinUCBParams(), gated=True):
        super().__init__(n_arms, config)
        if not params.lambda_reg > 0:
            raise BanditError("LinUCB lambda must be > 0")
        self.params = params
        self.gated = gated
        self.name = "c_linucb" if gated else "linucb"
        self.dim = dim + (1 if params.bias_feature else 0)
        self.gram = params.lambda_reg * np.eye(self.dim)
        self.moment = np.zeros(self.dim)
        self.count = 0

    def beta(self) -> float:
        p, d, delta = self.params, self.dim, self.config.delta
        return math.sqrt(p.lambda_reg) * p.s_bound + math.sqrt(
            2.0 * math.log(1.0 / delta) + d * math.log(1.0 + self.count / (d * p.lambda_reg))
        )

    def bounds(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        feats = with_bias_feature(x) if self.params.bias_feature else x
        factor = cho_factor(self.gram, check_finite=False)
        theta = cho_solve(factor, self.moment, check_finite=False)
        widths = np.sqrt(np.maximum(np.einsum("ij,ji->i", feats, cho_solve(factor, feats.T, check_finite=False)), 0.0))
        mean = feats @ theta
        b = self.beta()
        return mean - b * widths, mean + b * widths

    def step(self, rnd: Round, action_draw: float, cost_draw: float) -> RoundLog:
        x = rnd.contexts.vectors
        lower, upper = self.bounds(x)
        preds = np.clip(upper, 0.0, 1.0)
        candidate = int(np.argmin(lower))
        b_cost = rnd.baseline_cost
        if not self.gated or gate(self.ledger, float(preds[candidate]), self.config.alpha, 0.0, b_cost):
            probs = np.zeros(self.n_arms)
            probs[candidate] = 1.0
            observed = rnd.observe(candidate, cost_draw)
            self.ledger.record_explore(expected_prediction(probs, preds), b_cost)
            feats = with_bias_feature(x[candidate]) if self.params.bias_feature else x[candidate]
            self.gram = self.gram + np.outer(feats, feats)
            self.moment = self.moment + observed * feats
            self.count += 1
            return self._log(rnd, candidate, False, preds, probs, observed, candidate)
        self.ledger.record_baseline(b_cost)
        return self._log(rnd, rnd.baseline_arm, True, preds, (), b_cost, candidate)


class AlwaysBaseline(Algorithm):
    name = "always_baseline"
    gated = False

    def step(self, rnd: Round, action_draw: float, cost_draw: float) -> RoundLog:
        b = rnd.baseline_arm
        self.ledger.record_baseline(rnd.baseline_cost)
        return self._log(rnd, b, True, np.zeros(self.n_arms), (), rnd.baseline_cost, b)


def replay_ledger(logs) -> np.ndarray:
    """Rebuild (term A, term B, rhs) after every round from the round logs alone."""
    ledger = SafetyLedger()
    out = np.empty((len(logs), 3))
    for i, log in enumerate(logs):
        if log.is_baseline:
            ledger.record_baseline(log.baseline_expected_cost)
        else:
            ledger.record_explore(expected_prediction(log.distribution, log.predictions), log.baseline_expected_cost)
        out[i] = (ledger.term_a, ledger.term_b, ledger.rhs_cum)
    return out


def replay_decisions(logs, algorithm: str, cfg: AlgoConfig) -> list[bool]:
    """Re-run the safety gate post hoc; True where the candidate would be played."""
    ledger = SafetyLedger()
    decisions = []
    for log in logs:
        cand_pred = log.predictions[log.candidate_arm]
        b_cost = log.baseline_expected_cost
        if algorithm == "c_squarecb":
            ok = square_gate(ledger, cand_pred, b_cost, cfg)
        elif algorithm == "c_fastcb":
            ok = kl_gate(ledger, cand_pred, b_cost, cfg)
        elif algorithm == "c_linucb":
            ok = gate(ledger, cand_pred, cfg.alpha, 0.0, b_cost)
        elif algorithm == "always_baseline":
            ok = False
        elif algorithm in ("vanilla_squarecb", "vanilla_fastcb", "linucb"):
            ok = True
        else:
            raise BanditError(f"unknown algorithm {algorithm!r}")
        decisions.append(ok)
        if log.is_baseline:
            ledger.record_baseline(b_cost)
        else:
            ledger.record_explore(expected_prediction(log.distribution, log.predictions), b_cost)
    return decisions


def with_overrides(cfg: AlgoConfig, **changes) -> AlgoConfig:
    return replace(cfg, **changes)
