"""Online regression oracles behind a small predict/update interface.

The conservative algorithms only need three things from an oracle: batch
predictions for the K arms of a round, an update with one (context, cost)
pair, and a numeric stand-in for the oracle's regret bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import neural
from .core import REGRET_BUDGET_KINDS, BanditError, check_cost

EPS_CLAMP = 1e-6


def regret_budget(kind: str, coefficient: float, T: int) -> float:
    """Numeric stand-in for the oracle regret ``Reg(T)``, floored at 1."""
    if not coefficient > 0:
        raise BanditError(f"regret-budget coefficient must be > 0, got {coefficient!r}")
    if kind == "constant":
        return max(1.0, float(coefficient))
    if kind == "c_log_T":
        return max(1.0, coefficient * math.log(max(T, 0) + 1))
    raise BanditError(f"unknown regret-budget kind {kind!r}; expected one of {REGRET_BUDGET_KINDS}")


def kl_clamp(y_hat):
    """Keep predictions inside ``[1e-6, 1 - 1e-6]`` so the KL loss stays finite."""
    arr = np.asarray(y_hat, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise BanditError("kl_clamp needs finite input")
    out = np.minimum(np.maximum(arr, EPS_CLAMP), 1.0 - EPS_CLAMP)
    return float(out) if out.ndim == 0 else out


def with_bias_feature(x: np.ndarray) -> np.ndarray:
    """Append a constant coordinate and rescale by 1/sqrt(2) so unit-ball inputs stay in the unit ball."""
    x = np.asarray(x, dtype=float)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([x, ones], axis=-1) / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class RidgeState:
    gram: np.ndarray
    moment: np.ndarray
    lambda_reg: float = 1.0
    count: int = 0

    @classmethod
    def fresh(cls, dim: int, lambda_reg: float = 1.0) -> RidgeState:
        if not lambda_reg > 0:
            raise BanditError("ridge regularisation must be > 0")
        return cls(lambda_reg * np.eye(dim), np.zeros(dim), float(lambda_reg), 0)

    @property
    def dim(self) -> int:
        return self.moment.shape[0]

    def estimate(self) -> np.ndarray:
        return cho_solve(cho_factor(self.gram, check_finite=False), self.moment, check_finite=False)


def ridge_predict(state: RidgeState, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise BanditError(f"context has dimension {x.shape}, ridge state expects {state.dim}")
    return float(np.clip(x @ state.estimate(), 0.0, 1.0))


def ridge_update(state: RidgeState, x, y: float) -> RidgeState:
    y = check_cost(y, "ridge target")
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise BanditError(f"context has dimension {x.shape}, ridge state expects {state.dim}")
    return RidgeState(state.gram + np.outer(x, x), state.moment + y * x, state.lambda_reg, state.count + 1)


class Oracle:
    """Base class. ``predict`` takes a K x d array; ``update`` a single row and cost."""

    kl: bool = False

    def __init__(self, budget_kind: str = "c_log_T", budget_coef: float = 1.0):
        regret_budget(budget_kind, budget_coef, 1)
        self.budget_kind = budget_kind
        self.budget_coef = budget_coef

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def update(self, x: np.ndarray, y: float) -> None:
        raise NotImplementedError

    def end_round(self, t: int) -> None:
        """Hook called once per round after the decision; no-op unless updates are buffered."""

    def regret_budget(self, T: int) -> float:
        return regret_budget(self.budget_kind, self.budget_coef, T)

    def _output(self, raw: np.ndarray) -> np.ndarray:
        return kl_clamp(raw) if self.kl else np.clip(raw, 0.0, 1.0)


class RidgeOracle(Oracle):
    """Ridge regression on the raw context (optionally with a bias coordinate)."""

    def __init__(
        self,
        dim: int,
        lambda_reg: float = 1.0,
        bias_feature: bool = False,
        kl: bool = False,
        budget_kind: str = "c_log_T",
        budget_coef: float = 1.0,
    ):
        super().__init__(budget_kind, budget_coef)
        self.bias_feature = bias_feature
        self.kl = kl
        self.state = RidgeState.fresh(dim + (1 if bias_feature else 0), lambda_reg)
        self._theta: np.ndarray | None = np.zeros(self.state.dim)

    def _features(self, x: np.ndarray) -> np.ndarray:
        return with_bias_feature(x) if self.bias_feature else np.asarray(x, dtype=float)

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        if self._theta is None:
            self._theta = self.state.estimate()
        return self._output(self._features(contexts) @ self._theta)

    def update(self, x: np.ndarray, y: float) -> None:
        self.state = ridge_update(self.state, self._features(x), y)
        self._theta = None


class NeuralOracle(Oracle):
    """Perturbed-ensemble network trained by projected OGD, one step per example."""

    def __init__(
        self,
        config: neural.NetworkConfig,
        step_size: float,
        seed: int = 0,
        bias_feature: bool = False,
        budget_kind: str = "c_log_T",
        budget_coef: float = 1.0,
    ):
        super().__init__(budget_kind, budget_coef)
        if not step_size > 0:
            raise BanditError("step size must be > 0")
        self.bias_feature = bias_feature
        self.config = config
        self.kl = config.loss_kind == "kl"
        self.step_size = float(step_size)
        self.anchor, self.seeds = neural.init_params(config, seed)
        self.params = self.anchor
        self.steps = 0

    def _features(self, x: np.ndarray) -> np.ndarray:
        return with_bias_feature(x) if self.bias_feature else np.asarray(x, dtype=float)

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        cfg = self.config
        raw = neural.ensemble_forward(
            self.params, self.anchor, self._features(contexts), self.seeds, cfg.loss_kind, cfg.c_p, cfg.activation
        )
        return self._output(np.atleast_1d(raw))

    def update(self, x: np.ndarray, y: float) -> None:
        cfg = self.config
        _, grad = neural.loss_and_gradient(
            self.params, self.anchor, self._features(x), y, self.seeds, cfg.loss_kind, cfg.c_p, cfg.activation
        )
        self.params = neural.ogd_step(self.params, grad, self.step_size, self.anchor, cfg.rho, cfg.rho1)
        self.steps += 1


class BufferedOracle(Oracle):
    """Collect updates and replay them in arrival order every ``update_every`` rounds."""

    def __init__(self, inner: Oracle, update_every: int = 1, passes: int = 1):
        if int(update_every) != update_every or update_every < 1:
            raise BanditError("update_every must be a positive integer")
        if int(passes) != passes or passes < 1:
            raise BanditError("passes must be a positive integer")
        self.inner = inner
        self.update_every = int(update_every)
        self.passes = int(passes)
        self.kl = inner.kl
        self.budget_kind = inner.budget_kind
        self.budget_coef = inner.budget_coef
        self.buffer: list[tuple[np.ndarray, float]] = []

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        return self.inner.predict(contexts)

    def update(self, x: np.ndarray, y: float) -> None:
        check_cost(y, "oracle target")
        self.buffer.append((np.array(x, dtype=float), float(y)))

    def end_round(self, t: int) -> None:
        if t % self.update_every == 0:
            self.flush()

    def flush(self) -> None:
        for _ in range(self.passes):
            for x, y in self.buffer:
                self.inner.update(x, y)
        self.buffer.clear()

    def regret_budget(self, T: int) -> float:
        return self.inner.regret_budget(T)
