"""Inverse-gap-weighting action distributions and inverse-CDF sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BanditError

# Largest tolerated negative remainder for the greedy arm before it is clamped to zero.
_REMAINDER_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    probs: np.ndarray
    greedy_arm: int

    @property
    def n_arms(self) -> int:
        return self.probs.shape[0]


def _check_inputs(predictions, gamma: float) -> np.ndarray:
    preds = np.asarray(predictions, dtype=float)
    if preds.ndim != 1 or preds.shape[0] < 2:
        raise BanditError(f"need at least two arms, got shape {preds.shape}")
    if not np.all(np.isfinite(preds)):
        raise BanditError("predictions must be finite")
    if not (np.isfinite(gamma) and gamma > 0):
        raise BanditError(f"gamma must be finite and > 0, got {gamma!r}")
    return preds


def _finish(others: np.ndarray, z: int) -> ActionDistribution:
    others[z] = 0.0
    rest = 1.0 - others.sum()
    if rest < -_REMAINDER_TOL:
        raise AssertionError(f"greedy-arm remainder {rest} is negative beyond tolerance")
    others[z] = max(rest, 0.0)
    others.setflags(write=False)
    return ActionDistribution(others, z)


def igw_square(predictions, gamma: float) -> ActionDistribution:
    """IGW for squared-loss predictions: ``1 / (K + gamma * gap)`` off the greedy arm."""
    preds = _check_inputs(predictions, gamma)
    k = preds.shape[0]
    z = int(np.argmin(preds))
    gaps = preds - preds[z]
    return _finish(1.0 / (k + gamma * gaps), z)


def igw_kl(predictions, gamma: float) -> ActionDistribution:
    """IGW reweighted by the greedy prediction, for KL-loss oracles.

    Off the greedy arm ``p_k = y_z / (K y_z + gamma (y_k - y_z))``. Predictions
    must lie strictly inside (0, 1).
    """
    preds = _check_inputs(predictions, gamma)
    if np.any(preds <= 0.0) or np.any(preds >= 1.0):
        raise BanditError("KL predictions must lie strictly inside (0, 1); clamp them first")
    k = preds.shape[0]
    z = int(np.argmin(preds))
    y_z = preds[z]
    gaps = preds - y_z
    if not np.any(gaps):
        return _finish(np.full(k, 1.0 / k), z)
    return _finish(y_z / (k * y_z + gamma * gaps), z)


def sample(dist: ActionDistribution, uniform_draw: float) -> int:
    """Inverse-CDF draw: the arm whose cumulative cell contains ``uniform_draw``."""
    if not (0.0 <= uniform_draw < 1.0):
        raise BanditError(f"uniform draw must lie in [0, 1), got {uniform_draw!r}")
    cdf = np.cumsum(dist.probs)
    arm = int(np.searchsorted(cdf, uniform_draw, side="right"))
    if arm >= dist.n_arms:
        # cdf[-1] can round to just below 1; fall back to the last arm with mass.
        arm = int(np.flatnonzero(dist.probs)[-1])
    return arm
