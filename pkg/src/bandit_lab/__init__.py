"""Conservative contextual bandits with inverse-gap-weighted exploration."""

from .algorithms import (
    AlwaysBaseline,
    FastCB,
    GammaScheduleState,
    LinUCB,
    SafetyLedger,
    SquareCB,
    gamma_kl,
    gamma_square,
    safety_check_kl,
    safety_check_square,
    schedule_update,
)
from .core import AlgoConfig, BanditError, ContextSet, RoundLog, validate_context_set
from .harness import RunConfig, RunResult, aggregate, run_single, violation_percentage
from .igw import ActionDistribution, igw_kl, igw_square, sample

__all__ = [
    "ActionDistribution",
    "AlgoConfig",
    "AlwaysBaseline",
    "BanditError",
    "ContextSet",
    "FastCB",
    "GammaScheduleState",
    "LinUCB",
    "RoundLog",
    "RunConfig",
    "RunResult",
    "SafetyLedger",
    "SquareCB",
    "aggregate",
    "gamma_kl",
    "gamma_square",
    "igw_kl",
    "igw_square",
    "run_single",
    "safety_check_kl",
    "safety_check_square",
    "sample",
    "schedule_update",
    "validate_context_set",
    "violation_percentage",
]
