"""Shared value types: per-round contexts, round records and algorithm settings."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

NORM_TOL = 1e-9

REGRET_BUDGET_KINDS = ("constant", "c_log_T")
SCHEDULE_MODES = ("oracle_optimal", "observed_cost")


class BanditError(ValueError):
    """Raised for invalid inputs anywhere in the package."""


def check_cost(value: float, name: str = "cost") -> float:
    """Reject (never clamp) a cost outside [0, 1]."""
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise BanditError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class ContextSet:
    """The K per-arm feature vectors shown at one round, stored as a read-only K x d array."""

    vectors: np.ndarray

    @property
    def n_arms(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.n_arms

    def __getitem__(self, arm: int) -> np.ndarray:
        return self.vectors[arm]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContextSet):
            return NotImplemented
        return self.vectors.shape == other.vectors.shape and bool(np.array_equal(self.vectors, other.vectors))

    __hash__ = None  # type: ignore[assignment]


def validate_context_set(vectors, auto_normalize: bool = False) -> ContextSet:
    """Check shape and the unit-norm bound, returning an immutable ContextSet.

    With ``auto_normalize`` every vector is divided by ``max(1, largest norm)``;
    otherwise a vector longer than ``1 + 1e-9`` is an error.
    """
    if isinstance(vectors, ContextSet):
        vectors = vectors.vectors
    if isinstance(vectors, np.ndarray):
        if vectors.ndim != 2:
            raise BanditError(f"context array must be 2-D, got shape {vectors.shape}")
        arr = np.array(vectors, dtype=float)
    else:
        rows = [np.asarray(v, dtype=float).ravel() for v in vectors]
        if not rows:
            raise BanditError("context set is empty")
        dims = {r.shape[0] for r in rows}
        if len(dims) != 1:
            raise BanditError(f"context vectors have mismatched dimensions {sorted(dims)}")
        arr = np.vstack(rows)
    if arr.shape[0] == 0:
        raise BanditError("context set is empty")
    if arr.shape[1] < 1:
        raise BanditError("context dimension must be at least 1")
    if not np.all(np.isfinite(arr)):
        raise BanditError("context vectors contain non-finite entries")
    norms = np.linalg.norm(arr, axis=1)
    biggest = float(norms.max())
    if auto_normalize:
        if biggest > 1.0:
            arr = arr / biggest
    elif biggest > 1.0 + NORM_TOL:
        raise BanditError(f"context norm {biggest:.6g} exceeds 1 (enable auto_normalize to rescale)")
    arr.setflags(write=False)
    return ContextSet(arr)


@dataclass(frozen=True)
class AlgoConfig:
    alpha: float = 0.1
    delta: float = 0.1
    horizon: int = 1000
    regret_budget_kind: str = "c_log_T"
    regret_coef: float = 1.0
    margin_scale: float = 16.0
    schedule_mode: str = "observed_cost"
    # Extra log term inside the slack; None picks ln(4/delta) for the squared-loss
    # gate and 0 for the KL gate.
    slack_log_term: float | None = None
    # Count the candidate round in the slack (m_{t-1} + 1 instead of m_{t-1}).
    slack_includes_candidate: bool = True

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise BanditError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.delta < 1:
            raise BanditError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise BanditError(f"horizon must be a positive integer, got {self.horizon}")
        if not self.margin_scale >= 0:
            raise BanditError(f"margin_scale must be >= 0, got {self.margin_scale}")
        if self.regret_budget_kind not in REGRET_BUDGET_KINDS:
            raise BanditError(f"unknown regret_budget_kind {self.regret_budget_kind!r}")
        if not self.regret_coef > 0:
            raise BanditError(f"regret_coef must be > 0, got {self.regret_coef}")
        if self.schedule_mode not in SCHEDULE_MODES:
            raise BanditError(f"unknown schedule_mode {self.schedule_mode!r}")
        if self.slack_log_term is not None and not self.slack_log_term >= 0:
            raise BanditError("slack_log_term must be >= 0")


@dataclass(frozen=True)
class RoundLog:
    """Everything observed and decided at one round.

    ``distribution`` is empty on rounds where the baseline arm was played.
    ``candidate_arm`` is the sampled (or UCB-selected) arm the safety gate
    was asked about; it equals ``chosen_arm`` on non-baseline rounds.
    """

    round: int
    chosen_arm: int
    is_baseline: bool
    predictions: tuple[float, ...]
    distribution: tuple[float, ...]
    observed_cost: float
    expected_cost_chosen: float
    expected_cost_optimal: float
    baseline_expected_cost: float
    candidate_arm: int = -1

    def __post_init__(self) -> None:
        if self.round < 1:
            raise BanditError(f"round index must be positive, got {self.round}")
        for name in ("observed_cost", "expected_cost_chosen", "expected_cost_optimal", "baseline_expected_cost"):
            check_cost(getattr(self, name), name)
        for p in self.predictions:
            check_cost(p, "prediction")
        if self.is_baseline and self.distribution:
            raise BanditError("baseline rounds carry no action distribution")
        if self.distribution and len(self.distribution) != len(self.predictions):
            raise BanditError("distribution and predictions differ in length")

    @property
    def n_arms(self) -> int:
        return len(self.predictions)


def csv_header(n_arms: int) -> list[str]:
    return (
        ["round", "arm", "is_baseline"]
        + [f"pred_{a}" for a in range(n_arms)]
        + [f"p_{a}" for a in range(n_arms)]
        + ["observed_cost", "expected_cost_chosen", "expected_cost_optimal", "baseline_expected_cost", "candidate_arm"]
    )


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips the float exactly.
    return repr(float(x))


def log_to_row(log: RoundLog) -> list[str]:
    k = log.n_arms
    probs = [_fmt(p) for p in log.distribution] if log.distribution else [""] * k
    return (
        [str(log.round), str(log.chosen_arm), "1" if log.is_baseline else "0"]
        + [_fmt(p) for p in log.predictions]
        + probs
        + [
            _fmt(log.observed_cost),
            _fmt(log.expected_cost_chosen),
            _fmt(log.expected_cost_optimal),
            _fmt(log.baseline_expected_cost),
            str(log.candidate_arm),
        ]
    )


def row_to_log(row: Sequence[str], n_arms: int) -> RoundLog:
    k = n_arms
    expected = 3 + 2 * k + 5
    if len(row) != expected:
        raise BanditError(f"expected {expected} fields, got {len(row)}")
    preds = tuple(float(v) for v in row[3 : 3 + k])
    raw_probs = row[3 + k : 3 + 2 * k]
    if all(v == "" for v in raw_probs):
        probs: tuple[float, ...] = ()
    else:
        probs = tuple(float(v) for v in raw_probs)
    tail = row[3 + 2 * k :]
    return RoundLog(
        round=int(row[0]),
        chosen_arm=int(row[1]),
        is_baseline=row[2] == "1",
        predictions=preds,
        distribution=probs,
        observed_cost=float(tail[0]),
        expected_cost_chosen=float(tail[1]),
        expected_cost_optimal=float(tail[2]),
        baseline_expected_cost=float(tail[3]),
        candidate_arm=int(tail[4]),
    )


def write_logs(logs: Iterable[RoundLog], stream: TextIO, n_arms: int | None = None) -> None:
    """Write a header plus one CSV row per log (LF line endings)."""
    logs = list(logs)
    if n_arms is None:
        if not logs:
            raise BanditError("n_arms is required to write an empty log")
        n_arms = logs[0].n_arms
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(csv_header(n_arms))
    for log in logs:
        writer.writerow(log_to_row(log))


def read_logs(stream: TextIO) -> list[RoundLog]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise BanditError("round-log CSV is empty (header row is mandatory)") from None
    n_pred = sum(1 for h in header if h.startswith("pred_"))
    if header != csv_header(n_pred):
        raise BanditError("round-log CSV header is malformed")
    logs = []
    for lineno, row in enumerate(reader, start=2):
        try:
            logs.append(row_to_log(row, n_pred))
        except (ValueError, IndexError) as exc:
            raise BanditError(f"line {lineno}: {exc}") from exc
    return logs


def logs_roundtrip(logs: Sequence[RoundLog]) -> list[RoundLog]:
    buf = io.StringIO()
    write_logs(logs, buf, n_arms=logs[0].n_arms if logs else 1)
    buf.seek(0)
    return read_logs(buf)


def iter_rounds(logs: Sequence[RoundLog]) -> Iterator[tuple[int, RoundLog]]:
    for i, log in enumerate(logs):
        if log.round != i + 1:
            raise BanditError(f"round logs out of order at position {i}: round {log.round}")
        yield i, log
