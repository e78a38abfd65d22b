"""Bandit environments with known expected costs.

Every environment is a pure function of its construction arguments and the
round index: contexts for round ``t`` are regenerated from ``(seed, block)``
where ``block`` groups consecutive rounds, so any round can be revisited.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BanditError, ContextSet

SYNTHETIC_KINDS = ("linear", "nonlinear_quadratic", "nonlinear_cosine")
NOISE_KINDS = ("bernoulli", "none")
BASELINE_KINDS = ("fixed_arm", "fixed_suboptimal_policy")
NORMALIZE_MODES = ("unit_ball", "minmax", "none")

CORRECT_COST = 0.01
WRONG_COST = 1.0

_BLOCK = 512


@dataclass(frozen=True, eq=False)
class Round:
    """One round as the environment presents it (expected costs are for metrics only)."""

    t: int
    contexts: ContextSet
    expected_costs: np.ndarray
    baseline_arm: int
    env: "Environment"

    @property
    def baseline_cost(self) -> float:
        return float(self.expected_costs[self.baseline_arm])

    @property
    def optimal_cost(self) -> float:
        return float(self.expected_costs.min())

    def observe(self, arm: int, uniform_draw: float) -> float:
        return self.env.sample_cost(self.t, arm, uniform_draw, self.expected_costs[arm])


class Environment:
    n_arms: int
    dim: int
    y_l: float = 0.0

    def round(self, t: int) -> Round:
        raise NotImplementedError

    def contexts(self, t: int) -> ContextSet:
        return self.round(t).contexts

    def baseline_arm(self, t: int) -> int:
        return self.round(t).baseline_arm

    def baseline_expected_cost(self, t: int) -> float:
        return self.round(t).baseline_cost

    def expected_cost(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def sample_cost(self, t: int, arm: int, uniform_draw: float, expected: float | None = None) -> float:
        raise NotImplementedError

    def describe(self) -> dict:
        return {}


def _unit_sphere(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


class SyntheticEnv(Environment):
    """Contexts i.i.d. uniform on the unit sphere with a realizable cost function of ``<theta*, x>``."""

    def __init__(
        self,
        kind: str = "linear",
        d: int = 10,
        K: int = 5,
        noise: str = "bernoulli",
        baseline: str = "fixed_arm",
        seed: int = 0,
        baseline_arm: int = 0,
        baseline_rank: int | None = None,
    ):
        if kind not in SYNTHETIC_KINDS:
            raise BanditError(f"unknown synthetic kind {kind!r}")
        if noise not in NOISE_KINDS:
            raise BanditError(f"unknown noise {noise!r}")
        if baseline not in BASELINE_KINDS:
            raise BanditError(f"unknown baseline {baseline!r}")
        if d < 1 or K < 2:
            raise BanditError(f"need d >= 1 and K >= 2, got d={d}, K={K}")
        if not 0 <= baseline_arm < K:
            raise BanditError(f"baseline arm {baseline_arm} out of range for K={K}")
        rank = K // 2 if baseline_rank is None else baseline_rank
        if not 0 <= rank < K:
            raise BanditError(f"baseline rank {rank} out of range for K={K}")
        self.kind, self.noise, self.baseline = kind, noise, baseline
        self.dim, self.n_arms, self.seed = int(d), int(K), int(seed)
        self.fixed_arm = int(baseline_arm)
        self.rank = int(rank)
        self.theta_star = _unit_sphere(np.random.default_rng([self.seed, 0]), d)
        self._cache: tuple[int, np.ndarray, np.ndarray] | None = None

    def h(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=float) @ self.theta_star
        if self.kind == "linear":
            out = np.clip(0.5 + 0.5 * u, 0.0, 1.0)
        elif self.kind == "nonlinear_quadratic":
            out = u * u
        else:
            out = 0.5 * (1.0 + np.cos(3.0 * u))
        return np.clip(out, 0.0, 1.0)

    def expected_cost(self, x) -> float:
        return float(self.h(x))

    def _block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None or self._cache[0] != b:
            rng = np.random.default_rng([self.seed, 1, b])
            xs = _unit_sphere(rng, (_BLOCK, self.n_arms, self.dim))
            self._cache = (b, xs, self.h(xs))
        return self._cache[1], self._cache[2]

    def round(self, t: int) -> Round:
        if t < 1:
            raise BanditError("rounds are numbered from 1")
        b, i = divmod(t - 1, _BLOCK)
        xs, hs = self._block(b)
        x = xs[i].copy()
        x.setflags(write=False)
        costs = hs[i].copy()
        costs.setflags(write=False)
        if self.baseline == "fixed_arm":
            arm = self.fixed_arm
        else:
            arm = int(np.argsort(costs, kind="stable")[self.rank])
        return Round(t, ContextSet(x), costs, arm, self)

    def sample_cost(self, t: int, arm: int, uniform_draw: float, expected: float | None = None) -> float:
        h = float(self.round(t).expected_costs[arm]) if expected is None else float(expected)
        if self.noise == "none":
            return h
        return 1.0 if uniform_draw < h else 0.0

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.dim,
            "K": self.n_arms,
            "noise": self.noise,
            "baseline": self.baseline,
            "baseline_arm": self.fixed_arm,
            "baseline_rank": self.rank,
            "seed": self.seed,
        }


def make_synthetic_env(kind, d, K, noise="bernoulli", baseline="fixed_arm", seed=0, **kwargs) -> SyntheticEnv:
    return SyntheticEnv(kind=kind, d=d, K=K, noise=noise, baseline=baseline, seed=seed, **kwargs)


@dataclass(frozen=True, eq=False)
class MulticlassDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_scale: float = 1.0
    label_names: tuple[str, ...] = ()
    normalize: str = "unit_ball"

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise BanditError("dataset needs at least one row of features")
        if self.labels.shape != (self.features.shape[0],):
            raise BanditError("one label per row is required")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise BanditError("labels must lie in [0, n_classes)")
        if not np.all(np.isfinite(self.features)):
            raise BanditError("dataset features must be finite")
        if float(np.linalg.norm(self.features, axis=1).max()) > 1.0 + 1e-9:
            raise BanditError("dataset rows must lie in the unit ball; choose a normalisation")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def block_contexts(x: np.ndarray, n_classes: int) -> np.ndarray:
    """Place ``x`` in block ``k`` of a ``d * K`` vector for each arm ``k``."""
    d = x.shape[0]
    out = np.zeros((n_classes, d * n_classes))
    for k in range(n_classes):
        out[k, k * d : (k + 1) * d] = x
    return out


class MulticlassEnv(Environment):
    """Multiclass classification as a bandit: cost 0.01 for the true class, 1 otherwise.

    Rows are visited in a shuffled order; a new permutation is drawn each
    time the horizon runs past the end of the dataset.
    """

    y_l = CORRECT_COST

    def __init__(self, dataset: MulticlassDataset, baseline_arm: int = 0, shuffle_seed: int = 0):
        if not 0 <= baseline_arm < dataset.n_classes:
            raise BanditError(f"baseline arm {baseline_arm} out of range for K={dataset.n_classes}")
        self.dataset = dataset
        self.n_arms = dataset.n_classes
        self.dim = dataset.dim * dataset.n_classes
        self.fixed_arm = int(baseline_arm)
        self.shuffle_seed = int(shuffle_seed)
        self._perms: dict[int, np.ndarray] = {}

    def row_index(self, t: int) -> int:
        epoch, i = divmod(t - 1, self.dataset.n_rows)
        perm = self._perms.get(epoch)
        if perm is None:
            perm = np.random.default_rng([self.shuffle_seed, epoch]).permutation(self.dataset.n_rows)
            self._perms = {epoch: perm}
        return int(perm[i])

    def round(self, t: int) -> Round:
        if t < 1:
            raise BanditError("rounds are numbered from 1")
        r = self.row_index(t)
        x = block_contexts(self.dataset.features[r], self.n_arms)
        x.setflags(write=False)
        costs = np.full(self.n_arms, WRONG_COST)
        costs[self.dataset.labels[r]] = CORRECT_COST
        costs.setflags(write=False)
        return Round(t, ContextSet(x), costs, self.fixed_arm, self)

    def expected_cost(self, x) -> float:
        x = np.asarray(x, dtype=float)
        d, K = self.dataset.dim, self.n_arms
        blocks = x.reshape(K, d)
        active = [k for k in range(K) if np.any(blocks[k])]
        if len(active) != 1:
            raise BanditError("context is not a single-block vector")
        k = active[0]
        hits = np.flatnonzero(np.all(self.dataset.features == blocks[k], axis=1))
        if hits.size == 0:
            raise BanditError("context does not match any dataset row")
        return CORRECT_COST if self.dataset.labels[hits[0]] == k else WRONG_COST

    def sample_cost(self, t: int, arm: int, uniform_draw: float, expected: float | None = None) -> float:
        if expected is not None:
            return float(expected)
        return float(self.round(t).expected_costs[arm])

    def describe(self) -> dict:
        ds = self.dataset
        return {
            "kind": "multiclass",
            "rows": ds.n_rows,
            "features": ds.dim,
            "K": self.n_arms,
            "baseline_arm": self.fixed_arm,
            "shuffle_seed": self.shuffle_seed,
            "normalize": ds.normalize,
            "feature_scale": ds.feature_scale,
        }


def make_multiclass_env(dataset: MulticlassDataset, baseline_arm: int = 0, shuffle_seed: int = 0) -> MulticlassEnv:
    return MulticlassEnv(dataset, baseline_arm, shuffle_seed)


def _resolve_label_column(header: list[str] | None, n_cols: int, label_column) -> int:
    if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.lstrip("-").isdigit()):
        idx = int(label_column)
        if idx < 0:
            idx += n_cols
        if not 0 <= idx < n_cols:
            raise BanditError(f"label column index {label_column} out of range")
        return idx
    if header is None:
        raise BanditError(f"label column {label_column!r} given by name but the file has no header")
    if label_column not in header:
        raise BanditError(f"unknown label column {label_column!r}")
    return header.index(label_column)


def load_dataset(
    path,
    label_column=-1,
    delimiter: str = ",",
    has_header: bool = True,
    normalize: str = "unit_ball",
) -> MulticlassDataset:
    """Read a delimited text file of numeric features and one label column.

    Labels are mapped to ``0..K-1`` in order of first appearance. ``unit_ball``
    divides every row by the largest row norm; ``minmax`` first rescales each
    feature to [0, 1] and then does the same.
    """
    if normalize not in NORMALIZE_MODES:
        raise BanditError(f"unknown normalisation {normalize!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh, delimiter=delimiter)) if r and any(c.strip() for c in r)]
    if has_header:
        if not rows:
            raise BanditError(f"{path}: empty file")
        header: list[str] | None = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    else:
        header = None
    if not rows:
        raise BanditError(f"{path}: no data rows")
    n_cols = len(header) if header is not None else len(rows[0][1])
    label_idx = _resolve_label_column(header, n_cols, label_column)

    feats, raw_labels = [], []
    for lineno, row in rows:
        if len(row) != n_cols:
            raise BanditError(f"{path}:{lineno}: expected {n_cols} fields, got {len(row)}")
        values = []
        for j, cell in enumerate(row):
            if j == label_idx:
                continue
            cell = cell.strip()
            if cell == "":
                raise BanditError(f"{path}:{lineno}: missing value in column {j}")
            try:
                values.append(float(cell))
            except ValueError:
                raise BanditError(f"{path}:{lineno}: non-numeric feature {cell!r} in column {j}") from None
        feats.append(values)
        raw_labels.append(row[label_idx].strip())

    x = np.array(feats, dtype=float)
    if not np.all(np.isfinite(x)):
        raise BanditError(f"{path}: non-finite feature values")
    names: list[str] = []
    index: dict[str, int] = {}
    for lab in raw_labels:
        if lab not in index:
            index[lab] = len(names)
            names.append(lab)
    labels = np.array([index[lab] for lab in raw_labels], dtype=int)

    if normalize == "minmax":
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = (x - lo) / span
    scale = 1.0
    if normalize != "none":
        biggest = float(np.linalg.norm(x, axis=1).max())
        if biggest > 0:
            scale = biggest
            x = x / scale
    return MulticlassDataset(x, labels, len(names), scale, tuple(names), normalize)


def audit_baseline_gap(env: Environment, horizon: int) -> dict:
    """Empirical ``y_l`` and ``Delta_l`` (baseline cost and baseline gap minima) over a horizon."""
    y_l, gap_l, gap_h, y_h = math.inf, math.inf, -math.inf, -math.inf
    for t in range(1, horizon + 1):
        rnd = env.round(t)
        b = rnd.baseline_cost
        gap = b - rnd.optimal_cost
        y_l, y_h = min(y_l, b), max(y_h, b)
        gap_l, gap_h = min(gap_l, gap), max(gap_h, gap)
    return {"y_l": y_l, "y_h": y_h, "delta_l": gap_l, "delta_h": gap_h}
