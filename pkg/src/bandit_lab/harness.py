"""Grid runner, metrics and aggregation for bandit experiments.

A run directory holds one CSV of round logs per grid cell plus
``manifest.json``, which records every resolved configuration value and the
file written for each (algorithm, alpha, step size, seed) cell.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import neural
from .algorithms import AlwaysBaseline, FastCB, LinUCB, LinUCBParams, SquareCB
from .core import AlgoConfig, BanditError, RoundLog, read_logs, write_logs
from .environments import Environment, make_multiclass_env, make_synthetic_env, load_dataset
from .oracles import BufferedOracle, NeuralOracle, Oracle, RidgeOracle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = (
    "c_squarecb",
    "c_fastcb",
    "vanilla_squarecb",
    "vanilla_fastcb",
    "c_linucb",
    "linucb",
    "always_baseline",
)
ORACLE_KINDS = ("ridge", "neural")
MANIFEST = "manifest.json"


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "linear"
    d: int = 10
    K: int = 5
    noise: str = "bernoulli"
    baseline: str = "fixed_arm"
    baseline_arm: int = 0
    baseline_rank: int = -1  # -1 means K // 2
    dataset: str = ""
    label_column: int = -1
    normalize: str = "unit_ball"

    def build(self, seed: int) -> Environment:
        if self.kind == "multiclass":
            if not self.dataset:
                raise BanditError("multiclass environment needs env.dataset")
            ds = load_dataset(self.dataset, label_column=self.label_column, normalize=self.normalize)
            return make_multiclass_env(ds, baseline_arm=self.baseline_arm, shuffle_seed=seed)
        rank = None if self.baseline_rank < 0 else self.baseline_rank
        return make_synthetic_env(
            self.kind, self.d, self.K, self.noise, self.baseline, seed, baseline_arm=self.baseline_arm, baseline_rank=rank
        )


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "ridge"
    lambda_reg: float = 1.0
    bias_feature: bool = False
    depth: int = 2
    width: int = 64
    sigma1: float = 1.0
    c_p: float = 0.1
    ensemble_size: int = 8
    rho: float = 16.0
    rho1: float = 16.0
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise BanditError(f"unknown oracle kind {self.kind!r}")

    def build(self, dim: int, kl: bool, step_size: float, seed: int, algo: AlgoConfig) -> Oracle:
        budget = dict(budget_kind=algo.regret_budget_kind, budget_coef=algo.regret_coef)
        if self.kind == "ridge":
            return RidgeOracle(dim, self.lambda_reg, self.bias_feature, kl=kl, **budget)
        net = neural.NetworkConfig(
            input_dim=dim + (1 if self.bias_feature else 0),
            depth=self.depth,
            width=self.width,
            sigma1=self.sigma1,
            c_p=self.c_p,
            ensemble_size=self.ensemble_size,
            rho=self.rho,
            rho1=self.rho1,
            activation=self.activation,
            loss_kind="kl" if kl else "square",
        )
        return NeuralOracle(net, step_size, seed=seed, bias_feature=self.bias_feature, **budget)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "c_squarecb"
    env: EnvSpec = field(default_factory=EnvSpec)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    seeds: tuple[int, ...] = (0,)
    horizon: int = 1000
    update_every: int = 1
    passes: int = 1
    step_size_grid: tuple[float, ...] = (1.0,)
    linucb: LinUCBParams = field(default_factory=LinUCBParams)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise BanditError(f"unknown algorithm {self.algorithm!r}")
        if not self.seeds:
            raise BanditError("seeds must be nonempty")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise BanditError(f"horizon must be a positive integer, got {self.horizon}")
        if int(self.update_every) != self.update_every or self.update_every < 1:
            raise BanditError("update_every must be a positive integer")
        if not self.step_size_grid or any(not s > 0 for s in self.step_size_grid):
            raise BanditError("step_size_grid must be a nonempty list of positive reals")
        if self.algo.horizon != self.horizon:
            # The run horizon is authoritative; keep the algorithm settings in step with it.
            object.__setattr__(self, "algo", replace(self.algo, horizon=int(self.horizon)))

    @property
    def step_size(self) -> float:
        return self.step_size_grid[0]


@dataclass(eq=False)
class RunResult:
    algorithm: str
    seed: int
    alpha: float
    step_size: float
    logs: list[RoundLog]
    ledger_trace: np.ndarray
    elapsed: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.logs)

    @property
    def regret(self) -> np.ndarray:
        return cumulative_regret(self.logs)

    @property
    def constraint_ok(self) -> np.ndarray:
        return constraint_flags(self.logs, self.alpha)

    @property
    def n_series(self) -> np.ndarray:
        return baseline_counts(self.logs)

    @property
    def final_regret(self) -> float:
        r = self.regret
        return float(r[-1]) if r.size else 0.0

    @property
    def n_T(self) -> int:
        n = self.n_series
        return int(n[-1]) if n.size else 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunResult):
            return NotImplemented
        return (
            (self.algorithm, self.seed, self.alpha, self.step_size) == (other.algorithm, other.seed, other.alpha, other.step_size)
            and self.logs == other.logs
            and np.array_equal(self.ledger_trace, other.ledger_trace)
        )


def cumulative_regret(logs) -> np.ndarray:
    per_round = np.array([lg.expected_cost_chosen - lg.expected_cost_optimal for lg in logs], dtype=float)
    return np.cumsum(per_round)


def constraint_flags(logs, alpha: float) -> np.ndarray:
    """Cumulative expected cost against ``(1 + alpha)`` times the baseline's, after every round."""
    chosen = np.cumsum([lg.expected_cost_chosen for lg in logs], dtype=float)
    base = np.cumsum([lg.baseline_expected_cost for lg in logs], dtype=float)
    return chosen <= (1.0 + alpha) * base


def baseline_counts(logs) -> np.ndarray:
    return np.cumsum([lg.is_baseline for lg in logs], dtype=int)


def build_algorithm(config: RunConfig, env: Environment, step_size: float, seed: int):
    algo_cfg = config.algo
    name, K = config.algorithm, env.n_arms
    if name == "always_baseline":
        return AlwaysBaseline(K, algo_cfg)
    if name in ("c_linucb", "linucb"):
        return LinUCB(K, env.dim, algo_cfg, config.linucb, gated=name == "c_linucb")
    kl = name.endswith("fastcb")
    oracle: Oracle = config.oracle.build(env.dim, kl, step_size, seed, algo_cfg)
    if config.update_every > 1 or config.passes > 1:
        oracle = BufferedOracle(oracle, config.update_every, config.passes)
    cls = FastCB if kl else SquareCB
    return cls(oracle, K, algo_cfg, gated=name.startswith("c_"))


def run_single(config: RunConfig, seed: int, step_size: float | None = None, horizon: int | None = None) -> RunResult:
    """Run one cell; ``horizon`` may override the config (``0`` gives an empty run)."""
    step = config.step_size if step_size is None else float(step_size)
    T = config.horizon if horizon is None else int(horizon)
    if T < 0:
        raise BanditError("horizon must be >= 0")
    start = time.perf_counter()
    env = config.env.build(seed)
    alg = build_algorithm(config, env, step, seed)
    n = max(T, 0)
    action_draws = np.random.default_rng([seed, 101]).random(n)
    cost_draws = np.random.default_rng([seed, 102]).random(n)
    logs: list[RoundLog] = []
    trace = np.empty((n, 3))
    ledger = alg.ledger
    for t in range(1, n + 1):
        try:
            logs.append(alg.step(env.round(t), float(action_draws[t - 1]), float(cost_draws[t - 1])))
        except (BanditError, FloatingPointError, AssertionError, np.linalg.LinAlgError) as exc:
            raise RunError(f"{config.algorithm} seed {seed}: round {t}: {exc}") from exc
        trace[t - 1] = (ledger.term_a, ledger.term_b, ledger.rhs_cum)
    return RunResult(config.algorithm, seed, config.algo.alpha, step, logs, trace, time.perf_counter() - start)


def violation_percentage(results) -> float:
    results = list(results)
    if not results:
        raise BanditError("violation_percentage needs at least one run")
    total = sum(r.horizon for r in results)
    if total == 0:
        return 0.0
    bad = sum(int(np.count_nonzero(~r.constraint_ok)) for r in results)
    return 100.0 * bad / total


@dataclass(frozen=True, eq=False)
class Aggregate:
    mean_regret: np.ndarray
    stderr_regret: np.ndarray
    mean_n: np.ndarray
    stderr_n: np.ndarray

    @property
    def horizon(self) -> int:
        return self.mean_regret.shape[0]


def _mean_stderr(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = rows.shape[0]
    mean = rows.mean(axis=0)
    if k == 1:
        return mean, np.zeros_like(mean)
    return mean, rows.std(axis=0, ddof=1) / math.sqrt(k)


def aggregate_series(regrets, ns) -> Aggregate:
    regrets, ns = list(regrets), list(ns)
    if not regrets:
        raise BanditError("aggregate needs at least one run")
    lengths = {len(r) for r in regrets} | {len(n) for n in ns}
    if len(lengths) != 1:
        raise BanditError(f"runs have mismatched horizons {sorted(lengths)}")
    mr, sr = _mean_stderr(np.vstack(regrets).astype(float))
    mn, sn = _mean_stderr(np.vstack(ns).astype(float))
    return Aggregate(mr, sr, mn, sn)


def aggregate(results) -> Aggregate:
    results = list(results)
    return aggregate_series([r.regret for r in results], [r.n_series for r in results])


def write_aggregate(agg: Aggregate, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("round,mean_regret,stderr_regret,mean_n,stderr_n\n")
        for t in range(agg.horizon):
            vals = (agg.mean_regret[t], agg.stderr_regret[t], agg.mean_n[t], agg.stderr_n[t])
            fh.write(f"{t + 1}," + ",".join(repr(float(v)) for v in vals) + "\n")


# ---------------------------------------------------------------- config files

DEFAULTS: dict[str, object] = {
    "algorithms": ["c_squarecb"],
    "alphas": [0.1],
    "seeds": [0],
    "horizon": 1000,
    "update_every": 1,
    "passes": 1,
    "step_size_grid": [1.0],
    "env.kind": "linear",
    "env.d": 10,
    "env.K": 5,
    "env.noise": "bernoulli",
    "env.baseline": "fixed_arm",
    "env.baseline_arm": 0,
    "env.baseline_rank": -1,
    "env.dataset": "",
    "env.label_column": -1,
    "env.normalize": "unit_ball",
    "algo.delta": 0.1,
    "algo.regret_budget_kind": "c_log_T",
    "algo.regret_coef": 1.0,
    "algo.margin_scale": 16.0,
    "algo.schedule_mode": "observed_cost",
    "algo.slack_log_term": -1.0,  # negative means the gate's own default
    "algo.slack_includes_candidate": True,
    "oracle.kind": "ridge",
    "oracle.bias_feature": False,
    "oracle.ridge.lambda": 1.0,
    "oracle.neural.depth": 2,
    "oracle.neural.width": 64,
    "oracle.neural.sigma1": 1.0,
    "oracle.neural.c_p": 0.1,
    "oracle.neural.ensemble_size": 8,
    "oracle.neural.rho": 16.0,
    "oracle.neural.rho1": 16.0,
    "oracle.neural.activation": "tanh",
    "linucb.lambda": 1.0,
    "linucb.s_bound": 1.0,
    "linucb.bias_feature": False,
}


def _flatten(table: dict, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def resolve_config(values: dict) -> dict[str, object]:
    """Merge flat or nested settings over the defaults, checking names and types."""
    flat = _flatten(values)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise BanditError(f"unknown config keys: {', '.join(unknown)}")
    resolved = dict(DEFAULTS)
    for key, value in flat.items():
        default = DEFAULTS[key]
        if isinstance(default, list):
            if not isinstance(value, list):
                value = [value]
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise BanditError(f"{key} must be true or false, got {value!r}")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise BanditError(f"{key} must be a number, got {value!r}")
            if isinstance(default, int) and value != int(value):
                raise BanditError(f"{key} must be an integer, got {value!r}")
            value = float(value) if isinstance(default, float) else int(value)
        elif not isinstance(value, str):
            raise BanditError(f"{key} must be a string, got {value!r}")
        resolved[key] = value
    return resolved


def load_config(path) -> dict[str, object]:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise BanditError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise BanditError(f"cannot parse config {path}: {exc}") from None
    resolved = resolve_config(raw)
    ds = resolved["env.dataset"]
    if ds and not Path(str(ds)).is_absolute():
        resolved["env.dataset"] = str((Path(path).parent / str(ds)).resolve())
    return resolved


def run_configs(resolved: dict[str, object]) -> list[RunConfig]:
    """One RunConfig per (algorithm, alpha) pair of the grid."""
    r = resolved
    env = EnvSpec(
        kind=r["env.kind"], d=r["env.d"], K=r["env.K"], noise=r["env.noise"], baseline=r["env.baseline"],
        baseline_arm=r["env.baseline_arm"], baseline_rank=r["env.baseline_rank"], dataset=r["env.dataset"],
        label_column=r["env.label_column"], normalize=r["env.normalize"],
    )
    oracle = OracleSpec(
        kind=r["oracle.kind"], lambda_reg=r["oracle.ridge.lambda"], bias_feature=r["oracle.bias_feature"],
        depth=r["oracle.neural.depth"], width=r["oracle.neural.width"], sigma1=r["oracle.neural.sigma1"],
        c_p=r["oracle.neural.c_p"], ensemble_size=r["oracle.neural.ensemble_size"], rho=r["oracle.neural.rho"],
        rho1=r["oracle.neural.rho1"], activation=r["oracle.neural.activation"],
    )
    lin = LinUCBParams(r["linucb.lambda"], r["linucb.s_bound"], r["linucb.bias_feature"])
    log_term = r["algo.slack_log_term"]
    out = []
    for name, alpha in itertools.product(r["algorithms"], r["alphas"]):
        algo = AlgoConfig(
            alpha=float(alpha), delta=r["algo.delta"], horizon=r["horizon"],
            regret_budget_kind=r["algo.regret_budget_kind"], regret_coef=r["algo.regret_coef"],
            margin_scale=r["algo.margin_scale"], schedule_mode=r["algo.schedule_mode"],
            slack_log_term=None if log_term < 0 else log_term,
            slack_includes_candidate=r["algo.slack_includes_candidate"],
        )
        out.append(
            RunConfig(
                algorithm=name, env=env, algo=algo, oracle=oracle, seeds=tuple(int(s) for s in r["seeds"]),
                horizon=int(r["horizon"]), update_every=int(r["update_every"]), passes=int(r["passes"]),
                step_size_grid=tuple(float(s) for s in r["step_size_grid"]), linucb=lin,
            )
        )
    return out


@dataclass(frozen=True)
class Cell:
    config: RunConfig
    seed: int
    step_size: float
    tagged_step: bool

    @property
    def tag(self) -> str:
        parts = [self.config.algorithm, f"alpha={self.config.algo.alpha:g}"]
        if self.tagged_step:
            parts.append(f"step={self.step_size:g}")
        return "__".join(parts)

    @property
    def filename(self) -> str:
        return f"{self.tag}__seed={self.seed}.csv"


def uses_step_size(config: RunConfig) -> bool:
    return config.oracle.kind == "neural" and config.algorithm not in ("c_linucb", "linucb", "always_baseline")


def expand_grid(configs) -> list[Cell]:
    cells = []
    for cfg in configs:
        steps = cfg.step_size_grid if uses_step_size(cfg) else (cfg.step_size,)
        for step, seed in itertools.product(steps, cfg.seeds):
            cells.append(Cell(cfg, seed, step, uses_step_size(cfg)))
    names = [c.filename for c in cells]
    if len(set(names)) != len(names):
        raise BanditError("grid produces duplicate cells; check for repeated algorithms, alphas or seeds")
    return cells


def _run_cell(cell: Cell, out_dir: str) -> dict:
    res = run_single(cell.config, cell.seed, cell.step_size)
    with open(Path(out_dir) / cell.filename, "w", encoding="utf-8", newline="") as fh:
        write_logs(res.logs, fh)
    return {
        "file": cell.filename,
        "tag": cell.tag,
        "algorithm": cell.config.algorithm,
        "alpha": cell.config.algo.alpha,
        "step_size": cell.step_size if cell.tagged_step else None,
        "seed": cell.seed,
        "horizon": res.horizon,
        "final_regret": res.final_regret,
        "violations": int(np.count_nonzero(~res.constraint_ok)),
        "n_T": res.n_T,
        "seconds": round(res.elapsed, 3),
    }


def worker_count(n_cells: int) -> int:
    cap = os.environ.get("BANDIT_LAB_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = int(cap)
        except ValueError:
            raise BanditError(f"BANDIT_LAB_THREADS must be an integer, got {cap!r}") from None
        if limit < 1:
            raise BanditError("BANDIT_LAB_THREADS must be >= 1")
    return max(1, min(limit, n_cells))


def run_grid(resolved: dict[str, object], out_dir) -> dict:
    """Execute every cell, write its CSV, then the manifest once all cells are done."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = expand_grid(run_configs(resolved))
    workers = worker_count(len(cells))
    if workers == 1:
        entries = [_run_cell(c, str(out)) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_run_cell, cells, itertools.repeat(str(out))))
    manifest = {"config": resolved, "runs": entries}
    with open(out / MANIFEST, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------- run directories


def read_run_dir(in_dir) -> tuple[dict, dict[str, list[tuple[dict, list[RoundLog]]]]]:
    """Load the manifest and the logs of every run, grouped by tag."""
    path = Path(in_dir)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise BanditError(f"{path}: no {MANIFEST}; not a run directory")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        entries = manifest["runs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise BanditError(f"{mpath}: malformed manifest ({exc})") from None
    if not entries:
        raise BanditError(f"{mpath}: manifest lists no runs")
    groups: dict[str, list[tuple[dict, list[RoundLog]]]] = {}
    for entry in entries:
        f = path / entry["file"]
        if not f.is_file():
            raise BanditError(f"{path}: manifest lists missing file {entry['file']}")
        with f.open(encoding="utf-8", newline="") as fh:
            try:
                logs = read_logs(fh)
            except BanditError as exc:
                raise BanditError(f"{f}: {exc}") from None
        groups.setdefault(entry["tag"], []).append((entry, logs))
    return manifest, groups


def aggregate_dir(in_dir, out_file) -> list[Path]:
    """Write mean/stderr curves; one file, or ``<stem>__<tag>.csv`` per group when there are several."""
    _, groups = read_run_dir(in_dir)
    out = Path(out_file)
    written = []
    for tag, runs in groups.items():
        logs = [lg for _, lg in runs]
        agg = aggregate_series([cumulative_regret(lg) for lg in logs], [baseline_counts(lg) for lg in logs])
        target = out if len(groups) == 1 else out.with_name(f"{out.stem}__{tag}{out.suffix or '.csv'}")
        write_aggregate(agg, target)
        written.append(target)
    return written


@dataclass(frozen=True)
class Summary:
    tag: str
    algorithm: str
    alpha: float
    step_size: float | None
    runs: int
    final_regret: float
    violation_pct: float
    mean_n_T: float


def summarize_dir(in_dir) -> list[Summary]:
    _, groups = read_run_dir(in_dir)
    rows = []
    for tag, runs in groups.items():
        entry = runs[0][0]
        alpha = float(entry["alpha"])
        finals, bad, total, ns = [], 0, 0, []
        for _, logs in runs:
            reg = cumulative_regret(logs)
            finals.append(float(reg[-1]) if reg.size else 0.0)
            ok = constraint_flags(logs, alpha)
            bad += int(np.count_nonzero(~ok))
            total += ok.size
            n = baseline_counts(logs)
            ns.append(int(n[-1]) if n.size else 0)
        pct = 100.0 * bad / total if total else 0.0
        rows.append(Summary(tag, entry["algorithm"], alpha, entry.get("step_size"), len(runs), float(np.mean(finals)), pct, float(np.mean(ns))))
    return rows


def format_table(rows: list[Summary]) -> str:
    """Plain-text table; ``*`` marks the best step size per (algorithm, alpha), every one of them on a tie."""
    best: dict[tuple[str, float], float] = {}
    for r in rows:
        if r.step_size is not None:
            key = (r.algorithm, r.alpha)
            best[key] = min(best.get(key, math.inf), r.final_regret)
    header = f"{'algorithm':<18} {'alpha':>8} {'step':>8} {'runs':>5} {'final_regret':>13} {'violation_%':>12} {'mean_n_T':>10}"
    lines = [header, "-" * len(header)]
    for r in sorted(rows, key=lambda r: (r.algorithm, r.alpha, r.step_size or 0.0)):
        step = "-" if r.step_size is None else f"{r.step_size:g}"
        mark = " *" if r.step_size is not None and r.final_regret == best[(r.algorithm, r.alpha)] else ""
        lines.append(
            f"{r.algorithm:<18} {r.alpha:>8g} {step:>8} {r.runs:>5d} {r.final_regret:>13.3f} "
            f"{r.violation_pct:>12.4f} {r.mean_n_T:>10.1f}{mark}"
        )
    return "\n".join(lines)

