"""Feed-forward network with a perturbed ensemble head, trained by projected OGD.

Every layer is scaled by ``m ** -0.5``::

    f(theta; x) = m^-1/2 v^T phi(m^-1/2 W_L phi(... phi(m^-1/2 W_1 x)))

Parameters live in one flat vector ``theta`` (layer matrices raveled in
row-major order, then ``v``) so that the Rademacher perturbation
``c_p <theta - theta0, eps> / m^(1/4)`` is a plain dot product.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

from .core import BanditError

ACTIVATIONS = ("tanh", "relu")
LOSS_KINDS = ("square", "kl")

# Relative slack before a layer counts as outside its ball; keeps projection exactly idempotent.
_BALL_RTOL = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    depth: int = 2
    width: int = 64
    sigma1: float = 1.0
    c_p: float = 0.1
    ensemble_size: int = 8
    rho: float = 1.0
    rho1: float = 1.0
    activation: str = "tanh"
    loss_kind: str = "square"

    def __post_init__(self) -> None:
        for name in ("input_dim", "depth", "width", "ensemble_size"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise BanditError(f"{name} must be a positive integer, got {value!r}")
        if not self.sigma1 > 0:
            raise BanditError("sigma1 must be > 0")
        if not self.c_p >= 0:
            raise BanditError("c_p must be >= 0")
        if not (self.rho > 0 and self.rho1 > 0):
            raise BanditError("projection radii must be > 0")
        if self.activation not in ACTIVATIONS:
            raise BanditError(f"unknown activation {self.activation!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise BanditError(f"unknown loss_kind {self.loss_kind!r}")

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        m = self.width
        return ((m, self.input_dim),) + ((m, m),) * (self.depth - 1)

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes) + self.width

    @property
    def sigma0(self) -> float:
        m = self.width
        return self.sigma1 / (2.0 * (1.0 + math.sqrt(math.log(m)) / math.sqrt(2.0 * m)))


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Flat parameter vector plus the layer layout needed to slice it."""

    theta: np.ndarray
    layer_shapes: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        expected = sum(r * c for r, c in self.layer_shapes) + self.layer_shapes[-1][0]
        if self.theta.shape != (expected,):
            raise BanditError(f"parameter vector has shape {self.theta.shape}, expected ({expected},)")

    @property
    def width(self) -> int:
        return self.layer_shapes[-1][0]

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def segments(self) -> list[slice]:
        """Slices of ``theta`` for each hidden layer followed by the output vector."""
        out, start = [], 0
        for r, c in self.layer_shapes:
            out.append(slice(start, start + r * c))
            start += r * c
        out.append(slice(start, start + self.width))
        return out

    @property
    def layers(self) -> list[np.ndarray]:
        segs = self.segments()
        return [self.theta[s].reshape(shape) for s, shape in zip(segs, self.layer_shapes)]

    @property
    def v(self) -> np.ndarray:
        return self.theta[-self.width :]

    def replace(self, theta: np.ndarray) -> NetworkParams:
        return NetworkParams(np.asarray(theta, dtype=float), self.layer_shapes)

    @classmethod
    def from_arrays(cls, layers, v) -> NetworkParams:
        shapes = tuple(tuple(np.shape(w)) for w in layers)
        theta = np.concatenate([np.asarray(w, dtype=float).ravel() for w in layers] + [np.asarray(v, dtype=float)])
        return cls(theta, shapes)  # type: ignore[arg-type]


@dataclass(frozen=True)
class PerturbationSeeds:
    """One integer per ensemble member; each expands to a fixed Rademacher vector."""

    seeds: tuple[int, ...]

    def expand(self, n_params: int) -> np.ndarray:
        """The S x p matrix of +-1 entries, regenerated from the seeds on every call."""
        out = np.empty((len(self.seeds), n_params))
        for i, s in enumerate(self.seeds):
            bits = np.random.default_rng(s).integers(0, 2, size=n_params)
            out[i] = 2.0 * bits - 1.0
        return out


def init_params(config: NetworkConfig, seed: int) -> tuple[NetworkParams, PerturbationSeeds]:
    """Gaussian hidden weights with std ``sigma0`` and a uniformly random unit output vector."""
    rng = np.random.default_rng(seed)
    s0 = config.sigma0
    layers = [rng.normal(0.0, s0, size=shape) for shape in config.layer_shapes]
    v = rng.normal(size=config.width)
    v /= np.linalg.norm(v)
    member_seeds = tuple(int(s) for s in rng.integers(0, 2**63 - 1, size=config.ensemble_size))
    return NetworkParams.from_arrays(layers, v), PerturbationSeeds(member_seeds)


def _phi(z: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(z) if activation == "tanh" else np.maximum(z, 0.0)


def _dphi(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - a * a
    # ReLU subgradient with phi'(0) = 0.
    return (z > 0.0).astype(float)


def _as_batch(params: NetworkParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    d = params.layer_shapes[0][1]
    if xb.ndim != 2 or xb.shape[1] != d:
        raise BanditError(f"input has dimension {xb.shape[-1]}, network expects {d}")
    return xb, single


def forward(params: NetworkParams, x, activation: str = "tanh"):
    """Network output for one input (scalar) or a batch of rows (vector); unclamped."""
    xb, single = _as_batch(params, x)
    scale = 1.0 / math.sqrt(params.width)
    a = xb.T
    for w in params.layers:
        a = _phi(scale * (w @ a), activation)
    out = scale * (params.v @ a)
    return float(out[0]) if single else out


def _displacement_offsets(params: NetworkParams, anchor: NetworkParams, eps: np.ndarray, c_p: float) -> np.ndarray:
    return c_p * (eps @ (params.theta - anchor.theta)) / params.width**0.25


def perturbed_forward(params: NetworkParams, anchor: NetworkParams, x, eps, c_p: float, activation: str = "tanh"):
    """``forward(theta, x) + c_p <theta - theta0, eps> / m^(1/4)``."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (params.n_params,):
        raise BanditError(f"perturbation vector has length {eps.shape}, expected {params.n_params}")
    offset = float(_displacement_offsets(params, anchor, eps[None, :], c_p)[0])
    return forward(params, x, activation) + offset


def ensemble_forward(
    params: NetworkParams,
    anchor: NetworkParams,
    x,
    seeds: PerturbationSeeds,
    loss_kind: str = "square",
    c_p: float = 0.1,
    activation: str = "tanh",
):
    """Average of the S perturbed members; for ``kl`` the average of their sigmoids.

    The perturbation does not depend on ``x``, so the base network is evaluated
    once and each member adds its own scalar offset.
    """
    base = forward(params, x, activation)
    offsets = _displacement_offsets(params, anchor, seeds.expand(params.n_params), c_p)
    members = np.add.outer(np.atleast_1d(base), offsets)
    if loss_kind == "square":
        out = members.mean(axis=1)
    elif loss_kind == "kl":
        out = expit(members).mean(axis=1)
    else:
        raise BanditError(f"unknown loss_kind {loss_kind!r}")
    return float(out[0]) if np.ndim(base) == 0 else out


def _backprop(params: NetworkParams, x: np.ndarray, activation: str) -> tuple[float, np.ndarray]:
    """Output and flat gradient d f / d theta for a single input."""
    scale = 1.0 / math.sqrt(params.width)
    acts = [x]
    pres = []
    a = x
    layers = params.layers
    for w in layers:
        z = scale * (w @ a)
        a = _phi(z, activation)
        pres.append(z)
        acts.append(a)
    v = params.v
    f = scale * float(v @ a)
    grads = [None] * len(layers)
    delta = scale * v * _dphi(pres[-1], acts[-1], activation)
    for l in range(len(layers) - 1, -1, -1):
        grads[l] = scale * np.outer(delta, acts[l]).ravel()
        if l > 0:
            delta = scale * (layers[l].T @ delta) * _dphi(pres[l - 1], acts[l], activation)
    grads.append(scale * acts[-1])
    return f, np.concatenate(grads)


def kl_loss(y_hat, y):
    """``y log(1/y_hat) + (1 - y) log(1/(1 - y_hat))``."""
    y_hat = np.asarray(y_hat, dtype=float)
    with np.errstate(divide="ignore"):
        return -(y * np.log(y_hat) + (1.0 - y) * np.log1p(-y_hat))


def loss_and_gradient(
    params: NetworkParams,
    anchor: NetworkParams,
    x,
    y: float,
    seeds: PerturbationSeeds,
    loss_kind: str = "square",
    c_p: float = 0.1,
    activation: str = "tanh",
) -> tuple[float, NetworkParams]:
    """Ensemble-averaged loss at one example and its exact gradient in theta.

    Member ``s`` outputs ``g_s = f(theta; x) + c_p <theta - theta0, eps_s> / m^(1/4)``
    (passed through a sigmoid for ``kl``), so its gradient is the network
    gradient plus ``c_p eps_s / m^(1/4)`` times the member's residual.
    """
    if not (0.0 <= y <= 1.0):
        raise BanditError(f"target cost must lie in [0, 1], got {y!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.layer_shapes[0][1]:
        raise BanditError("input dimension does not match the network")
    f, grad_f = _backprop(params, x, activation)
    eps = seeds.expand(params.n_params)
    scale_p = c_p / params.width**0.25
    g = f + scale_p * (eps @ (params.theta - anchor.theta))
    if loss_kind == "square":
        resid = g - y
        loss = float(np.mean(resid**2))
        dg = 2.0 * resid
    elif loss_kind == "kl":
        # ell_KL(sigmoid(g), y) = -y log sigmoid(g) - (1 - y) log sigmoid(-g)
        loss = float(np.mean(-(y * log_expit(g) + (1.0 - y) * log_expit(-g))))
        dg = expit(g) - y
    else:
        raise BanditError(f"unknown loss_kind {loss_kind!r}")
    grad = dg.mean() * grad_f + scale_p * (dg @ eps) / len(seeds.seeds)
    return loss, params.replace(grad)


def project_frobenius(params: NetworkParams, anchor: NetworkParams, rho: float, rho1: float) -> NetworkParams:
    """Radially pull each layer's displacement from the anchor back into its ball."""
    theta = params.theta.copy()
    segs = params.segments()
    radii = [rho] * (len(segs) - 1) + [rho1]
    for seg, r in zip(segs, radii):
        delta = theta[seg] - anchor.theta[seg]
        norm = float(np.linalg.norm(delta))
        if norm > r * (1.0 + _BALL_RTOL):
            theta[seg] = anchor.theta[seg] + delta * (r / norm)
    return params.replace(theta)


def ogd_step(
    params: NetworkParams,
    gradient: NetworkParams,
    step_size: float,
    anchor: NetworkParams,
    rho: float,
    rho1: float,
) -> NetworkParams:
    if not step_size > 0:
        raise BanditError(f"step size must be > 0, got {step_size!r}")
    if not np.all(np.isfinite(gradient.theta)):
        raise FloatingPointError("non-finite gradient entries; training diverged")
    return project_frobenius(params.replace(params.theta - step_size * gradient.theta), anchor, rho, rho1)


def displacement_norms(params: NetworkParams, anchor: NetworkParams) -> list[float]:
    return [float(np.linalg.norm(params.theta[s] - anchor.theta[s])) for s in params.segments()]


def save_checkpoint(path, config: NetworkConfig, params: NetworkParams) -> None:
    """Text dump: a ``#``-prefixed JSON header with the config, then one value per line."""
    lines = ["# " + json.dumps(asdict(config), sort_keys=True)]
    lines.extend(repr(float(v)) for v in params.theta)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[NetworkConfig, NetworkParams]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# "):
        raise BanditError(f"{path}: missing checkpoint header")
    config = NetworkConfig(**json.loads(text[0][2:]))
    theta = np.array([float(v) for v in text[1:] if v])
    return config, NetworkParams(theta, config.layer_shapes)
