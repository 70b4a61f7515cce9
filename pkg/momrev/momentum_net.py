# momrev/momentum_net.py
"""Residual blocks and full-network composition.

A Momentum ResNet layer iterates

    v <- gamma * v + (1 - gamma) * f(x, theta)
    x <- x + v

In exact mode x and v are fixed-point mantissas (object arrays of Python
ints). The multiplication by gamma goes through `reversible_mul` and the
residual output is quantized to the fixed-point grid before it is added, so
every addition is exact and the step can be undone bit for bit. In float
mode the same update runs on float64 arrays without buffers.

Activations may be a single vector of shape (d,) or a batch (B, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import BufferCorruptionError, DivergenceError, InvertibilityError, ShapeError, ValidationError
from .logger import get_logger
from .revarith import (
    DEFAULT_FRAC_BITS,
    DEFAULT_GAMMA,
    Ratio,
    decode_array,
    encode_array,
    reversible_mul,
    reversible_mul_inverse,
    zeros_buffer,
)

__all__ = [
    "V0_MODES",
    "BlockParams",
    "ListaParams",
    "MomentumState",
    "Network",
    "Residual",
    "RevNetwork",
    "encode_state",
    "forward",
    "forward_recorded",
    "initial_velocity",
    "lista_residual",
    "momentum_inverse_step",
    "momentum_step",
    "resnet_step",
    "residual_mlp",
    "revnet_forward",
    "revnet_forward_recorded",
    "revnet_inverse",
    "revnet_inverse_step",
    "revnet_step",
    "soft_threshold",
]

log = get_logger(__name__)

V0_MODES = ("zero", "residual_of_input")
ParamGrad = Dict[str, np.ndarray]


def soft_threshold(u, t: float) -> np.ndarray:
    """sign(u) * max(|u| - t, 0), the proximal operator of t * ||.||_1."""
    if t < 0:
        raise ValidationError(f"threshold must be non-negative, got {t}")
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


class Residual(Protocol):
    """What a block needs to be used as f(x, theta) inside a network."""

    gamma: Ratio
    dim: int

    def __call__(self, x: np.ndarray, context: Optional[np.ndarray] = None) -> np.ndarray: ...

    def vjp(
        self, x: np.ndarray, g: np.ndarray, context: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, ParamGrad]: ...

    def parameters(self) -> ParamGrad: ...

    def with_parameters(self, params: ParamGrad) -> "Residual": ...


def _as_float(x, dim: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim not in (1, 2) or a.shape[-1] != dim:
        raise ShapeError(f"{name} has shape {a.shape}, expected (..., {dim})")
    return a


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_k outer(a_k, b_k) for batches, plain outer product for vectors."""
    if a.ndim == 1:
        return np.outer(a, b)
    return a.T @ b


@dataclass(frozen=True)
class BlockParams:
    """f(x) = W2^T tanh(W1 x + b) with W1, W2 of shape (p, d)."""

    W1: np.ndarray
    W2: np.ndarray
    b: np.ndarray
    gamma: Ratio = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        W1 = np.asarray(self.W1, dtype=np.float64)
        W2 = np.asarray(self.W2, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W1.ndim != 2 or W1.shape != W2.shape or b.shape != (W1.shape[0],):
            raise ShapeError(f"inconsistent block shapes W1={W1.shape} W2={W2.shape} b={b.shape}")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def zeros(cls, d: int, p: int, gamma: Ratio = DEFAULT_GAMMA) -> "BlockParams":
        return cls(np.zeros((p, d)), np.zeros((p, d)), np.zeros(p), gamma)

    @classmethod
    def random(cls, d: int, p: int, rng: np.random.Generator, scale: float = 1.0,
               gamma: Ratio = DEFAULT_GAMMA) -> "BlockParams":
        return cls(
            scale * rng.standard_normal((p, d)) / np.sqrt(d),
            scale * rng.standard_normal((p, d)) / np.sqrt(p),
            scale * 0.1 * rng.standard_normal(p),
            gamma,
        )

    def __call__(self, x, context=None) -> np.ndarray:
        return residual_mlp(x, self)

    def vjp(self, x, g, context=None) -> Tuple[np.ndarray, ParamGrad]:
        x = _as_float(x, self.dim, "x")
        h = np.tanh(x @ self.W1.T + self.b)
        dh = g @ self.W2.T
        dz = dh * (1.0 - h * h)
        grads = {
            "W1": _outer_sum(dz, x),
            "W2": _outer_sum(h, g),
            "b": dz if dz.ndim == 1 else dz.sum(axis=0),
        }
        return dz @ self.W1, grads

    def parameters(self) -> ParamGrad:
        return {"W1": self.W1, "W2": self.W2, "b": self.b}

    def with_parameters(self, params: ParamGrad) -> "BlockParams":
        return replace(self, **{k: params[k] for k in ("W1", "W2", "b") if k in params})


def residual_mlp(x, params: BlockParams) -> np.ndarray:
    x = _as_float(x, params.dim, "x")
    return np.tanh(x @ params.W1.T + params.b) @ params.W2


@dataclass(frozen=True)
class ListaParams:
    """LISTA layer: f(x, y) = scale * (st(W1 x + W2 y, threshold) - x), W1 (p, p), W2 (p, d).

    ``scale`` undoes the ``1 - gamma`` damping of the momentum update, so an
    ISTA-initialized momentum layer takes a full ISTA step plus ``gamma`` times
    the previous displacement (heavy ball on the LASSO objective).
    """

    W1: np.ndarray
    W2: np.ndarray
    threshold: float
    gamma: Ratio = DEFAULT_GAMMA
    scale: float = 1.0

    def __post_init__(self) -> None:
        W1 = np.asarray(self.W1, dtype=np.float64)
        W2 = np.asarray(self.W2, dtype=np.float64)
        if W1.ndim != 2 or W1.shape[0] != W1.shape[1] or W2.ndim != 2 or W2.shape[0] != W1.shape[0]:
            raise ShapeError(f"inconsistent LISTA shapes W1={W1.shape} W2={W2.shape}")
        if self.threshold < 0:
            raise ValidationError("LISTA threshold must be non-negative")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValidationError(f"LISTA scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def ista(cls, D: np.ndarray, eta: float, lasso_lambda: float,
             gamma: Ratio = DEFAULT_GAMMA) -> "ListaParams":
        """Parameters for which one layer reproduces one ISTA step, plus momentum when gamma > 0."""
        D = np.asarray(D, dtype=np.float64)
        p = D.shape[1]
        scale = 1.0 / gamma.complement if gamma.complement > 0 else 1.0
        return cls(np.eye(p) - eta * D.T @ D, eta * D.T, eta * lasso_lambda, gamma, scale)

    def _pre(self, x, context) -> np.ndarray:
        if context is None:
            raise ValidationError("LISTA residual needs the observation y as context")
        y = _as_float(context, self.W2.shape[1], "y")
        return x @ self.W1.T + y @ self.W2.T

    def __call__(self, x, context=None) -> np.ndarray:
        return lista_residual(x, context, self)

    def vjp(self, x, g, context=None) -> Tuple[np.ndarray, ParamGrad]:
        x = _as_float(x, self.dim, "x")
        u = self._pre(x, context)
        g = self.scale * np.asarray(g, dtype=np.float64)
        # subgradient 0 on the kink |u| = t
        du = g * (np.abs(u) > self.threshold)
        y = np.asarray(context, dtype=np.float64)
        grads = {"W1": _outer_sum(du, x), "W2": _outer_sum(du, y)}
        return du @ self.W1 - g, grads

    def parameters(self) -> ParamGrad:
        return {"W1": self.W1, "W2": self.W2}

    def with_parameters(self, params: ParamGrad) -> "ListaParams":
        return replace(self, **{k: params[k] for k in ("W1", "W2") if k in params})


def lista_residual(x, y, layer: ListaParams) -> np.ndarray:
    x = _as_float(x, layer.dim, "x")
    out = soft_threshold(layer._pre(x, y), layer.threshold) - x
    return out if layer.scale == 1.0 else layer.scale * out


def resnet_step(x, params: Residual, context=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + params(x, context)


@dataclass(frozen=True)
class MomentumState:
    """(x, v) at a layer boundary.

    Exact mode: x, v are object arrays of mantissas, buffers one Python int
    per coordinate of v, frac_bits set. Float mode: float arrays, no buffers.
    """

    x: np.ndarray
    v: np.ndarray
    buffers: Optional[np.ndarray] = None
    frac_bits: Optional[int] = DEFAULT_FRAC_BITS

    def __post_init__(self) -> None:
        if np.shape(self.x) != np.shape(self.v):
            raise ShapeError(f"x {np.shape(self.x)} and v {np.shape(self.v)} differ")
        if self.exact and np.shape(self.buffers) != np.shape(self.v):
            raise ShapeError("one information buffer per coordinate of v is required")

    @property
    def exact(self) -> bool:
        return self.frac_bits is not None

    def decoded(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.exact:
            return self.x, self.v
        return decode_array(self.x, self.frac_bits), decode_array(self.v, self.frac_bits)

    def decoded_x(self) -> np.ndarray:
        return self.x if not self.exact else decode_array(self.x, self.frac_bits)

    def same_as(self, other: "MomentumState") -> bool:
        """Exact equality of every integer (or float) in both states."""
        if self.exact != other.exact or np.shape(self.x) != np.shape(other.x):
            return False
        pairs = [(self.x, other.x), (self.v, other.v)]
        if self.exact:
            pairs.append((self.buffers, other.buffers))
        return all(bool(np.all(a == b)) for a, b in pairs)


def _check_buffers(buffers: np.ndarray) -> None:
    if buffers is not None and any(b < 0 for b in buffers.ravel()):
        raise BufferCorruptionError("negative information buffer")


def momentum_step(s: MomentumState, params: Residual, context=None) -> MomentumState:
    gamma = params.gamma
    if not s.exact:
        x, v = s.x, s.v
        fx = params(x, context)
        v = v + gamma.complement * (fx - v)
        return MomentumState(x + v, v, None, None)

    F = s.frac_bits
    fx = params(decode_array(s.x, F), context)
    if not np.all(np.isfinite(fx)):
        raise DivergenceError("residual output became non-finite")
    update = encode_array(gamma.complement * fx, F)
    if gamma.invertible:
        _check_buffers(s.buffers)
        buffers, v = reversible_mul(s.buffers, s.v, gamma)
        v = v + update
    else:
        # gamma = 0: plain ResNet update, buffers left untouched
        buffers, v = s.buffers, update
    return MomentumState(s.x + v, v, buffers, F)


def momentum_inverse_step(s: MomentumState, params: Residual, context=None) -> MomentumState:
    gamma = params.gamma
    if not gamma.invertible:
        raise InvertibilityError("gamma = 0 has no inverse step (division by gamma)")
    if not s.exact:
        x = s.x - s.v
        fx = params(x, context)
        v = (s.v - gamma.complement * fx) / gamma.value
        return MomentumState(x, v, None, None)

    F = s.frac_bits
    _check_buffers(s.buffers)
    x = s.x - s.v
    fx = params(decode_array(x, F), context)
    v = s.v - encode_array(gamma.complement * fx, F)
    buffers, v = reversible_mul_inverse(s.buffers, v, gamma)
    return MomentumState(x, v, buffers, F)


@dataclass(frozen=True)
class Network:
    """A stack of residual blocks sharing gamma.

    With `tied=True` one parameter set is reused at every layer and `blocks`
    holds `depth` references to it.
    """

    blocks: Tuple[Residual, ...]
    v0_mode: str = "zero"
    frac_bits: Optional[int] = DEFAULT_FRAC_BITS
    tied: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.v0_mode not in V0_MODES:
            raise ValidationError(f"unknown v0_mode {self.v0_mode!r}; expected one of {V0_MODES}")
        gammas = {b.gamma for b in self.blocks}
        if len(gammas) > 1:
            raise ValidationError(f"blocks disagree on gamma: {sorted(map(str, gammas))}")
        dims = {b.dim for b in self.blocks}
        if len(dims) > 1:
            raise ShapeError(f"blocks disagree on dimension: {sorted(dims)}")
        if self.tied and any(b is not self.blocks[0] for b in self.blocks):
            raise ValidationError("tied network must reuse a single parameter set")
        if self.v0_mode == "residual_of_input" and not self.blocks:
            raise ValidationError("v0_mode 'residual_of_input' needs at least one block")

    @classmethod
    def tied_weights(cls, block: Residual, depth: int, **kwargs) -> "Network":
        return cls((block,) * depth, tied=True, **kwargs)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def gamma(self) -> Optional[Ratio]:
        return self.blocks[0].gamma if self.blocks else None

    @property
    def dim(self) -> Optional[int]:
        return self.blocks[0].dim if self.blocks else None

    @property
    def exact(self) -> bool:
        return self.frac_bits is not None

    def with_blocks(self, blocks: Sequence[Residual]) -> "Network":
        return replace(self, blocks=tuple(blocks))


def initial_velocity(net: Network, x0: np.ndarray, context=None) -> np.ndarray:
    if net.v0_mode == "zero":
        return np.zeros_like(x0)
    return net.blocks[0](x0, context)


def encode_state(net: Network, x0, context=None) -> MomentumState:
    x0 = np.asarray(x0, dtype=np.float64)
    if not net.exact:
        v0 = initial_velocity(net, x0, context)
        return MomentumState(x0.copy(), np.asarray(v0, dtype=np.float64), None, None)
    F = net.frac_bits
    xm = encode_array(x0, F)
    # v0 is computed from the quantized input so the state can be re-derived from x alone
    v0 = initial_velocity(net, decode_array(xm, F), context)
    return MomentumState(xm, encode_array(v0, F), zeros_buffer(x0.shape), F)


def forward(net: Network, x0, context=None) -> Tuple[np.ndarray, MomentumState]:
    """Run every block keeping only the running state and its buffers."""
    state = encode_state(net, x0, context)
    for block in net.blocks:
        state = momentum_step(state, block, context)
    x, _ = state.decoded()
    return x, state


def forward_recorded(net: Network, x0, context=None) -> Tuple[np.ndarray, List[MomentumState]]:
    """Reference forward storing every layer boundary state (trace[0] is the input)."""
    state = encode_state(net, x0, context)
    trace = [state]
    for block in net.blocks:
        state = momentum_step(state, block, context)
        trace.append(state)
    x, _ = state.decoded()
    return x, trace


# ---- RevNet -----------------------------------------------------------------

def revnet_step(x, v, phi: Callable, psi: Callable, context=None) -> Tuple[np.ndarray, np.ndarray]:
    """v1 = v + phi(x); x1 = x + psi(v1). Returns (v1, x1)."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ShapeError(f"x {x.shape} and v {v.shape} differ")
    v1 = v + phi(x, context)
    x1 = x + psi(v1, context)
    return v1, x1


def revnet_inverse_step(x1, v1, phi: Callable, psi: Callable, context=None) -> Tuple[np.ndarray, np.ndarray]:
    """Algebraic inverse of revnet_step. Returns (x, v)."""
    x = x1 - psi(v1, context)
    v = v1 - phi(x, context)
    return x, v


@dataclass(frozen=True)
class RevNetwork:
    """RevNet with a (phi, psi) pair per layer; v0 duplicates x0."""

    layers: Tuple[Tuple[Residual, Residual], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(tuple(pair) for pair in self.layers))

    @property
    def depth(self) -> int:
        return len(self.layers)


def revnet_forward(net: RevNetwork, x0, context=None) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    x = np.asarray(x0, dtype=np.float64)
    v = x.copy()
    for phi, psi in net.layers:
        v, x = revnet_step(x, v, phi, psi, context)
    return x, (x, v)


def revnet_inverse(net: RevNetwork, x, v, context=None) -> Tuple[np.ndarray, np.ndarray]:
    for phi, psi in reversed(net.layers):
        x, v = revnet_inverse_step(x, v, phi, psi, context)
    return x, v


def revnet_forward_recorded(
    net: RevNetwork, x0, context=None
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    """RevNet forward storing (x, v) at every layer boundary."""
    x = np.asarray(x0, dtype=np.float64)
    v = x.copy()
    trace = [(x, v)]
    for phi, psi in net.layers:
        v, x = revnet_step(x, v, phi, psi, context)
        trace.append((x, v))
    return x, trace
