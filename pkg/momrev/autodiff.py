# momrev/autodiff.py
"""Gradients for momentum networks.

Writing z = (x, v), one layer maps z_{k-1} to z_k with Jacobian

    [[I + (1-g) df/dx, g I],
     [(1-g) df/dx,     g I]]

and the parameter gradient is (1-g) * (df/dtheta)^T (grad_x + grad_v).
The memory-free backward walks the layers in reverse, rebuilding each
layer input with `momentum_inverse_step` instead of reading it from a
stored trace.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BufferCorruptionError, ShapeError, ValidationError
from .logger import get_logger
from .momentum_net import (
    MomentumState,
    Network,
    Residual,
    RevNetwork,
    encode_state,
    momentum_inverse_step,
    revnet_inverse_step,
)
from .revarith import Ratio

__all__ = [
    "ActivationCounter",
    "Cotangent",
    "ParamGrad",
    "backward_memory_free",
    "backward_stored",
    "block_backward",
    "finite_diff_loss_grad",
    "revnet_backward",
    "revnet_backward_stored",
    "revnet_block_backward",
    "sum_param_grads",
]

log = get_logger(__name__)

ParamGrad = Dict[str, np.ndarray]


@dataclass(frozen=True)
class Cotangent:
    grad_x: np.ndarray
    grad_v: np.ndarray

    def __post_init__(self) -> None:
        if np.shape(self.grad_x) != np.shape(self.grad_v):
            raise ShapeError("grad_x and grad_v must have the same shape")

    @classmethod
    def from_output(cls, grad_x: np.ndarray) -> "Cotangent":
        g = np.asarray(grad_x, dtype=np.float64)
        return cls(g, np.zeros_like(g))


class ActivationCounter:
    """Counts activation arrays held alive by a backward pass.

    Arrays enter through `track` and leave when they are garbage collected,
    so `peak` is the largest number the pass held at once. Arrays owned by the
    caller (the final state handed in) are not tracked.
    """

    def __init__(self) -> None:
        self._alive: Dict[int, weakref.finalize] = {}
        self.peak = 0

    @property
    def live(self) -> int:
        return len(self._alive)

    def track(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            if not isinstance(a, np.ndarray):
                continue
            key = id(a)
            if key not in self._alive:
                self._alive[key] = weakref.finalize(a, self._alive.pop, key, None)
        self.peak = max(self.peak, self.live)



def _split_gamma(gamma: Union[float, Ratio]) -> Tuple[float, float]:
    if isinstance(gamma, Ratio):
        return gamma.value, gamma.complement
    g = float(gamma)
    return g, 1.0 - g


def block_backward(
    cot: Cotangent,
    x_prev: np.ndarray,
    params: Residual,
    gamma: Union[float, Ratio],
    context=None,
) -> Tuple[Cotangent, ParamGrad]:
    g, c = _split_gamma(gamma)
    total = cot.grad_x + cot.grad_v
    dx_f, grads = params.vjp(x_prev, total, context)
    new = Cotangent(cot.grad_x + c * dx_f, g * total)
    return new, {name: c * value for name, value in grads.items()}


def sum_param_grads(grads: Sequence[ParamGrad]) -> ParamGrad:
    """Add per-layer gradients of a tied-weight network into one set."""
    out: ParamGrad = {}
    for layer in grads:
        for name, value in layer.items():
            out[name] = out[name] + value if name in out else value.copy()
    return out


def _add_v0_grad(
    net: Network, x0: np.ndarray, cot: Cotangent, grads: List[ParamGrad], context
) -> Cotangent:
    """Fold the gradient through v0 = f(x0, theta_0) when that mode is active."""
    if net.v0_mode != "residual_of_input":
        return cot
    dx, g0 = net.blocks[0].vjp(x0, cot.grad_v, context)
    grads[0] = {name: grads[0][name] + g0[name] for name in grads[0]}
    return Cotangent(cot.grad_x + dx, cot.grad_v)


def backward_memory_free(
    net: Network,
    final_state: MomentumState,
    cot_out: Cotangent,
    context=None,
    counter: Optional[ActivationCounter] = None,
) -> Tuple[List[ParamGrad], Cotangent]:
    """Backward pass that reconstructs layer inputs on the fly.

    Returns per-block gradients and the cotangent at the input: grad_x is the
    total derivative with respect to x0, grad_v the one with respect to v0.
    """
    counter = counter or ActivationCounter()
    state, cot = final_state, cot_out
    grads: List[Optional[ParamGrad]] = [None] * net.depth
    for k in reversed(range(net.depth)):
        block = net.blocks[k]
        prev = momentum_inverse_step(state, block, context)
        counter.track(prev.x, prev.v)
        state = prev
        x_prev = state.decoded_x()
        counter.track(x_prev)
        cot, grads[k] = block_backward(cot, x_prev, block, block.gamma, context)
        del x_prev
        log.debug("memory-free backward: layer %d done", k)

    x0 = state.decoded_x()
    counter.track(x0)
    if state.exact and net.depth:
        _verify_input_state(net, state, context)
    cot = _add_v0_grad(net, x0, cot, grads, context)
    return grads, cot



def _verify_input_state(net: Network, state: MomentumState, context) -> None:
    if any(b != 0 for b in state.buffers.ravel()):
        raise BufferCorruptionError("information buffers did not return to zero at the input")
    expected = encode_state(net, state.decoded()[0], context)
    if not expected.same_as(state):
        raise BufferCorruptionError("reconstructed input state does not match its re-encoding")


def backward_stored(
    net: Network,
    recorded_trace: Sequence[MomentumState],
    cot_out: Cotangent,
    context=None,
    counter: Optional[ActivationCounter] = None,
) -> Tuple[List[ParamGrad], Cotangent]:
    """Reference backward reading layer inputs from a recorded trace."""
    if len(recorded_trace) != net.depth + 1:
        raise ValidationError(
            f"trace holds {len(recorded_trace)} states, network depth {net.depth} needs {net.depth + 1}"
        )
    if counter is not None:
        for s in recorded_trace:
            counter.track(s.x, s.v)
    cot = cot_out
    grads: List[Optional[ParamGrad]] = [None] * net.depth
    for k in reversed(range(net.depth)):
        block = net.blocks[k]
        x_prev = recorded_trace[k].decoded_x()
        if counter is not None:
            counter.track(x_prev)
        cot, grads[k] = block_backward(cot, x_prev, block, block.gamma, context)
        del x_prev
    x0 = recorded_trace[0].decoded_x()
    cot = _add_v0_grad(net, x0, cot, grads, context)
    return grads, cot



def finite_diff_loss_grad(
    loss: Callable[[ParamGrad], float], params: ParamGrad, h: float = 1e-5
) -> ParamGrad:
    """Central differences of `loss` with respect to every parameter entry."""
    if h <= 0:
        raise ValidationError(f"step must be positive, got {h}")
    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    out: ParamGrad = {}
    for name, value in base.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            saved = value[idx]
            value[idx] = saved + h
            up = loss(base)
            value[idx] = saved - h
            down = loss(base)
            value[idx] = saved
            grad[idx] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


# ---- RevNet -----------------------------------------------------------------

def revnet_block_backward(
    grad_x1: np.ndarray,
    grad_v1: np.ndarray,
    x: np.ndarray,
    v1: np.ndarray,
    phi: Residual,
    psi: Residual,
    context=None,
) -> Tuple[np.ndarray, np.ndarray, ParamGrad, ParamGrad]:
    """Backward of v1 = v + phi(x), x1 = x + psi(v1). Returns (grad_x, grad_v, dphi, dpsi)."""
    dv1, dpsi = psi.vjp(v1, grad_x1, context)
    gv = grad_v1 + dv1
    dx, dphi = phi.vjp(x, gv, context)
    return grad_x1 + dx, gv, dphi, dpsi


def revnet_backward(
    net: RevNetwork,
    final: Tuple[np.ndarray, np.ndarray],
    grad_out: np.ndarray,
    context=None,
    counter: Optional[ActivationCounter] = None,
) -> Tuple[List[Tuple[ParamGrad, ParamGrad]], np.ndarray]:
    """Backward through a RevNet, rebuilding inputs by float subtraction.

    Returns per-layer (dphi, dpsi) and the gradient with respect to x0
    (v0 is a copy of x0, so both stream gradients fold into it).
    """
    counter = counter or ActivationCounter()
    x, v = final
    gx = np.asarray(grad_out, dtype=np.float64)
    gv = np.zeros_like(gx)
    grads: List[Optional[Tuple[ParamGrad, ParamGrad]]] = [None] * net.depth
    for k in reversed(range(net.depth)):
        phi, psi = net.layers[k]
        x_prev, v_prev = revnet_inverse_step(x, v, phi, psi, context)
        counter.track(x_prev, v_prev)
        gx, gv, dphi, dpsi = revnet_block_backward(gx, gv, x_prev, v, phi, psi, context)
        grads[k] = (dphi, dpsi)
        x, v = x_prev, v_prev
    return grads, gx + gv



def revnet_backward_stored(
    net: RevNetwork,
    recorded_trace: Sequence[Tuple[np.ndarray, np.ndarray]],
    grad_out: np.ndarray,
    context=None,
) -> Tuple[List[Tuple[ParamGrad, ParamGrad]], np.ndarray]:
    if len(recorded_trace) != net.depth + 1:
        raise ValidationError(
            f"trace holds {len(recorded_trace)} states, network depth {net.depth} needs {net.depth + 1}"
        )
    gx = np.asarray(grad_out, dtype=np.float64)
    gv = np.zeros_like(gx)
    grads: List[Optional[Tuple[ParamGrad, ParamGrad]]] = [None] * net.depth
    for k in reversed(range(net.depth)):
        phi, psi = net.layers[k]
        x_prev, _ = recorded_trace[k]
        _, v1 = recorded_trace[k + 1]
        gx, gv, dphi, dpsi = revnet_block_backward(gx, gv, x_prev, v1, phi, psi, context)
        grads[k] = (dphi, dpsi)
    return grads, gx + gv
