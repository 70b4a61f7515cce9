# momrev/models.py
"""Trainable wrappers around momentum, ResNet and RevNet networks.

A model exposes a flat dict of named parameters, rebuilds itself from such
a dict, and returns (loss, gradients) for a minibatch. Block parameters are
named ``block{k}.W1`` (``block.W1`` when weights are tied), RevNet layers
``layer{k}.phi.W1`` / ``layer{k}.psi.W1`` and the readout ``head.w``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import (
    Cotangent,
    backward_memory_free,
    backward_stored,
    revnet_backward,
    revnet_backward_stored,
    sum_param_grads,
)
from .datasets import ListaProblem
from .errors import InvertibilityError, ValidationError
from .logger import get_logger
from .momentum_net import (
    BlockParams,
    ListaParams,
    Network,
    RevNetwork,
    forward,
    forward_recorded,
    revnet_forward,
    revnet_forward_recorded,
)
from .revarith import Ratio

__all__ = [
    "BACKWARD_MODES",
    "LinearHead",
    "MomentumModel",
    "RevNetModel",
    "lista_network",
    "mlp_network",
    "revnet_lista",
]

log = get_logger(__name__)

Params = Dict[str, np.ndarray]

BACKWARD_MODES = ("memory_free", "stored")
INPUT_MODES = ("state", "context")
RESNET_GAMMA = Ratio(0, 1)


@dataclass(frozen=True)
class LinearHead:
    """Logit readout z = x . w + c."""

    w: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.float64).reshape(()))

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "LinearHead":
        return cls(rng.standard_normal(d) / np.sqrt(d), 0.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w + self.c

    def vjp(self, x: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, Params]:
        g = np.asarray(g, dtype=np.float64).reshape(np.shape(x)[:-1])
        dx = g[..., None] * self.w
        return dx, {"w": g @ x if x.ndim > 1 else g * x, "c": np.asarray(np.sum(g))}

    def parameters(self) -> Params:
        return {"w": self.w, "c": self.c}

    def with_parameters(self, params: Params) -> "LinearHead":
        return LinearHead(params.get("w", self.w), params.get("c", self.c))


def _head_params(head: Optional[LinearHead]) -> Params:
    return {} if head is None else {f"head.{k}": v for k, v in head.parameters().items()}


def _rebuild_head(head: Optional[LinearHead], params: Params) -> Optional[LinearHead]:
    if head is None:
        return None
    return head.with_parameters({k: params[f"head.{k}"] for k in ("w", "c") if f"head.{k}" in params})


def _prefixed(prefix: str, params: Params) -> Params:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def _unprefixed(prefix: str, params: Params) -> Params:
    start = prefix + "."
    return {k[len(start):]: v for k, v in params.items() if k.startswith(start)}


@dataclass(frozen=True)
class MomentumModel:
    """Momentum ResNet (any gamma, gamma = 0 being a plain ResNet) with an optional readout.

    input_mode "state": the input is x0. "context": x0 = 0 and the input is
    passed to every block as context (LISTA).
    """

    network: Network
    head: Optional[LinearHead] = None
    input_mode: str = "state"
    backward: str = "memory_free"
    dim: Optional[int] = None

    def __post_init__(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"unknown input_mode {self.input_mode!r}")
        if self.backward not in BACKWARD_MODES:
            raise ValidationError(f"unknown backward mode {self.backward!r}")
        if self.network.depth and self.backward == "memory_free" and not self.network.gamma.invertible:
            raise InvertibilityError("memory-free backward needs gamma > 0; use backward='stored'")
        if self.state_dim is None:
            raise ValidationError("a depth-0 network needs an explicit dim")

    @property
    def state_dim(self) -> Optional[int]:
        return self.network.dim if self.network.depth else self.dim

    def _inputs(self, X) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        X = np.asarray(X, dtype=np.float64)
        if self.input_mode == "state":
            return X, None
        return np.zeros(X.shape[:-1] + (self.state_dim,)), X

    def transform(self, X) -> np.ndarray:
        x0, context = self._inputs(X)
        x, _ = forward(self.network, x0, context)
        return x

    def layer_states(self, X) -> List[np.ndarray]:
        """Decoded x at every layer boundary, input first."""
        x0, context = self._inputs(X)
        _, trace = forward_recorded(self.network, x0, context)
        return [s.decoded()[0] for s in trace]

    def predict(self, X) -> np.ndarray:
        x = self.transform(X)
        return self.head(x) if self.head is not None else x

    def evaluate(self, X, targets, loss) -> float:
        return loss.value_and_grad(self.predict(X), targets)[0]

    def loss_and_grad(self, X, targets, loss) -> Tuple[float, Params]:
        x0, context = self._inputs(X)
        if self.backward == "memory_free":
            x_out, final = forward(self.network, x0, context)
        else:
            x_out, trace = forward_recorded(self.network, x0, context)
        out = self.head(x_out) if self.head is not None else x_out
        value, g = loss.value_and_grad(out, targets)

        grads: Params = {}
        if self.head is not None:
            g, head_grads = self.head.vjp(x_out, g)
            grads.update(_prefixed("head", head_grads))
        cot = Cotangent.from_output(g)
        if self.backward == "memory_free":
            layer_grads, _ = backward_memory_free(self.network, final, cot, context)
        else:
            layer_grads, _ = backward_stored(self.network, trace, cot, context)

        if self.network.tied and layer_grads:
            grads.update(_prefixed("block", sum_param_grads(layer_grads)))
        else:
            for k, lg in enumerate(layer_grads):
                grads.update(_prefixed(f"block{k}", lg))
        return value, grads

    def parameters(self) -> Params:
        out: Params = {}
        blocks = self.network.blocks
        if self.network.tied and blocks:
            out.update(_prefixed("block", blocks[0].parameters()))
        else:
            for k, block in enumerate(blocks):
                out.update(_prefixed(f"block{k}", block.parameters()))
        out.update(_head_params(self.head))
        return out

    def with_parameters(self, params: Params) -> "MomentumModel":
        net = self.network
        if net.tied and net.blocks:
            block = net.blocks[0].with_parameters(_unprefixed("block", params))
            net = net.with_blocks((block,) * net.depth)
        else:
            net = net.with_blocks(
                [b.with_parameters(_unprefixed(f"block{k}", params)) for k, b in enumerate(net.blocks)]
            )
        return replace(self, network=net, head=_rebuild_head(self.head, params))


@dataclass(frozen=True)
class RevNetModel:
    network: RevNetwork
    dim: int
    head: Optional[LinearHead] = None
    input_mode: str = "state"
    backward: str = "stored"

    def __post_init__(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"unknown input_mode {self.input_mode!r}")
        if self.backward not in BACKWARD_MODES:
            raise ValidationError(f"unknown backward mode {self.backward!r}")

    def _inputs(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.input_mode == "state":
            return X, None
        return np.zeros(X.shape[:-1] + (self.dim,)), X

    def predict(self, X) -> np.ndarray:
        x0, context = self._inputs(X)
        x, _ = revnet_forward(self.network, x0, context)
        return self.head(x) if self.head is not None else x

    def evaluate(self, X, targets, loss) -> float:
        return loss.value_and_grad(self.predict(X), targets)[0]

    def loss_and_grad(self, X, targets, loss) -> Tuple[float, Params]:
        x0, context = self._inputs(X)
        if self.backward == "memory_free":
            x_out, final = revnet_forward(self.network, x0, context)
        else:
            x_out, trace = revnet_forward_recorded(self.network, x0, context)
        out = self.head(x_out) if self.head is not None else x_out
        value, g = loss.value_and_grad(out, targets)
        grads: Params = {}
        if self.head is not None:
            g, head_grads = self.head.vjp(x_out, g)
            grads.update(_prefixed("head", head_grads))
        if self.backward == "memory_free":
            layer_grads, _ = revnet_backward(self.network, final, g, context)
        else:
            layer_grads, _ = revnet_backward_stored(self.network, trace, g, context)
        for k, (dphi, dpsi) in enumerate(layer_grads):
            grads.update(_prefixed(f"layer{k}.phi", dphi))
            grads.update(_prefixed(f"layer{k}.psi", dpsi))
        return value, grads

    def parameters(self) -> Params:
        out: Params = {}
        for k, (phi, psi) in enumerate(self.network.layers):
            out.update(_prefixed(f"layer{k}.phi", phi.parameters()))
            out.update(_prefixed(f"layer{k}.psi", psi.parameters()))
        out.update(_head_params(self.head))
        return out

    def with_parameters(self, params: Params) -> "RevNetModel":
        layers = tuple(
            (
                phi.with_parameters(_unprefixed(f"layer{k}.phi", params)),
                psi.with_parameters(_unprefixed(f"layer{k}.psi", params)),
            )
            for k, (phi, psi) in enumerate(self.network.layers)
        )
        return replace(self, network=RevNetwork(layers), head=_rebuild_head(self.head, params))


# ---- builders ---------------------------------------------------------------

def mlp_network(
    d: int,
    p: int,
    depth: int,
    gamma: Ratio,
    rng: np.random.Generator,
    *,
    tied: bool = False,
    v0_mode: str = "zero",
    frac_bits: Optional[int] = None,
    scale: float = 1.0,
) -> Network:
    if tied:
        block = BlockParams.random(d, p, rng, scale, gamma)
        return Network.tied_weights(block, depth, v0_mode=v0_mode, frac_bits=frac_bits)
    blocks = [BlockParams.random(d, p, rng, scale, gamma) for _ in range(depth)]
    return Network(tuple(blocks), v0_mode=v0_mode, frac_bits=frac_bits)


def lista_network(
    problem: ListaProblem, depth: int, gamma: Ratio = RESNET_GAMMA, frac_bits: Optional[int] = None
) -> Network:
    """ISTA-initialized layers: untrained, L steps of heavy-ball ISTA with momentum gamma (plain ISTA at 0)."""
    layer = ListaParams.ista(problem.D, problem.eta, problem.lasso_lambda, gamma)
    return Network((layer,) * depth, frac_bits=frac_bits)


def revnet_lista(problem: ListaProblem, depth: int) -> RevNetwork:
    """Two ISTA-initialized LISTA layers per RevNet layer, one per stream."""
    layer = ListaParams.ista(problem.D, problem.eta, problem.lasso_lambda, RESNET_GAMMA)
    return RevNetwork(tuple((layer, layer) for _ in range(depth)))
