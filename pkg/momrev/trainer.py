# momrev/trainer.py
"""Losses, ISTA, and the deterministic minibatch SGD loop."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
from sklearn.utils import gen_batches

from .datasets import Dataset, ListaProblem
from .errors import DivergenceError, ShapeError, ValidationError
from .logger import get_logger
from .momentum_net import soft_threshold
from .revarith import DEFAULT_GAMMA, Ratio

__all__ = [
    "HistoryRow",
    "LassoLoss",
    "LogisticLoss",
    "Loss",
    "MSELoss",
    "TrainConfig",
    "TrainResult",
    "ista_iterate",
    "lasso_loss",
    "sgd_train",
    "soft_threshold",
]

log = get_logger(__name__)

Params = Dict[str, np.ndarray]


# ---- losses -----------------------------------------------------------------

class Loss(Protocol):
    def value_and_grad(self, output: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]: ...


class MSELoss:
    """Mean of squared errors over every output entry."""

    def value_and_grad(self, output, target):
        output = np.asarray(output, dtype=np.float64)
        diff = output - np.asarray(target, dtype=np.float64).reshape(output.shape)
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


class LogisticLoss:
    """Binary cross-entropy on logits, labels in {0, 1}."""

    def value_and_grad(self, output, target):
        z = np.asarray(output, dtype=np.float64).reshape(-1)
        y = np.asarray(target, dtype=np.float64).reshape(-1)
        value = float(np.mean(np.logaddexp(0.0, z) - y * z))
        prob = 0.5 * (1.0 + np.tanh(0.5 * z))
        return value, ((prob - y) / z.size).reshape(np.shape(output))


@dataclass(frozen=True)
class LassoLoss:
    problem: ListaProblem

    def value_and_grad(self, output, target):
        x = np.atleast_2d(np.asarray(output, dtype=np.float64))
        y = np.atleast_2d(np.asarray(target, dtype=np.float64))
        D = self.problem.D
        residual = x @ D.T - y
        grad = (residual @ D + self.problem.lasso_lambda * np.sign(x)) / x.shape[0]
        return lasso_loss(self.problem, x, y), grad.reshape(np.shape(output))


def lasso_loss(problem: ListaProblem, x, y) -> float:
    """1/2 ||y - D x||^2 + lambda ||x||_1, averaged over a batch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != problem.p or y.shape[-1] != problem.d:
        raise ShapeError(f"x {x.shape} / y {y.shape} do not match D {problem.D.shape}")
    residual = y - x @ problem.D.T
    per_sample = 0.5 * np.sum(residual ** 2, axis=-1) + problem.lasso_lambda * np.sum(np.abs(x), axis=-1)
    return float(np.mean(per_sample))


def ista_iterate(problem: ListaProblem, y, L_steps: int) -> np.ndarray:
    """L steps of x <- st(x - eta D^T (D x - y), eta lambda) from x = 0."""
    y = np.asarray(y, dtype=np.float64)
    D, eta = problem.D, problem.eta
    x = np.zeros(y.shape[:-1] + (problem.p,))
    for _ in range(L_steps):
        x = soft_threshold(x - eta * (x @ D.T - y) @ D, eta * problem.lasso_lambda)
    return x


# ---- training loop ----------------------------------------------------------

class Trainable(Protocol):
    def parameters(self) -> Params: ...

    def with_parameters(self, params: Params) -> "Trainable": ...

    def loss_and_grad(self, X: np.ndarray, targets: np.ndarray, loss: Loss) -> Tuple[float, Params]: ...

    def evaluate(self, X: np.ndarray, targets: np.ndarray, loss: Loss) -> float: ...


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 256
    learning_rate: float = 1e-3
    iterations: int = 2000
    gamma: Ratio = DEFAULT_GAMMA
    depth: int = 10
    v0_mode: str = "zero"
    optimizer: str = "sgd"
    optimizer_momentum: float = 0.9
    eval_every: int = 100
    threads: int = 1

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.iterations < 0 or self.learning_rate < 0 or self.depth < 0:
            raise ValidationError(f"invalid training configuration: {self}")
        if self.optimizer not in ("sgd", "momentum"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.threads < 1 or self.eval_every < 1:
            raise ValidationError("threads and eval_every must be at least 1")

    def echo(self) -> dict:
        out = asdict(self)
        out["gamma"] = str(self.gamma)
        return out


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    train_loss: float
    test_loss: Optional[float] = None


@dataclass
class TrainResult:
    model: Trainable
    history: List[HistoryRow] = field(default_factory=list)
    stopped_at: Optional[int] = None

    def csv_rows(self):
        header = ["iteration", "train_loss", "test_loss"]
        rows = [[r.iteration, r.train_loss, "" if r.test_loss is None else r.test_loss] for r in self.history]
        return header, rows


def _chunked_loss_and_grad(model: Trainable, X, T, loss: Loss, pool: Optional[ThreadPoolExecutor], threads: int):
    if pool is None or len(X) < 2 * threads:
        return model.loss_and_grad(X, T, loss)
    bounds = np.linspace(0, len(X), threads + 1).astype(int)
    chunks = [(X[a:b], T[a:b]) for a, b in zip(bounds, bounds[1:]) if b > a]
    results = list(pool.map(lambda c: model.loss_and_grad(c[0], c[1], loss), chunks))
    # means over chunks, folded in ascending chunk order
    total, grads = 0.0, None
    for (Xc, _), (value, g) in zip(chunks, results):
        w = len(Xc) / len(X)
        total += w * value
        grads = {k: w * v for k, v in g.items()} if grads is None else {k: grads[k] + w * g[k] for k in grads}
    return total, grads


def sgd_train(
    model: Trainable,
    dataset: Dataset,
    loss: Loss,
    config: TrainConfig,
    stop_when: Optional[Callable[[Trainable], bool]] = None,
) -> TrainResult:
    """Minibatch SGD, deterministic given config.seed.

    stop_when is checked at every evaluation point; training ends early once
    it returns True.
    """
    rng = np.random.default_rng(config.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in model.parameters().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    result = TrainResult(model)
    n = dataset.n_train
    order = rng.permutation(n)
    batches = list(gen_batches(n, min(config.batch_size, n)))
    cursor = 0
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for it in range(config.iterations):
            if cursor == len(batches):
                order, cursor = rng.permutation(n), 0
            idx = order[batches[cursor]]
            cursor += 1

            value, grads = _chunked_loss_and_grad(
                model, dataset.X_train[idx], dataset.y_train[idx], loss, pool, config.threads
            )
            if not math.isfinite(value):
                raise DivergenceError(f"training loss became {value} at iteration {it}")

            for name, g in grads.items():
                if config.optimizer == "momentum":
                    velocity[name] = config.optimizer_momentum * velocity[name] + g
                    g = velocity[name]
                params[name] = params[name] - config.learning_rate * g
            model = model.with_parameters(params)

            test = None
            checkpoint = (it + 1) % config.eval_every == 0 or it == config.iterations - 1
            if dataset.X_test is not None and checkpoint:
                test = model.evaluate(dataset.X_test, dataset.y_test, loss)
                log.info("iteration %d: train=%.6g test=%.6g", it + 1, value, test)
            result.history.append(HistoryRow(it + 1, value, test))
            if stop_when is not None and checkpoint and stop_when(model):
                log.info("iteration %d: stopping criterion met", it + 1)
                result.stopped_at = it + 1
                break
    finally:
        if pool is not None:
            pool.shutdown()
    result.model = model
    return result
