# momrev/odesim.py
"""Fixed-step integrators linking the discrete networks to their ODE limits.

First order:  x' = f(x)                    explicit Euler
Second order: eps x'' + x' = f(x)          v <- v + (h/eps)(f(x) - v); x <- x + h v

With h = 1 and eps = 1 / (1 - gamma) the second-order step is the
float-mode momentum update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergenceError, ValidationError
from .logger import get_logger

__all__ = [
    "CrossingBundle",
    "Trajectory",
    "convergence_eps_to_infty",
    "convergence_eps_to_zero",
    "crossing_witness",
    "damped_oscillator_check",
    "first_order_embedding",
    "free_velocity_flow",
    "integrate_first_order",
    "integrate_second_order",
    "integrate_undamped",
]

log = get_logger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    xs: np.ndarray
    vs: np.ndarray
    h: float

    @property
    def final(self) -> np.ndarray:
        return self.xs[-1]

    def at(self, t: float) -> np.ndarray:
        """State x at the grid time closest to t."""
        return self.xs[int(np.argmin(np.abs(self.times - t)))]

    def csv_rows(self) -> Tuple[List[str], Iterator[list]]:
        d = self.xs.shape[1]
        header = ["t"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)]
        rows = ([float(t), *map(float, x), *map(float, v)] for t, x, v in zip(self.times, self.xs, self.vs))
        return header, rows


def _steps(T: float, h: float) -> int:
    if h <= 0 or T <= 0:
        raise ValidationError(f"need positive horizon and step, got T={T} h={h}")
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * max(T, 1.0):
        raise ValidationError(f"step {h} does not divide horizon {T}")
    return n


def _check(x: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"trajectory blew up at step {k}")


def _finish(xs: List[np.ndarray], vs: List[np.ndarray], T: float, h: float) -> Trajectory:
    n = len(xs) - 1
    return Trajectory(np.linspace(0.0, T, n + 1), np.array(xs), np.array(vs), h)


def integrate_first_order(f: VectorField, x0, T: float, h: float) -> Trajectory:
    n = _steps(T, h)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    xs, vs = [x], [f(x)]
    for k in range(n):
        x = x + h * f(x)
        _check(x, k)
        xs.append(x)
        vs.append(f(x))
    return _finish(xs, vs, T, h)


def integrate_second_order(f: VectorField, x0, v0, eps: float, T: float, h: float, *,
                           damping: Optional[float] = None) -> Trajectory:
    """eps x'' + x' = f(x), semi-implicit.

    damping overrides the per-step velocity relaxation h / eps. With h = 1 and
    damping = 1 - gamma the steps are exactly the float momentum layers.
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if damping is not None and not 0.0 <= damping <= 1.0:
        raise ValidationError(f"damping must lie in [0, 1], got {damping}")
    n = _steps(T, h)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    v = np.broadcast_to(np.asarray(v0, dtype=np.float64), x.shape).copy()
    c = h / eps if damping is None else float(damping)
    xs, vs = [x], [v]
    for k in range(n):
        v = v + c * (f(x) - v)
        x = x + h * v
        _check(x, k)
        xs.append(x)
        vs.append(v)
    return _finish(xs, vs, T, h)


def integrate_undamped(f: VectorField, x0, v0, T: float, h: float) -> Trajectory:
    """x'' = f(x), semi-implicit: velocity first, then position."""
    n = _steps(T, h)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    v = np.broadcast_to(np.asarray(v0, dtype=np.float64), x.shape).copy()
    xs, vs = [x], [v]
    for k in range(n):
        v = v + h * f(x)
        x = x + h * v
        _check(x, k)
        xs.append(x)
        vs.append(v)
    return _finish(xs, vs, T, h)


def _sup_distance(a: Trajectory, b: Trajectory) -> float:
    return float(np.max(np.abs(a.xs - b.xs)))


def convergence_eps_to_zero(
    f: VectorField, x0, v0, eps_list: Sequence[float], h: float, T: float = 1.0
) -> List[Tuple[float, float]]:
    """sup-norm distance between eps x'' + x' = f and x' = f, per eps."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationError("eps_list must be strictly decreasing")
    reference = integrate_first_order(f, x0, T, h)
    out = []
    for eps in eps_list:
        err = _sup_distance(integrate_second_order(f, x0, v0, eps, T, h), reference)
        log.debug("eps=%g sup error=%.3e", eps, err)
        out.append((eps, err))
    return out


def convergence_eps_to_infty(
    f: VectorField, x0, v0, eps_list: Sequence[float], h: float, T: float = 1.0
) -> List[Tuple[float, float]]:
    """sup-norm distance between x'' + x'/eps = f and x'' = f, per eps."""
    reference = integrate_undamped(f, x0, v0, T, h)
    out = []
    for eps in eps_list:
        # x'' + x'/eps = f  <=>  eps x'' + x' = eps f
        scaled = lambda x, eps=eps: eps * f(x)
        err = _sup_distance(integrate_second_order(scaled, x0, v0, eps, T, h), reference)
        out.append((eps, err))
    return out


@dataclass(frozen=True)
class CrossingBundle:
    closed_form: List[Trajectory]
    integrated: List[Trajectory]
    x0s: Tuple[float, ...]

    @property
    def T(self) -> float:
        return math.pi


def crossing_witness(eps: float = 1.0, x0s: Sequence[float] = (1.0, 2.0), steps: int = 100_000) -> CrossingBundle:
    """Trajectories of x'' + x' = -x/2 with v0 = -x0/2; all vanish at t = pi.

    Closed form x0 exp(-t/2) cos(t/2). Only eps = 1 yields this family.
    """
    if eps != 1.0:
        raise ValidationError("the crossing family exists for eps = 1 only")
    h = math.pi / steps
    times = np.linspace(0.0, math.pi, steps + 1)
    closed, integrated = [], []
    for x0 in x0s:
        x = x0 * np.exp(-times / 2) * np.cos(times / 2)
        v = -0.5 * x0 * np.exp(-times / 2) * (np.cos(times / 2) + np.sin(times / 2))
        closed.append(Trajectory(times, x[:, None], v[:, None], h))
        integrated.append(integrate_second_order(lambda z: -0.5 * z, [x0], [-x0 / 2], eps, math.pi, h))
    return CrossingBundle(closed, integrated, tuple(x0s))


def free_velocity_flow(target, x0, eps: float = 1.0) -> np.ndarray:
    """v0 such that eps x'' + x' = 0 started at (x0, v0) reaches `target` at t = 1.

    x(t) = x0 + eps v0 (1 - exp(-t/eps)).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    return (np.asarray(target, dtype=np.float64) - x0) / (eps * (1.0 - math.exp(-1.0 / eps)))


def first_order_embedding(theta, eps: float) -> VectorField:
    """f_hat = eps * (df/dx) f + f for the autonomous linear field f(x) = theta x.

    Every solution of x' = theta x also solves eps x'' + x' = f_hat(x) when
    started with velocity theta x0.
    """
    theta = np.asarray(theta, dtype=np.float64)
    M = eps * theta @ theta + theta
    return lambda x: M @ x


def damped_oscillator_check(eps: float, x0: float = 1.0, h: float = 1e-4) -> Tuple[float, float, float]:
    """Integrate x'' + x'/eps = -(pi^2 + 1/(4 eps^2)) x from (x0, 0) to t = 1.

    Returns (integrated x(1), closed form -x0 exp(-1/(2 eps)), relative error).
    """
    k = math.pi ** 2 + 1.0 / (4.0 * eps * eps)
    # eps x'' + x' = eps f
    traj = integrate_second_order(lambda x: -eps * k * x, [x0], [0.0], eps, 1.0, h)
    exact = -x0 * math.exp(-1.0 / (2.0 * eps))
    got = float(traj.final[0])
    return got, exact, abs(got - exact) / abs(exact)
