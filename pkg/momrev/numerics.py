# momrev/numerics.py
"""Dense linear algebra for small matrices (d <= 64).

Eigenvalues come from LAPACK (balance, Hessenberg reduction, shifted QR)
through numpy, followed by a residual check on recomputed eigenpairs.
The matrix exponential is scipy's Padé scaling-and-squaring.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import AmbiguousMultiplicityError, ConvergenceError, ShapeError, ValidationError
from .logger import get_logger

__all__ = [
    "MAX_DIM",
    "Spectrum",
    "as_matrix",
    "default_tolerance",
    "eigenvalues",
    "matrix_exp",
    "minimize_scalar",
]

log = get_logger(__name__)

MAX_DIM = 64
# Clusters closer than `tol` merge; a gap in (tol, _AMBIGUITY_FACTOR * tol] is undecidable.
_AMBIGUITY_FACTOR = 10.0


def as_matrix(m, *, square: bool = True, dtype=None) -> np.ndarray:
    a = np.asarray(m, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise ShapeError(f"dimension {a.shape[0]} exceeds the supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    return a


def default_tolerance(m: np.ndarray) -> float:
    """1e-7 * ||m||_2, the grouping tolerance shared with lintheory."""
    norm = float(np.linalg.norm(m, 2)) if m.size else 0.0
    return 1e-7 * norm if norm > 0 else 1e-7


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    tolerance: float

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def sorted(self) -> np.ndarray:
        ev = self.eigenvalues
        return ev[np.lexsort((ev.imag, ev.real))]

    def real(self) -> np.ndarray:
        """Eigenvalues whose imaginary part is within tolerance of zero."""
        ev = self.eigenvalues
        imag = np.abs(ev.imag)
        shaky = (imag > self.tolerance) & (imag <= _AMBIGUITY_FACTOR * self.tolerance)
        if np.any(shaky):
            raise AmbiguousMultiplicityError(
                "eigenvalue realness is ambiguous at the requested tolerance", ev[shaky]
            )
        return np.sort(ev[imag <= self.tolerance].real)

    def real_groups(self) -> List[Tuple[float, int]]:
        """Real eigenvalues clustered within tolerance, as (mean value, multiplicity)."""
        values = self.real()
        groups: List[List[float]] = []
        for value in values:
            if groups and value - groups[-1][-1] <= self.tolerance:
                groups[-1].append(value)
                continue
            if groups and value - groups[-1][-1] <= _AMBIGUITY_FACTOR * self.tolerance:
                raise AmbiguousMultiplicityError(
                    f"gap {value - groups[-1][-1]:.3e} sits at the grouping boundary "
                    f"(tol={self.tolerance:.3e})",
                    (groups[-1][-1], value),
                )
            groups.append([value])
        return [(float(np.mean(g)), len(g)) for g in groups]


def eigenvalues(m, tol: Optional[float] = None) -> Spectrum:
    a = as_matrix(m)
    if a.shape[0] == 0:
        return Spectrum(np.zeros(0, dtype=complex), tol or 0.0)
    tol = default_tolerance(a) if tol is None else float(tol)
    try:
        values, vectors = np.linalg.eig(a)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"QR iteration did not converge: {e}") from e

    # verification pass on the recomputed eigenpairs
    norm = max(float(np.linalg.norm(a, 2)), np.finfo(float).tiny)
    residual = np.linalg.norm(a @ vectors - vectors * values, axis=0)
    scale = np.maximum(np.linalg.norm(vectors, axis=0), np.finfo(float).tiny)
    worst = float(np.max(residual / scale)) / norm
    if worst > max(tol / norm, 1e-10):
        raise ConvergenceError(f"eigenpair residual {worst:.3e} exceeds tolerance; matrix is ill-conditioned")
    return Spectrum(values.astype(complex), tol)


def matrix_exp(m) -> np.ndarray:
    a = as_matrix(m, dtype=float)
    return scipy.linalg.expm(a)


def minimize_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    grid: int = 1000,
    refine_iters: int = 200,
) -> Tuple[float, float]:
    """Grid scan then golden-section refinement around the best cell."""
    if not lo < hi:
        raise ValidationError(f"empty interval [{lo}, {hi}]")
    if grid < 100:
        raise ValidationError(f"grid must hold at least 100 points, got {grid}")

    xs = np.linspace(lo, hi, grid)
    values = np.array([f(float(x)) for x in xs])
    if not np.all(np.isfinite(values)):
        raise ValidationError("objective is not finite on the scanned interval")
    best = int(np.argmin(values))
    left, right = xs[max(best - 1, 0)], xs[min(best + 1, grid - 1)]

    res = None
    if 0 < best < grid - 1:
        try:
            res = scipy.optimize.minimize_scalar(
                f,
                bracket=(left, xs[best], right),
                method="golden",
                options={"maxiter": refine_iters, "xtol": 1e-12},
            )
        except ValueError:
            # flat cell: the grid point is not strictly below both neighbours
            res = None
    if res is None:
        res = scipy.optimize.minimize_scalar(
            f, bounds=(left, right), method="bounded", options={"maxiter": refine_iters, "xatol": 1e-12}
        )
    x, fx = float(res.x), float(res.fun)
    if not left <= x <= right or fx > values[best]:
        x, fx = float(xs[best]), float(values[best])
    log.debug("minimize_scalar: argmin=%.12g min=%.12g (grid cell %d)", x, fx, best)
    return x, fx
