# momrev/lintheory.py
"""Linear second-order dynamics eps * x'' + x' = theta x, x(0) = x0, x'(0) = 0.

Psi_eps(theta) is the matrix mapping x0 to x(1). Its range over the reals
is [lambda_eps, +inf), and lambda_eps decides which real matrices the
linear model can represent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConvergenceError, ValidationError
from .logger import get_logger
from .numerics import as_matrix, default_tolerance, eigenvalues, matrix_exp, minimize_scalar

__all__ = [
    "ALPHA_MAX",
    "InstabilityReport",
    "LinearDynamics",
    "RepresentabilityVerdict",
    "g_eps",
    "lambda_eps",
    "log_neg_lambda_eps",
    "psi_eps",
    "psi_eps_block",
    "psi_eps_series",
    "psi_scalar",
    "representable",
    "representable_first_order",
    "revnet_continuous_spectrum",
    "revnet_fixed_point_report",
    "revnet_instability_check",
    "revnet_jacobian",
    "scalar_range_min",
    "scale_to_representable",
]

log = get_logger(__name__)

ALPHA_MAX = 4.0 * math.pi
_SERIES_BUDGET = 500
_TINY = math.ulp(0.0)
# beyond this norm of theta/eps + Id/(4 eps^2) the series loses too much to cancellation
_SERIES_NORM_LIMIT = 400.0


@dataclass(frozen=True)
class LinearDynamics:
    theta: np.ndarray
    epsilon: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", as_matrix(self.theta, dtype=float))
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def from_gamma(cls, theta, gamma: float) -> "LinearDynamics":
        """eps = 1 / (1 - gamma)."""
        return cls(theta, 1.0 / (1.0 - gamma))


@dataclass(frozen=True)
class RepresentabilityVerdict:
    representable: bool
    lambda_eps: float
    offending_eigenvalues: Tuple[Tuple[float, int], ...] = ()
    boundary_eigenvalues: Tuple[float, ...] = ()


@dataclass(frozen=True)
class InstabilityReport:
    unstable: bool
    hypothesis_met: bool
    spectral_radius: float
    eigenvalues: np.ndarray = field(repr=False, default=None)


def psi_eps_series(dyn: LinearDynamics, tol: float = 1e-15) -> np.ndarray:
    eps = dyn.epsilon
    d = dyn.theta.shape[0]
    M = dyn.theta / eps + np.eye(d) / (4.0 * eps * eps)
    power = np.eye(d)  # M^n / (2n)!
    total = np.zeros((d, d))
    for n in range(_SERIES_BUDGET):
        term = power * (1.0 + 1.0 / (2.0 * eps * (2 * n + 1)))
        total += term
        if n > 0 and np.linalg.norm(term) <= tol * max(1.0, np.linalg.norm(total)):
            return math.exp(-1.0 / (2.0 * eps)) * total
        power = power @ M / ((2 * n + 1) * (2 * n + 2))
    raise ConvergenceError(f"Psi_eps series did not converge in {_SERIES_BUDGET} terms (||theta|| too large)")


def psi_eps_block(dyn: LinearDynamics) -> np.ndarray:
    """Top-left block of exp([[0, Id], [theta/eps, -Id/eps]])."""
    eps = dyn.epsilon
    d = dyn.theta.shape[0]
    A = np.block([[np.zeros((d, d)), np.eye(d)], [dyn.theta / eps, -np.eye(d) / eps]])
    return matrix_exp(A)[:d, :d]


def psi_eps(dyn: LinearDynamics, tol: float = 1e-15, method: str = "auto") -> np.ndarray:
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if method == "series":
        return psi_eps_series(dyn, tol)
    if method == "block":
        return psi_eps_block(dyn)
    if method != "auto":
        raise ValidationError(f"unknown method {method!r}")
    eps = dyn.epsilon
    M_norm = np.linalg.norm(dyn.theta, 2) / eps + 1.0 / (4.0 * eps * eps)
    if M_norm > _SERIES_NORM_LIMIT:
        return psi_eps_block(dyn)
    return psi_eps_series(dyn, tol)


def psi_scalar(mu: float, eps: float) -> float:
    """Closed form of Psi_eps on a 1x1 matrix (mu)."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    s = mu / eps + 1.0 / (4.0 * eps * eps)
    damp = -1.0 / (2.0 * eps)
    if s < 0:
        return g_eps(math.sqrt(-s), eps)
    if s == 0:
        return math.exp(damp) * (1.0 + 1.0 / (2.0 * eps))
    w = math.sqrt(s)
    k = 1.0 / (2.0 * eps * w)
    # e^damp (cosh w + k sinh w), split to keep the exponent finite
    return 0.5 * (math.exp(w + damp) * (1.0 + k) + math.exp(-w + damp) * (1.0 - k))


def _g_shape(alpha: float, eps: float) -> float:
    # G_eps without its exp(-1/(2 eps)) factor
    if abs(alpha) < 1e-12:
        return 1.0 + 1.0 / (2.0 * eps)
    return math.cos(alpha) + math.sin(alpha) / (2.0 * eps * alpha)


def g_eps(alpha: float, eps: float) -> float:
    if eps <= 0:
        raise ValidationError("eps must be positive")
    return math.exp(-1.0 / (2.0 * eps)) * _g_shape(alpha, eps)


def log_neg_lambda_eps(eps: float, grid: int = 4000, refine_iters: int = 200) -> float:
    """log(-lambda_eps), finite for every eps > 0."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    _, shape_min = minimize_scalar(lambda a: _g_shape(a, eps), 1e-9, ALPHA_MAX, grid, refine_iters)
    if not shape_min < 0:
        raise ConvergenceError(f"minimum of G_eps not negative for eps={eps}: {shape_min}")
    return math.log(-shape_min) - 1.0 / (2.0 * eps)


def lambda_eps(eps: float, grid: int = 4000, refine_iters: int = 200) -> float:
    """min over alpha of G_eps, searched on (0, 4 pi].

    Below float64 range the value is clamped to the smallest negative
    subnormal so lambda_eps < 0 holds for every eps.
    """
    log_neg = log_neg_lambda_eps(eps, grid, refine_iters)
    value = -math.exp(log_neg)
    if value == 0.0:
        log.debug("lambda_eps underflows for eps=%g (log(-lambda)=%.6g)", eps, log_neg)
        return -_TINY
    return value



def scalar_range_min(eps: float, mus: Sequence[float]) -> float:
    return min(psi_scalar(float(mu), eps) for mu in mus)


def representable(D, eps: float, tol: Optional[float] = None) -> RepresentabilityVerdict:
    """Representability of a real, C-diagonalizable D by the linear model.

    eps = 0 applies the first-order rule: D non-singular and every negative
    eigenvalue of even multiplicity. eps > 0: every real eigenvalue strictly
    below lambda_eps has even multiplicity. Eigenvalues within tol of
    lambda_eps count as representable and are reported as boundary cases.
    """
    D = as_matrix(D, dtype=float)
    if eps < 0:
        raise ValidationError("eps must be non-negative")
    tol = default_tolerance(D) if tol is None else float(tol)
    spectrum = eigenvalues(D, tol)
    groups = spectrum.real_groups()

    if eps == 0:
        threshold = 0.0
        singular = any(abs(value) <= tol for value, _ in groups)
        offending = [(v, m) for v, m in groups if v < -tol and m % 2 == 1]
        if singular:
            offending += [(v, m) for v, m in groups if abs(v) <= tol]
        boundary: List[float] = []
    else:
        threshold = lambda_eps(eps)
        offending = [(v, m) for v, m in groups if v < threshold - tol and m % 2 == 1]
        boundary = [v for v, m in groups if abs(v - threshold) <= tol and m % 2 == 1]
        if boundary:
            log.warning("eigenvalues %s sit on lambda_eps=%.6g; treated as representable", boundary, threshold)
    return RepresentabilityVerdict(
        representable=not offending,
        lambda_eps=threshold,
        offending_eigenvalues=tuple(offending),
        boundary_eigenvalues=tuple(boundary),
    )


def representable_first_order(D, tol: Optional[float] = None) -> RepresentabilityVerdict:
    """eps = 0 case: D = exp(theta) for a real theta."""
    return representable(D, 0.0, tol)


def scale_to_representable(D, eps: float, margin: float = 1e-6) -> float:
    """alpha > 0 such that every real eigenvalue of alpha * D lies above lambda_eps.

    Raises ValidationError when lambda_eps is too close to 0 for any
    positive float alpha to resolve.
    """
    D = as_matrix(D, dtype=float)
    if eps <= 0:
        raise ValidationError("eps must be positive")
    real = eigenvalues(D).real()
    if real.size == 0 or real.min() >= 0:
        return 1.0
    mu_min = float(real.min())
    log_neg = log_neg_lambda_eps(eps)
    # target lambda_eps * (1 - margin): strictly above lambda_eps even when |lambda_eps| << margin
    log_alpha = log_neg + math.log1p(-margin) - math.log(-mu_min)
    if log_alpha >= 0.0:
        return 1.0
    alpha = math.exp(log_alpha)
    lam = lambda_eps(eps)
    if not alpha > 0.0 or not alpha * mu_min > lam:
        raise ValidationError(f"eps={eps} too small: lambda_eps={lam:.3g} leaves no positive float scale")
    return alpha



def revnet_jacobian(A, B) -> np.ndarray:
    """J(A, B) = [[Id, A], [B, Id + B A]]."""
    A = as_matrix(A, dtype=float)
    B = as_matrix(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"A {A.shape} and B {B.shape} differ")
    d = A.shape[0]
    I = np.eye(d)
    return np.block([[I, A], [B, I + B @ A]])


def _well_conditioned(m: np.ndarray, rcond: float = 1e-12) -> bool:
    s = np.linalg.svd(m, compute_uv=False)
    return bool(s[-1] > rcond * s[0]) if s.size and s[0] > 0 else False


def revnet_fixed_point_report(A, B, tol: float = 1e-9) -> InstabilityReport:
    J = revnet_jacobian(A, B)
    hypothesis = _well_conditioned(np.asarray(A, float)) and _well_conditioned(np.asarray(B, float))
    if not hypothesis:
        log.warning("A or B is singular: the instability hypothesis does not hold")
    values = np.linalg.eigvals(J)
    mods = np.abs(values)
    unstable = bool(np.any((mods >= 1.0 - tol) & (np.abs(values - 1.0) > tol)))
    return InstabilityReport(unstable, hypothesis, float(mods.max()), values)


def revnet_instability_check(A, B, tol: float = 1e-9) -> bool:
    return revnet_fixed_point_report(A, B, tol).unstable


def revnet_continuous_spectrum(A, B) -> np.ndarray:
    """Eigenvalues of [[0, A], [B, 0]], the square roots of Sp(AB) with both signs."""
    A = as_matrix(A, dtype=float)
    B = as_matrix(B, dtype=float)
    d = A.shape[0]
    return np.linalg.eigvals(np.block([[np.zeros((d, d)), A], [B, np.zeros((d, d))]]))
