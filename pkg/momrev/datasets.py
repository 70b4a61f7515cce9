# momrev/datasets.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

__all__ = ["Dataset", "ListaProblem", "make_cubic", "make_lista_problem", "make_rings"]


@dataclass(frozen=True)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.X_train) != len(self.y_train):
            raise ValidationError("training inputs and targets differ in length")
        if self.X_test is not None and len(self.X_test) != len(self.y_test):
            raise ValidationError("test inputs and targets differ in length")

    @property
    def n_train(self) -> int:
        return len(self.X_train)


def make_rings(
    n_per_ring: int,
    radii: Sequence[float] = (1.0, 2.0, 3.0, 4.0),
    noise: float = 0.0,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Points on four nested circles; ring i carries label i % 2."""
    if len(radii) != 4:
        raise ValidationError(f"expected 4 radii, got {len(radii)}")
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for i, r in enumerate(radii):
        angles = rng.uniform(0.0, 2.0 * np.pi, n_per_ring)
        ring = r * np.column_stack([np.cos(angles), np.sin(angles)])
        if noise > 0:
            ring = ring + noise * rng.standard_normal(ring.shape)
        points.append(ring)
        labels.append(np.full(n_per_ring, i % 2, dtype=np.int64))
    return np.vstack(points), np.concatenate(labels)


def make_cubic(n: int, range: Tuple[float, float] = (-1.0, 1.0), seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """x uniform in `range`, target -x**3, both shaped (n, 1)."""
    lo, hi = range
    if not lo < hi:
        raise ValidationError(f"empty range {range}")
    x = np.random.default_rng(seed).uniform(lo, hi, (n, 1))
    return x, -(x ** 3)


@dataclass(frozen=True)
class ListaProblem:
    D: np.ndarray
    lasso_lambda: float
    eta: float
    y_train: np.ndarray
    y_test: np.ndarray

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    @property
    def threshold(self) -> float:
        return self.eta * self.lasso_lambda

    def dataset(self) -> Dataset:
        """Unsupervised: the observation is both the input and the target."""
        return Dataset(self.y_train, self.y_train, self.y_test, self.y_test)


# rounding in y @ D can land a few ulps above 1; stay just below so lambda >= 1 gives x* = 0 exactly
_NORM_MARGIN = 1e-13


def _normalized_samples(D: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    y = rng.standard_normal((n, D.shape[0]))
    return y / (np.max(np.abs(y @ D), axis=1, keepdims=True) * (1.0 + _NORM_MARGIN))



def make_lista_problem(
    d: int = 16,
    p: int = 32,
    lasso_lambda: float = 0.1,
    n_train: int = 1000,
    n_test: int = 1000,
    seed: int = 0,
) -> ListaProblem:
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((d, p))
    D /= np.linalg.norm(D, axis=0, keepdims=True)
    eta = 1.0 / np.linalg.norm(D.T @ D, ord=2)
    return ListaProblem(
        D=D,
        lasso_lambda=lasso_lambda,
        eta=float(eta),
        y_train=_normalized_samples(D, n_train, rng),
        y_test=_normalized_samples(D, n_test, rng),
    )
