# momrev/errors.py
from __future__ import annotations

__all__ = [
    "MomrevError",
    "ValidationError",
    "ShapeError",
    "ConfigError",
    "InvertibilityError",
    "ConvergenceError",
    "DivergenceError",
    "BufferCorruptionError",
    "AmbiguousMultiplicityError",
    "exit_code_for",
]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2


class MomrevError(Exception):
    """Base class for every error raised by momrev."""


class ValidationError(MomrevError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class InvertibilityError(ValidationError):
    """Inverse step requested for a non-invertible block (gamma = 0)."""


class ConvergenceError(MomrevError, ArithmeticError):
    """An iterative routine exhausted its budget."""


class DivergenceError(MomrevError, ArithmeticError):
    """A trajectory, activation or loss became non-finite."""


class BufferCorruptionError(MomrevError):
    """Information buffers no longer satisfy the round-trip invariant."""


class AmbiguousMultiplicityError(MomrevError):
    """Eigenvalue clustering is undecidable at the requested tolerance."""

    def __init__(self, message: str, values=()) -> None:
        super().__init__(message)
        self.values = tuple(values)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_VALIDATION
