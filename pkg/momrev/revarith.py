# momrev/revarith.py
"""Exactly reversible fixed-point arithmetic.

Multiplication by a rational ratio n/d loses the remainder of the integer
division by d. The remainder is pushed into an arbitrary-precision
information buffer so the multiplication can be undone bit for bit.

Every operation accepts either Python ints or numpy object arrays of
Python ints; the array form acts element-wise, one buffer per coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple, Union

import numpy as np

from .errors import BufferCorruptionError, ConfigError, ValidationError

__all__ = [
    "DEFAULT_FRAC_BITS",
    "DEFAULT_GAMMA",
    "FixedPoint",
    "InfoBuffer",
    "Ratio",
    "buffer_bits",
    "decode",
    "decode_array",
    "encode",
    "encode_array",
    "reversible_mul",
    "reversible_mul_inverse",
    "zeros_buffer",
]

DEFAULT_FRAC_BITS = 32

IntLike = Union[int, np.ndarray]


@dataclass(frozen=True)
class Ratio:
    """gamma = n / d in lowest terms with 0 <= n <= d.

    n = 0 is the ResNet limit: allowed for forward passes, rejected by the
    reversible operations.
    """

    n: int
    d: int

    def __post_init__(self) -> None:
        if self.d <= 0 or self.n < 0 or self.n > self.d:
            raise ValidationError(f"ratio {self.n}/{self.d} is outside [0, 1]")
        g = math.gcd(self.n, self.d)
        if g != 1:
            object.__setattr__(self, "n", self.n // g)
            object.__setattr__(self, "d", self.d // g)

    @classmethod
    def parse(cls, text: Union[str, float, "Ratio"]) -> "Ratio":
        if isinstance(text, Ratio):
            return text
        s = str(text).strip()
        try:
            if "/" in s:
                num, den = s.split("/", 1)
                return cls(int(num), int(den))
            frac = Fraction(s).limit_denominator(1000)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"cannot parse gamma {text!r}: {e}") from e
        return cls(frac.numerator, frac.denominator)

    @property
    def value(self) -> float:
        return self.n / self.d

    @property
    def complement(self) -> float:
        """1 - gamma as a float, the weight of the residual branch."""
        return (self.d - self.n) / self.d

    @property
    def invertible(self) -> bool:
        return self.n > 0

    def __str__(self) -> str:
        return f"{self.n}/{self.d}"


DEFAULT_GAMMA = Ratio(9, 10)


@dataclass(frozen=True)
class FixedPoint:
    mantissa: int
    frac_bits: int = DEFAULT_FRAC_BITS

    def __float__(self) -> float:
        return decode(self)


@dataclass(frozen=True)
class InfoBuffer:
    value: int = 0

    def __post_init__(self) -> None:
        if self.value < 0:
            raise BufferCorruptionError(f"information buffer went negative: {self.value}")

    @property
    def bit_len(self) -> int:
        return self.value.bit_length()


def zeros_buffer(shape) -> np.ndarray:
    buf = np.empty(shape, dtype=object)
    buf.fill(0)
    return buf


def _raw(buf) -> IntLike:
    return buf.value if isinstance(buf, InfoBuffer) else buf


def _check_ratio(r: Ratio) -> None:
    if not r.invertible:
        raise ValidationError("reversible multiplication needs gamma > 0")


def reversible_mul(buf, c: IntLike, r: Ratio) -> Tuple[object, IntLike]:
    """Multiply c by n/d, moving the lost remainder into buf.

    Floor division keeps remainders in [0, d) for negative c, so the map stays
    a bijection on all of Z x N.
    """
    _check_ratio(r)
    i = _raw(buf)
    i = i * r.d
    i = i + c % r.d
    c = c // r.d
    c = c * r.n
    c = c + i % r.n
    i = i // r.n
    return (InfoBuffer(i) if isinstance(buf, InfoBuffer) else i), c


def reversible_mul_inverse(buf, c: IntLike, r: Ratio) -> Tuple[object, IntLike]:
    """Exact inverse of reversible_mul: the same six steps, reversed."""
    _check_ratio(r)
    i = _raw(buf)
    i = i * r.n
    i = i + c % r.n
    c = c // r.n
    c = c * r.d
    c = c + i % r.d
    i = i // r.d
    return (InfoBuffer(i) if isinstance(buf, InfoBuffer) else i), c


def buffer_bits(buf) -> Union[int, np.ndarray]:
    if isinstance(buf, InfoBuffer):
        return buf.bit_len
    if isinstance(buf, np.ndarray):
        return np.array([int(v).bit_length() for v in buf.ravel()], dtype=np.int64).reshape(buf.shape)
    return int(buf).bit_length()


def encode(x: float, frac_bits: int = DEFAULT_FRAC_BITS) -> FixedPoint:
    """Round x to the nearest multiple of 2**-frac_bits, ties to even."""
    if not math.isfinite(x):
        raise ValidationError(f"cannot encode non-finite value {x!r}")
    return FixedPoint(int(np.rint(math.ldexp(float(x), frac_bits))), frac_bits)


def decode(fp: FixedPoint) -> float:
    return math.ldexp(float(fp.mantissa), -fp.frac_bits)


def encode_array(x, frac_bits: int = DEFAULT_FRAC_BITS) -> np.ndarray:
    """Vector form of encode; returns an object array of Python ints."""
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError("cannot encode non-finite values")
    scaled = np.rint(np.ldexp(a, frac_bits))
    if np.any(np.abs(scaled) >= 2.0**63):
        return np.array([int(v) for v in scaled.ravel()], dtype=object).reshape(a.shape)
    return scaled.astype(np.int64).astype(object)


def decode_array(m: np.ndarray, frac_bits: int = DEFAULT_FRAC_BITS) -> np.ndarray:
    return np.ldexp(np.asarray(m).astype(np.float64), -frac_bits)
