"""Signed fixed-point values with the accelerator's datapath semantics.

Formats use the ``Qm.n`` convention where ``m`` counts the sign bit, so
``Q18.21`` is a 39-bit word with 21 fractional bits. Saturation is
symmetric: the most negative two's-complement code is never produced.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Union

Number = Union[int, float, Fraction]

_FORMAT_RE = re.compile(r"^Q(\d+)\.(\d+)$")


class RoundingMode(enum.Enum):
    TRUNCATE = "truncate"  # toward -inf
    HALF_EVEN = "half_even"  # Gaussian rounding, used by the divider


@dataclass(frozen=True, order=True)
class QFormat:
    """Fixed-point format descriptor; ``int_bits`` includes the sign bit."""

    int_bits: int
    frac_bits: int

    def __post_init__(self) -> None:
        if self.int_bits < 1:
            raise ValueError(f"int_bits must include the sign bit (got {self.int_bits})")
        if self.frac_bits < 0:
            raise ValueError(f"frac_bits must be >= 0 (got {self.frac_bits})")
        if not 1 <= self.total_bits <= 64:
            raise ValueError(f"total width {self.total_bits} outside 1..64")

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_raw(self) -> int:
        # symmetric range
        return -self.max_raw

    @property
    def resolution(self) -> Fraction:
        return Fraction(1, 1 << self.frac_bits)

    @property
    def max_value(self) -> Fraction:
        return Fraction(self.max_raw, 1 << self.frac_bits)

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        m = _FORMAT_RE.match(text.strip())
        if not m:
            raise ValueError(f"bad format descriptor {text!r}; expected 'Q<int>.<frac>'")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


COMPUTE_FORMAT = QFormat(18, 21)


@dataclass(frozen=True)
class FixedValue:
    raw: int
    fmt: QFormat

    @classmethod
    def from_real(cls, x: Number, fmt: QFormat = COMPUTE_FORMAT,
                  mode: RoundingMode = RoundingMode.TRUNCATE) -> "FixedValue":
        return quantize(x, fmt, mode).value

    @property
    def exact(self) -> Fraction:
        return Fraction(self.raw, 1 << self.fmt.frac_bits)

    def __float__(self) -> float:
        return math.ldexp(self.raw, -self.fmt.frac_bits)

    def __neg__(self) -> "FixedValue":
        # exact: the range is symmetric
        return FixedValue(-self.raw, self.fmt)

    def __repr__(self) -> str:
        return f"FixedValue({float(self)!r}, {self.fmt}, raw={self.raw})"


class OpResult(NamedTuple):
    value: FixedValue
    overflow: bool


def saturate(raw: int, fmt: QFormat) -> tuple[int, bool]:
    """Clamp ``raw`` to the symmetric range of ``fmt``."""
    hi = fmt.max_raw
    if raw > hi:
        return hi, True
    if raw < -hi:
        return -hi, True
    return raw, False


def round_fraction(x: Fraction, mode: RoundingMode) -> int:
    if mode is RoundingMode.TRUNCATE:
        return math.floor(x)
    # Fraction.__round__ ties to even
    return round(x)


def quantize(x: Number, fmt: QFormat = COMPUTE_FORMAT,
             mode: RoundingMode = RoundingMode.TRUNCATE) -> OpResult:
    """Quantize an exact rational (floats are taken at their exact binary value)."""
    scaled = Fraction(x) * (1 << fmt.frac_bits)
    raw, ov = saturate(round_fraction(scaled, mode), fmt)
    return OpResult(FixedValue(raw, fmt), ov)


def _check_same(a: FixedValue, b: FixedValue) -> QFormat:
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def add(a: FixedValue, b: FixedValue) -> OpResult:
    fmt = _check_same(a, b)
    raw, ov = saturate(a.raw + b.raw, fmt)
    return OpResult(FixedValue(raw, fmt), ov)


def sub(a: FixedValue, b: FixedValue) -> OpResult:
    return add(a, -b)


def mul(a: FixedValue, b: FixedValue) -> OpResult:
    fmt = _check_same(a, b)
    # double-width product, floor back to frac_bits
    raw, ov = saturate((a.raw * b.raw) >> fmt.frac_bits, fmt)
    return OpResult(FixedValue(raw, fmt), ov)


def shift_raw(raw: int, src_frac: int, dst_frac: int) -> int:
    """Re-align a raw code between fraction widths, flooring on narrowing."""
    if dst_frac >= src_frac:
        return raw << (dst_frac - src_frac)
    return raw >> (src_frac - dst_frac)


def cast(v: FixedValue, target: QFormat) -> OpResult:
    raw, ov = saturate(shift_raw(v.raw, v.fmt.frac_bits, target.frac_bits), target)
    return OpResult(FixedValue(raw, target), ov)


def const(x: Number, fmt: QFormat = COMPUTE_FORMAT) -> FixedValue:
    """Nearest-rounded constant, the way precomputed ROM coefficients are stored."""
    return quantize(x, fmt, RoundingMode.HALF_EVEN).value
