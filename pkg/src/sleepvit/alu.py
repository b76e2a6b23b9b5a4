"""Scalar functional units: divider, exponential and square root.

Each unit returns a :class:`UnitResult` carrying the value, its status flags
and the unit latency in cycles. The algorithms follow the hardware: restoring
long division with round-half-even, a base-2 range reduction plus a short
Taylor polynomial for ``e**x``, and a restoring digit-by-digit square root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .fixedpoint import (
    COMPUTE_FORMAT,
    FixedValue,
    QFormat,
    add,
    const,
    mul,
    saturate,
)

EXP_LATENCY = 24
DEFAULT_TAYLOR_TERMS = 3


@dataclass(frozen=True)
class UnitResult:
    value: FixedValue
    cycles: int
    overflow: bool = False
    divide_by_zero: bool = False
    negative_radicand: bool = False

    @property
    def flagged(self) -> bool:
        return self.overflow or self.divide_by_zero or self.negative_radicand


def divider_latency(fmt: QFormat = COMPUTE_FORMAT) -> int:
    return fmt.total_bits + fmt.frac_bits + 3


def sqrt_latency(fmt: QFormat = COMPUTE_FORMAT) -> int:
    return (fmt.total_bits + fmt.frac_bits) // 2 + 1


def exp_latency(fmt: QFormat = COMPUTE_FORMAT) -> int:
    return EXP_LATENCY


def long_divide(n: int, d: int, nbits: int) -> tuple[int, int]:
    """Restoring binary long division of non-negative ``n`` (< 2**nbits) by ``d`` > 0."""
    q = r = 0
    for bit in range(nbits - 1, -1, -1):
        r = (r << 1) | ((n >> bit) & 1)
        q <<= 1
        if r >= d:
            r -= d
            q |= 1
    return q, r


def divide(a: FixedValue, b: FixedValue) -> UnitResult:
    """``a / b`` rounded half-to-even at the format's resolution.

    Division by zero returns the saturated maximum carrying the sign of ``a``
    (positive for ``a == 0``) with ``divide_by_zero`` set.
    """
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    fmt = a.fmt
    cycles = divider_latency(fmt)
    if b.raw == 0:
        raw = -fmt.max_raw if a.raw < 0 else fmt.max_raw
        return UnitResult(FixedValue(raw, fmt), cycles, divide_by_zero=True)

    negative = (a.raw < 0) != (b.raw < 0)
    n = abs(a.raw) << fmt.frac_bits
    d = abs(b.raw)
    q, r = long_divide(n, d, fmt.total_bits + fmt.frac_bits)
    if 2 * r > d or (2 * r == d and q & 1):
        q += 1
    raw, ov = saturate(-q if negative else q, fmt)
    return UnitResult(FixedValue(raw, fmt), cycles, overflow=ov)


def isqrt_digits(n: int, iterations: int) -> int:
    """Restoring digit-by-digit square root, one result bit per iteration."""
    root = 0
    rem = n
    bit = 1 << (2 * (iterations - 1))
    while bit:
        trial = root + bit
        if rem >= trial:
            rem -= trial
            root = (root >> 1) + bit
        else:
            root >>= 1
        bit >>= 2
    return root


def square_root(x: FixedValue) -> UnitResult:
    fmt = x.fmt
    cycles = sqrt_latency(fmt)
    if x.raw < 0:
        return UnitResult(FixedValue(0, fmt), cycles, negative_radicand=True)
    root = isqrt_digits(x.raw << fmt.frac_bits, (fmt.total_bits + fmt.frac_bits) // 2)
    raw, ov = saturate(root, fmt)
    return UnitResult(FixedValue(raw, fmt), cycles, overflow=ov)


@lru_cache(maxsize=None)
def exp_constants(fmt: QFormat, terms: int) -> tuple[FixedValue, tuple[FixedValue, ...]]:
    """``1/ln 2`` and the Taylor coefficients ``ln2**k / k!`` as stored in ROM."""
    ln2 = math.log(2.0)
    k = const(1.0 / ln2, fmt)
    coeffs = tuple(const(ln2**i / math.factorial(i), fmt) for i in range(terms))
    return k, coeffs


def exponential(x: FixedValue, taylor_terms: int = DEFAULT_TAYLOR_TERMS) -> UnitResult:
    """``e**x`` as ``2**floor(z) * P(z - floor(z))`` with ``z = x / ln 2``.

    ``P`` is the truncated Taylor series of ``2**f`` evaluated by Horner's
    rule on the shared adder and multiplier.
    """
    if taylor_terms < 1:
        raise ValueError("taylor_terms must be >= 1")
    fmt = x.fmt
    q = fmt.frac_bits
    k, coeffs = exp_constants(fmt, taylor_terms)

    z, ov = mul(x, k)
    ov = ov and z.raw > 0  # a saturated negative exponent just underflows to 0
    i = z.raw >> q
    f = FixedValue(z.raw - (i << q), fmt)

    p = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        p, o1 = mul(p, f)
        p, o2 = add(p, c)
        ov = ov or o1 or o2

    if i >= 0:
        raw, o3 = saturate(p.raw << i, fmt)
        ov = ov or o3
    else:
        raw = p.raw >> -i
    return UnitResult(FixedValue(raw, fmt), exp_latency(fmt), overflow=ov)
