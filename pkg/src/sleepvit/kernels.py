"""Vectorized raw-integer kernels, bit-identical to the scalar units.

All functions take and return raw two's-complement codes as ``int64`` arrays
(or ``object`` arrays of Python ints when the format is too wide for exact
int64 intermediates). Each returns the result plus a boolean mask of the
elements that raised a flag.
"""

from __future__ import annotations

import numpy as np

from .alu import exp_constants
from .fixedpoint import COMPUTE_FORMAT, QFormat


def fits_int64(fmt: QFormat) -> bool:
    # widest intermediates: (|a| << Q) in divide and a_lo * b in mul
    n, q = fmt.total_bits, fmt.frac_bits
    return n - 1 + q <= 62 and 2 * n - 2 - q <= 62


def as_raw(x, fmt: QFormat = COMPUTE_FORMAT) -> np.ndarray:
    dtype = np.int64 if fits_int64(fmt) else object
    return np.asarray(x, dtype=dtype)


def saturate(raw: np.ndarray, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    hi = fmt.max_raw
    ov = (raw > hi) | (raw < -hi)
    return np.clip(raw, -hi, hi), ov


def add(a: np.ndarray, b: np.ndarray, fmt: QFormat = COMPUTE_FORMAT):
    return saturate(a + b, fmt)


def mul(a: np.ndarray, b: np.ndarray, fmt: QFormat = COMPUTE_FORMAT):
    """floor(a * b / 2**Q) without forming the 2N-bit product."""
    q = fmt.frac_bits
    a_hi = a >> q
    a_lo = a & ((1 << q) - 1)
    return saturate(a_hi * b + ((a_lo * b) >> q), fmt)


def cast(raw: np.ndarray, src: QFormat, dst: QFormat):
    d = dst.frac_bits - src.frac_bits
    if d >= 0:
        # widen through object ints if the shift could leave int64
        if raw.dtype != object and src.total_bits + d > 63:
            raw = raw.astype(object)
        shifted = raw << d
    else:
        shifted = raw >> -d
    out, ov = saturate(shifted, dst)
    if out.dtype == object and fits_int64(dst) and dst.total_bits <= 63:
        out = out.astype(np.int64)
    return out, ov


def divide(a: np.ndarray, b: np.ndarray, fmt: QFormat = COMPUTE_FORMAT):
    """Round-half-even quotient; returns (raw, overflow, divide_by_zero)."""
    a, b = np.broadcast_arrays(a, b)
    q_bits = fmt.frac_bits
    zero = b == 0
    negative = (a < 0) != (b < 0)
    n = np.abs(a) << q_bits
    d = np.where(zero, 1, np.abs(b))
    q, r = np.divmod(n, d)
    twice = 2 * r
    q = q + ((twice > d) | ((twice == d) & ((q & 1) == 1)))
    raw, ov = saturate(np.where(negative, -q, q), fmt)
    mx = fmt.max_raw
    raw = np.where(zero, np.where(a < 0, -mx, mx), raw)
    return raw, ov & ~zero, zero


def isqrt(n: np.ndarray) -> np.ndarray:
    """Exact floor square root of non-negative integers below 2**62."""
    if n.dtype == object:
        import math

        return np.frompyfunc(math.isqrt, 1, 1)(n)
    r = np.floor(np.sqrt(n.astype(np.float64))).astype(np.int64)
    # float sqrt is off by at most one here
    r = np.where(r * r > n, r - 1, r)
    r = np.where((r + 1) * (r + 1) <= n, r + 1, r)
    return r


def square_root(x: np.ndarray, fmt: QFormat = COMPUTE_FORMAT):
    """Returns (raw, negative_radicand)."""
    neg = x < 0
    n = np.where(neg, 0, x) << fmt.frac_bits
    root, _ = saturate(isqrt(n), fmt)
    return root, neg


def exponential(x: np.ndarray, fmt: QFormat = COMPUTE_FORMAT, terms: int = 3):
    q = fmt.frac_bits
    k, coeffs = exp_constants(fmt, terms)
    z, ov = mul(x, np.asarray(k.raw, dtype=x.dtype), fmt)
    ov = ov & (z > 0)
    i = z >> q
    f = z - (i << q)

    p = np.full(x.shape, coeffs[-1].raw, dtype=x.dtype)
    for c in reversed(coeffs[:-1]):
        p, o1 = mul(p, f, fmt)
        p, o2 = add(p, np.asarray(c.raw, dtype=x.dtype), fmt)
        ov |= o1 | o2

    mx = fmt.max_raw
    up = np.clip(i, 0, 62)
    down = np.clip(-i, 0, 62)
    big = (i > 0) & ((i >= fmt.total_bits) | (p > (mx >> up)))
    pos = np.where(big, mx, p << up)
    neg = p >> down
    raw = np.where(i >= 0, pos, neg)
    return raw, ov | big


def dot(a: np.ndarray, b: np.ndarray, fmt: QFormat = COMPUTE_FORMAT):
    """Index-ascending chained mul+add over the last axis (broadcasting)."""
    a, b = np.broadcast_arrays(a, b)
    acc = np.zeros(a.shape[:-1], dtype=a.dtype)
    flags = np.zeros(a.shape[:-1], dtype=bool)
    for k in range(a.shape[-1]):
        p, o1 = mul(a[..., k], b[..., k], fmt)
        acc, o2 = add(acc, p, fmt)
        flags |= o1 | o2
    return acc, flags


def swish(u: np.ndarray, fmt: QFormat = COMPUTE_FORMAT, terms: int = 3):
    one = np.asarray(1 << fmt.frac_bits, dtype=u.dtype)
    e, f1 = exponential(-u, fmt, terms)
    den, f2 = add(one, e, fmt)
    sig, f3, f4 = divide(np.broadcast_to(one, den.shape), den, fmt)
    out, f5 = mul(u, sig, fmt)
    return out, f1 | f2 | f3 | f4 | f5


def softmax(z: np.ndarray, fmt: QFormat = COMPUTE_FORMAT, terms: int = 3):
    """Row softmax over the last axis; returns (raw, overflow, divide_by_zero) per row."""
    e, ov = exponential(z, fmt, terms)
    s = np.zeros(z.shape[:-1], dtype=z.dtype)
    for j in range(z.shape[-1]):
        s, o = add(s, e[..., j], fmt)
        ov[..., j] |= o
    one = np.full(s.shape, 1 << fmt.frac_bits, dtype=z.dtype)
    recip, o_div, dz = divide(one, s, fmt)
    out, o_mul = mul(e, recip[..., None], fmt)
    return out, ov.any(axis=-1) | o_div | o_mul.any(axis=-1), dz


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
              fmt: QFormat = COMPUTE_FORMAT, eps_raw: int = 1):
    """Row LayerNorm over the last axis; returns (raw, flagged per row)."""
    n = x.shape[-1]
    dt = x.dtype
    length = np.full(x.shape[:-1], n << fmt.frac_bits, dtype=dt)

    total = np.zeros(x.shape[:-1], dtype=dt)
    flags = np.zeros(x.shape[:-1], dtype=bool)
    for j in range(n):
        total, o = add(total, x[..., j], fmt)
        flags |= o
    mean, o, dz = divide(total, length, fmt)
    flags |= o | dz

    d, o = add(x, -mean[..., None], fmt)
    flags |= o.any(axis=-1)
    sq, o = mul(d, d, fmt)
    flags |= o.any(axis=-1)
    ssum = np.zeros(x.shape[:-1], dtype=dt)
    for j in range(n):
        ssum, o = add(ssum, sq[..., j], fmt)
        flags |= o
    var, o, dz = divide(ssum, length, fmt)
    flags |= o | dz
    var, o = add(var, np.asarray(eps_raw, dtype=dt), fmt)
    flags |= o
    sigma, neg = square_root(var, fmt)
    flags |= neg
    one = np.full(sigma.shape, 1 << fmt.frac_bits, dtype=dt)
    inv, o, dz = divide(one, sigma, fmt)
    flags |= o | dz

    normed, o1 = mul(d, inv[..., None], fmt)
    scaled, o2 = mul(gamma, normed, fmt)
    out, o3 = add(scaled, beta, fmt)
    flags |= (o1 | o2 | o3).any(axis=-1)
    return out, flags
