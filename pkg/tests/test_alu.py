import math
from fractions import Fraction

import numpy as np
import pytest

from sleepvit import alu, kernels
from sleepvit.fixedpoint import COMPUTE_FORMAT, FixedValue, QFormat, mul, quantize

F = COMPUTE_FORMAT
MAX = F.max_raw


def fv(x, fmt=F):
    return quantize(Fraction(x), fmt).value


def oracle_divide(a: int, b: int, fmt=F) -> tuple[int, bool]:
    q = round(Fraction(a * 2**fmt.frac_bits, b))  # Fraction rounds ties to even
    hi = fmt.max_raw
    return max(-hi, min(hi, q)), abs(q) > hi


def oracle_sqrt(a: int, fmt=F) -> int:
    return math.isqrt(a << fmt.frac_bits)


# -- latencies --------------------------------------------------------------

def test_golden_latencies():
    assert alu.divider_latency() == 63
    assert alu.sqrt_latency() == 31
    assert alu.exp_latency() == 24


@pytest.mark.parametrize("text", ["Q4.4", "Q8.8", "Q1.7", "Q6.2", "Q5.3", "Q2.6", "Q16.16"])
def test_latency_closed_forms(text):
    fmt = QFormat.parse(text)
    n, q = fmt.total_bits, fmt.frac_bits
    assert alu.divider_latency(fmt) == n + q + 3
    assert alu.sqrt_latency(fmt) == (n + q) // 2 + 1
    one = FixedValue(1 << q, fmt)
    assert alu.divide(one, one).cycles == n + q + 3
    assert alu.square_root(one).cycles == (n + q) // 2 + 1


# -- divider ---------------------------------------------------------------

def test_divide_examples():
    x = fv(Fraction(-1234567, 1000))
    r = alu.divide(x, fv(1))
    assert r.value == x and r.cycles == 63 and not r.flagged
    r = alu.divide(fv(1), fv(3))
    assert r.value.raw == 699051


@pytest.mark.parametrize("a,expected", [(1, MAX), (0, MAX), (-1, -MAX)])
def test_divide_by_zero(a, expected):
    r = alu.divide(fv(a), fv(0))
    assert r.divide_by_zero and not r.overflow
    assert r.value.raw == expected and r.cycles == 63


def test_divide_overflow_saturates():
    r = alu.divide(fv(100000), fv(Fraction(1, 2**20)))
    assert r.overflow and r.value.raw == MAX


def test_divide_random_against_oracle():
    rng = np.random.default_rng(7)
    n = 100_000
    # mixed magnitudes so both tiny and saturating quotients occur
    a = (rng.integers(-MAX, MAX + 1, n) >> rng.integers(0, 38, n)).astype(np.int64)
    b = (rng.integers(-MAX, MAX + 1, n) >> rng.integers(0, 38, n)).astype(np.int64)
    b[b == 0] = 1
    got, ov, dz = kernels.divide(a, b)
    mismatches = 0
    for i in range(n):
        exp = oracle_divide(int(a[i]), int(b[i]))
        mismatches += (int(got[i]), bool(ov[i])) != exp
    assert mismatches == 0 and not dz.any()
    # the restoring long-division unit agrees bit for bit on a subset
    for i in range(0, n, 50):
        r = alu.divide(FixedValue(int(a[i]), F), FixedValue(int(b[i]), F))
        assert (r.value.raw, r.overflow) == (int(got[i]), bool(ov[i]))


def test_divide_then_multiply_recovers_dividend():
    rng = np.random.default_rng(3)
    for _ in range(2000):
        a = FixedValue(int(rng.integers(-2**30, 2**30)), F)
        b = FixedValue(int(rng.integers(2**18, 2**26)) * int(rng.choice([-1, 1])), F)
        q = alu.divide(a, b)
        back = mul(q.value, b).value
        assert abs(back.exact - a.exact) <= (abs(b.exact) + 1) * F.resolution


def test_long_divide_matches_divmod():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(0, 2**60))
        d = int(rng.integers(1, 2**40))
        assert alu.long_divide(n, d, 60) == divmod(n, d)


# -- square root -----------------------------------------------------------

def test_sqrt_examples():
    r = alu.square_root(fv(1))
    assert r.value == fv(1) and r.cycles == 31
    r = alu.square_root(fv(-1))
    assert r.negative_radicand and r.value.raw == 0
    assert alu.square_root(fv(2)).value.raw == 2965820


def test_sqrt_random_against_oracle():
    rng = np.random.default_rng(5)
    n = 100_000
    x = (rng.integers(0, MAX + 1, n) >> rng.integers(0, 38, n)).astype(np.int64)
    got, neg = kernels.square_root(x)
    expected = np.array([oracle_sqrt(int(v)) for v in x])
    assert not neg.any()
    assert int(np.count_nonzero(got != expected)) == 0
    for i in range(0, n, 100):
        assert alu.square_root(FixedValue(int(x[i]), F)).value.raw == expected[i]


def test_sqrt_floor_property():
    rng = np.random.default_rng(9)
    for v in rng.integers(0, MAX + 1, 2000):
        r = alu.square_root(FixedValue(int(v), F)).value
        x = Fraction(int(v), 2**21)
        assert r.raw >= 0
        assert r.exact**2 <= x < (r.exact + F.resolution) ** 2


# -- exponential -----------------------------------------------------------

def test_exp_examples():
    r = alu.exponential(fv(0))
    assert r.value == fv(1) and r.cycles == 24 and not r.flagged
    # floored ln 2 gives f just below 1, the worst case for 3 terms:
    # Lagrange remainder (f ln2)^3 / 3! * e^(f ln2) <= ln2^3 / 6 * 2
    r = alu.exponential(fv(math.log(2)))
    bound = math.log(2) ** 3 / 6 * 2 + 8 * 2.0**-21
    assert abs(float(r.value) - 2.0) <= bound
    assert abs(float(alu.exponential(fv(math.log(2)), 8).value) - 2.0) < 2.0**-14
    r = alu.exponential(fv(30))
    assert r.overflow and r.value.raw == MAX


def test_exp_large_negative_underflows_silently():
    r = alu.exponential(fv(-60))
    assert r.value.raw == 0 and not r.flagged
    r = alu.exponential(FixedValue(-MAX, F))
    assert r.value.raw == 0 and not r.flagged


def test_exp_cycles_independent_of_terms():
    for t in range(1, 9):
        assert alu.exponential(fv(0.3), t).cycles == 24
    with pytest.raises(ValueError):
        alu.exponential(fv(0.3), 0)


def test_exp_monotone_on_grid():
    raw = np.floor(np.ldexp(np.linspace(-8, 8, 10_000), 21)).astype(np.int64)
    e, ov = kernels.exponential(raw)
    assert not ov.any()
    assert np.all(np.diff(e) >= 0)


def test_exp_kernel_matches_scalar_unit():
    rng = np.random.default_rng(2)
    raw = np.concatenate([rng.integers(-40 << 21, 20 << 21, 3000), [0, MAX, -MAX, 1, -1]])
    for terms in (1, 3, 6):
        e, ov = kernels.exponential(raw, F, terms)
        for i in range(0, raw.size, 7):
            r = alu.exponential(FixedValue(int(raw[i]), F), terms)
            assert (int(e[i]), bool(ov[i])) == (r.value.raw, r.overflow)


def test_exp_defined_pipeline_against_rational_oracle():
    """Re-derive the documented algorithm with exact integers and compare."""
    k = round(Fraction(1 / math.log(2)) * 2**21)
    coeffs = [round(Fraction(math.log(2) ** i / math.factorial(i)) * 2**21) for i in range(3)]
    for x in np.linspace(-5, 5, 401):
        xr = math.floor(Fraction(x) * 2**21)
        z = (xr * k) >> 21
        i, f = z >> 21, z & (2**21 - 1)
        p = coeffs[2]
        for c in (coeffs[1], coeffs[0]):
            p = ((p * f) >> 21) + c
        expected = p << i if i >= 0 else p >> -i
        assert alu.exponential(FixedValue(xr, F)).value.raw == expected
