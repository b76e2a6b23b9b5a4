"""Vector compute units (MAC, softmax, LayerNorm) and their cost models.

:class:`VectorUnit` executes one operation at a time against the memory
model, element by element, through the scalar units. The model engine uses
the equivalent vectorized kernels; both share the latency and activity
figures defined here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from . import alu
from .alu import divider_latency, exp_latency, sqrt_latency
from .fixedpoint import COMPUTE_FORMAT, FixedValue, QFormat, add, mul, sub
from .memory import MemorySystem, TensorDescriptor


class Activation(enum.Enum):
    NONE = "none"
    LINEAR = "linear"
    SWISH = "swish"


# Fixed overheads, calibrated so a 64-element Q18.21 vector reproduces the
# reported latencies (MAC 72/76/170, softmax 1926, LayerNorm 1943).
NOMINAL_LEN = 64
MAC_OVERHEAD = {Activation.NONE: 8, Activation.LINEAR: 12, Activation.SWISH: 106}
SOFTMAX_OVERHEAD = 1926 - (NOMINAL_LEN * exp_latency() + divider_latency() + NOMINAL_LEN)
LAYERNORM_OVERHEAD = 1943 - (3 * NOMINAL_LEN + 3 * divider_latency() + sqrt_latency())


def mac_cycles(length: int, act: Activation = Activation.NONE) -> int:
    return length + MAC_OVERHEAD[act]


def softmax_cycles(length: int, fmt: QFormat = COMPUTE_FORMAT) -> int:
    return length * exp_latency(fmt) + divider_latency(fmt) + length + SOFTMAX_OVERHEAD


def layernorm_cycles(length: int, fmt: QFormat = COMPUTE_FORMAT) -> int:
    # sum pass, centred-square pass, scale/shift pass; mean, variance and
    # reciprocal divisions; one square root
    return 3 * length + 3 * divider_latency(fmt) + sqrt_latency(fmt) + LAYERNORM_OVERHEAD


# Busy cycles credited to each unit per operation. Shared adder and
# multiplier cycles are credited when a vector op borrows them.

def exp_usage(terms: int = alu.DEFAULT_TAYLOR_TERMS) -> dict[str, int]:
    return {"exponential": exp_latency(), "multiplier": terms, "adder": terms - 1}


def _merge(*parts: dict[str, int]) -> dict[str, int]:
    out: dict[str, int] = {}
    for p in parts:
        for k, v in p.items():
            out[k] = out.get(k, 0) + v
    return out


def mac_usage(length: int, act: Activation = Activation.NONE,
              terms: int = alu.DEFAULT_TAYLOR_TERMS) -> dict[str, int]:
    parts = [{"mac": mac_cycles(length, act), "multiplier": length, "adder": length}]
    if act is not Activation.NONE:
        parts.append({"adder": 1})
    if act is Activation.SWISH:
        parts += [exp_usage(terms), {"adder": 1, "divider": divider_latency(), "multiplier": 1}]
    return _merge(*parts)


def softmax_usage(length: int, terms: int = alu.DEFAULT_TAYLOR_TERMS) -> dict[str, int]:
    exp = {k: v * length for k, v in exp_usage(terms).items()}
    return _merge({"softmax": softmax_cycles(length), "adder": length,
                   "divider": divider_latency(), "multiplier": length}, exp)


def layernorm_usage(length: int) -> dict[str, int]:
    return {"layernorm": layernorm_cycles(length), "adder": 4 * length + 1,
            "multiplier": 3 * length, "divider": 3 * divider_latency(),
            "sqrt": sqrt_latency()}


@dataclass
class Flags:
    overflow: bool = False
    divide_by_zero: bool = False
    negative_radicand: bool = False

    def note(self, r) -> None:
        if isinstance(r, alu.UnitResult):
            self.overflow |= r.overflow
            self.divide_by_zero |= r.divide_by_zero
            self.negative_radicand |= r.negative_radicand
        else:
            self.overflow |= bool(r)

    @property
    def any(self) -> bool:
        return self.overflow or self.divide_by_zero or self.negative_radicand


@dataclass
class VectorOpResult:
    values: list[FixedValue]
    cycles: int
    flags: Flags = field(default_factory=Flags)


@dataclass(frozen=True)
class Slice:
    """A base address expressed as (tensor, element offset)."""

    tensor: TensorDescriptor
    offset: int = 0

    def at(self, i: int) -> int:
        return self.offset + i


class VectorUnit:
    """Element-serial execution of the vector ops against a memory system."""

    def __init__(self, memory: MemorySystem, taylor_terms: int = alu.DEFAULT_TAYLOR_TERMS):
        self.memory = memory
        self.fmt = memory.compute_format
        self.taylor_terms = taylor_terms
        self.one = FixedValue(1 << self.fmt.frac_bits, self.fmt)

    def _read(self, s: Slice, i: int) -> FixedValue:
        return self.memory.read_element(s.tensor, s.at(i))

    def _write(self, s: Slice, i: int, v: FixedValue, flags: Flags) -> None:
        flags.note(self.memory.write_element(s.tensor, s.at(i), v))

    def swish(self, u: FixedValue, flags: Flags) -> FixedValue:
        e = alu.exponential(-u, self.taylor_terms)
        flags.note(e)
        den, ov = add(self.one, e.value)
        flags.note(ov)
        sig = alu.divide(self.one, den)
        flags.note(sig)
        out, ov = mul(u, sig.value)
        flags.note(ov)
        return out

    def mac(self, a: Slice, b: Slice, length: int, act: Activation = Activation.NONE,
            bias: Optional[Slice] = None, out: Optional[Slice] = None) -> VectorOpResult:
        """Dot product of ``length`` elements, then the selected activation."""
        if length < 1:
            raise ValueError("length must be >= 1")
        if (bias is None) != (act is Activation.NONE):
            raise ValueError("a bias address is required exactly when an activation is selected")
        flags = Flags()
        acc = FixedValue(0, self.fmt)
        for k in range(length):
            p, ov1 = mul(self._read(a, k), self._read(b, k))
            acc, ov2 = add(acc, p)
            flags.note(ov1 or ov2)
        if bias is not None:
            acc, ov = add(acc, self._read(bias, 0))
            flags.note(ov)
        if act is Activation.SWISH:
            acc = self.swish(acc, flags)
        if out is not None:
            self._write(out, 0, acc, flags)
        return VectorOpResult([acc], mac_cycles(length, act), flags)

    def softmax(self, x: Slice, length: int, out: Optional[Slice] = None) -> VectorOpResult:
        """Softmax of ``length`` elements, written back in place unless ``out`` is given."""
        if length < 1:
            raise ValueError("length must be >= 1")
        flags = Flags()
        exps = []
        total = FixedValue(0, self.fmt)
        for i in range(length):
            e = alu.exponential(self._read(x, i), self.taylor_terms)
            flags.note(e)
            exps.append(e.value)
            total, ov = add(total, e.value)
            flags.note(ov)
        recip = alu.divide(self.one, total)
        flags.note(recip)
        values = []
        for i, e in enumerate(exps):
            v, ov = mul(e, recip.value)
            flags.note(ov)
            values.append(v)
            self._write(out or x, i, v, flags)
        return VectorOpResult(values, softmax_cycles(length, self.fmt), flags)

    def layernorm(self, x: Slice, length: int, gamma: Slice, beta: Slice,
                  out: Optional[Slice] = None, eps: Optional[FixedValue] = None) -> VectorOpResult:
        if length < 2:
            raise ValueError("length must be >= 2")
        eps = eps or FixedValue(1, self.fmt)
        flags = Flags()
        n = FixedValue(length << self.fmt.frac_bits, self.fmt)
        xs = [self._read(x, i) for i in range(length)]

        total = FixedValue(0, self.fmt)
        for v in xs:
            total, ov = add(total, v)
            flags.note(ov)
        mean = alu.divide(total, n)
        flags.note(mean)

        centred = []
        ssum = FixedValue(0, self.fmt)
        for v in xs:
            d, ov = sub(v, mean.value)
            flags.note(ov)
            centred.append(d)
            sq, ov = mul(d, d)
            flags.note(ov)
            ssum, ov = add(ssum, sq)
            flags.note(ov)
        var = alu.divide(ssum, n)
        flags.note(var)
        var_eps, ov = add(var.value, eps)
        flags.note(ov)
        sigma = alu.square_root(var_eps)
        flags.note(sigma)
        inv = alu.divide(self.one, sigma.value)
        flags.note(inv)

        values = []
        for i, d in enumerate(centred):
            normed, ov1 = mul(d, inv.value)
            scaled, ov2 = mul(self._read(gamma, i), normed)
            v, ov3 = add(scaled, self._read(beta, i))
            flags.note(ov1 or ov2 or ov3)
            values.append(v)
            self._write(out or x, i, v, flags)
        return VectorOpResult(values, layernorm_cycles(length, self.fmt), flags)
