import numpy as np
import pytest

from sleepvit import kernels
from sleepvit.fixedpoint import COMPUTE_FORMAT, FixedValue
from sleepvit.memory import BankKind, MemorySystem, StorageFormat, TensorDescriptor
from sleepvit.vector import (
    Activation,
    Slice,
    VectorUnit,
    layernorm_cycles,
    layernorm_usage,
    mac_cycles,
    mac_usage,
    softmax_cycles,
    softmax_usage,
)

F = COMPUTE_FORMAT
ONE = 1 << F.frac_bits
Q88 = StorageFormat.of("Q8.8")


def make_mem(n=64):
    mem = MemorySystem()
    for i, name in enumerate(["a", "b", "x", "out", "gamma", "beta", "bias"]):
        mem.add_tensor(TensorDescriptor(name, i * 4 * n, n, Q88, BankKind.INTERMEDIATE))
    return mem


def put(mem, name, values):
    raw = np.floor(np.ldexp(np.asarray(values, dtype=np.float64), F.frac_bits)).astype(np.int64)
    mem.write_tensor(name, raw)
    return mem.read_tensor(name)


def vals(res):
    return np.array([v.raw for v in res.values])


# -- latency anchors ---------------------------------------------------------

def test_table_anchors():
    assert mac_cycles(64, Activation.NONE) == 72
    assert mac_cycles(64, Activation.LINEAR) == 76
    assert mac_cycles(64, Activation.SWISH) == 170
    assert softmax_cycles(64) == 1926
    assert layernorm_cycles(64) == 1943


@pytest.mark.parametrize("fn", [lambda n: mac_cycles(n), lambda n: mac_cycles(n, Activation.SWISH),
                                softmax_cycles, layernorm_cycles])
def test_latency_affine_in_length(fn):
    d = [fn(n + 1) - fn(n) for n in range(2, 100)]
    assert len(set(d)) == 1


def test_usage_credits_include_own_latency():
    assert mac_usage(64)["mac"] == 72
    assert softmax_usage(64)["softmax"] == 1926
    assert softmax_usage(64)["exponential"] == 64 * 24
    assert layernorm_usage(64)["layernorm"] == 1943
    assert layernorm_usage(64)["sqrt"] == 31


# -- MAC ---------------------------------------------------------------------

def test_mac_examples(rng):
    mem = make_mem()
    vu = VectorUnit(mem)
    b = put(mem, "b", rng.uniform(-2, 2, 64))
    put(mem, "a", np.zeros(64))
    r = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64)
    assert r.cycles == 72 and r.values[0].raw == 0
    for j in (0, 17, 63):
        onehot = np.zeros(64)
        onehot[j] = 1
        put(mem, "a", onehot)
        r = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64)
        assert r.values[0].raw == b[j]


def test_mac_swish_of_zero():
    mem = make_mem()
    vu = VectorUnit(mem)
    put(mem, "a", np.zeros(64))
    put(mem, "b", np.ones(64))
    put(mem, "bias", np.zeros(64))
    r = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64, Activation.SWISH, bias=Slice(mem["bias"]))
    assert r.values[0].raw == 0 and r.cycles == 170


def test_mac_bias_required_iff_activation():
    mem = make_mem()
    vu = VectorUnit(mem)
    a, b = Slice(mem["a"]), Slice(mem["b"])
    with pytest.raises(ValueError):
        vu.mac(a, b, 64, Activation.LINEAR)
    with pytest.raises(ValueError):
        vu.mac(a, b, 64, Activation.NONE, bias=Slice(mem["bias"]))
    with pytest.raises(ValueError):
        vu.mac(a, b, 0)


@pytest.mark.parametrize("act", list(Activation))
def test_mac_matches_kernels(rng, act):
    mem = make_mem()
    vu = VectorUnit(mem)
    for _ in range(5):
        a = put(mem, "a", rng.uniform(-3, 3, 64))
        b = put(mem, "b", rng.uniform(-3, 3, 64))
        bias = put(mem, "bias", rng.uniform(-1, 1, 64))
        r = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64, act,
                   bias=None if act is Activation.NONE else Slice(mem["bias"], 5),
                   out=Slice(mem["out"], 3))
        d, _ = kernels.dot(a, b)
        if act is not Activation.NONE:
            d, _ = kernels.add(d, bias[5])
        if act is Activation.SWISH:
            d, _ = kernels.swish(np.array([d]))
            d = d[0]
        assert r.values[0].raw == d
        stored, _ = kernels.cast(np.array([d]), F, Q88.qformat)
        assert mem.read_stored("out", 3, 1)[0] == stored[0]


def test_mac_linearity(rng):
    mem = make_mem()
    vu = VectorUnit(mem)
    a = rng.uniform(-1, 1, 64)
    put(mem, "b", rng.uniform(-1, 1, 64))
    put(mem, "a", a)
    base = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64).values[0]
    put(mem, "a", 2 * np.floor(a * 256) / 256)
    doubled = vu.mac(Slice(mem["a"]), Slice(mem["b"]), 64).values[0]
    assert abs(doubled.raw - 2 * base.raw) <= 2 * 64


# -- softmax -----------------------------------------------------------------

def test_softmax_uniform():
    mem = make_mem()
    put(mem, "x", np.full(64, 0.75))
    r = VectorUnit(mem).softmax(Slice(mem["x"]), 64, out=Slice(mem["out"]))
    v = vals(r)
    assert r.cycles == 1926 and len(set(v.tolist())) == 1
    assert abs(v[0] / ONE - 1 / 64) <= 64 * 2.0**-21


def test_softmax_dominant_element():
    mem = make_mem(8)
    put(mem, "x", [0] + [-100] * 7)
    r = VectorUnit(mem).softmax(Slice(mem["x"]), 8)
    v = vals(r) / ONE
    assert abs(v[0] - 1) < 1e-5 and np.all(v[1:] < 1e-5)


def test_softmax_in_place_and_matches_kernel(rng):
    mem = make_mem()
    x = put(mem, "x", rng.uniform(-4, 4, 64))
    r = VectorUnit(mem).softmax(Slice(mem["x"]), 64)
    k, ov, dz = kernels.softmax(x)
    assert np.array_equal(vals(r), k) and not ov and not dz
    stored, _ = kernels.cast(k, F, Q88.qformat)
    assert np.array_equal(mem.read_stored("x"), stored)


def test_softmax_all_underflow_flags_divide_by_zero():
    mem = make_mem(4)
    put(mem, "x", [-100] * 4)
    r = VectorUnit(mem).softmax(Slice(mem["x"]), 4)
    assert r.flags.divide_by_zero


# -- LayerNorm ---------------------------------------------------------------

def test_layernorm_constant_vector_is_zero():
    mem = make_mem()
    put(mem, "x", np.full(64, 3.5))
    put(mem, "gamma", np.ones(64))
    put(mem, "beta", np.zeros(64))
    r = VectorUnit(mem).layernorm(Slice(mem["x"]), 64, Slice(mem["gamma"]), Slice(mem["beta"]),
                                  out=Slice(mem["out"]))
    assert r.cycles == 1943 and not np.any(vals(r)) and not r.flags.any


def test_layernorm_plus_minus_one():
    mem = make_mem()
    put(mem, "x", np.tile([1.0, -1.0], 32))
    put(mem, "gamma", np.ones(64))
    put(mem, "beta", np.zeros(64))
    r = VectorUnit(mem).layernorm(Slice(mem["x"]), 64, Slice(mem["gamma"]), Slice(mem["beta"]))
    v = vals(r) / ONE
    assert np.allclose(v, np.tile([1.0, -1.0], 32), atol=2.0**-18)


def test_layernorm_matches_kernel_and_statistics(rng):
    mem = make_mem()
    x = put(mem, "x", rng.uniform(-3, 3, 64))
    g = put(mem, "gamma", np.ones(64))
    b = put(mem, "beta", np.zeros(64))
    r = VectorUnit(mem).layernorm(Slice(mem["x"]), 64, Slice(mem["gamma"]), Slice(mem["beta"]),
                                  out=Slice(mem["out"]))
    k, fl = kernels.layernorm(x, g, b)
    assert np.array_equal(vals(r), k) and not fl
    v = k / ONE
    assert abs(v.mean()) <= 64 * 2.0**-21
    assert abs(v.var() - 1) < 0.1


def test_layernorm_rejects_short_vectors():
    mem = make_mem()
    with pytest.raises(ValueError):
        VectorUnit(mem).layernorm(Slice(mem["x"]), 1, Slice(mem["gamma"]), Slice(mem["beta"]))
