import math

import numpy as np
import pytest

from sleepvit import oracle
from sleepvit.config import ModelConfig, weight_shapes
from sleepvit.fixedpoint import QFormat
from sleepvit.model import (
    build_memory,
    fill_weights,
    random_epochs,
    random_weights,
    stored_weights,
)

F = 2.0**-21


@pytest.fixture(scope="module")
def weights():
    mem = build_memory(ModelConfig())
    fill_weights(mem, random_weights(mem, 0, 0.25))
    return stored_weights(mem)


def test_zero_weights_uniform():
    w = {n: np.zeros(s) for n, s, _ in weight_shapes(ModelConfig())}
    p = oracle.reference_infer(random_epochs(0, 1)[0], w)
    assert np.allclose(p, 0.25, atol=1e-15)


def test_reference_probs_sum_to_one(weights):
    for e in random_epochs(3, 5):
        assert abs(oracle.reference_infer(e, weights).sum() - 1) < 1e-12


def test_reference_building_blocks():
    z = np.array([1.0, 2.0, 3.0])
    assert np.allclose(oracle.softmax(z), np.exp(z) / np.exp(z).sum())
    x = np.array([[1.0, -1.0, 1.0, -1.0]])
    assert np.allclose(oracle.layernorm(x, np.ones(4), np.zeros(4)), x, atol=1e-6)
    assert oracle.swish(np.array([0.0]))[0] == 0.0
    assert oracle.normalize(np.array([0, 32768, 49152])).tolist() == [-1.0, 0.0, 0.5]


def test_encoder_pass_matches_oracle(engine, weights):
    cfg = ModelConfig()
    worst = 0.0
    for e in random_epochs(1, 3):
        engine.load_input(e)
        engine.patch_embed()
        tokens = engine._load("stream") * F
        engine.encoder_layer(0)
        ref = oracle.encoder_layer(tokens, weights, cfg)
        worst = max(worst, float(np.abs(engine._load("stream") * F - ref).max()))
    assert worst <= 2.0**-5, f"max-abs error {worst:.4f}"


def test_patch_embedding_matches_oracle(engine, weights):
    e = random_epochs(1, 1)[0]
    engine.load_input(e)
    engine.patch_embed()
    ref = oracle.patch_embed(oracle.normalize(e), weights, ModelConfig())
    # input stored at 2^-7 plus the Q8.8 token grid
    bound = 64 * 0.25 * 2.0**-7 + 2.0**-8
    assert np.abs(engine._load("stream") * F - ref).max() <= bound


# -- width reduction ---------------------------------------------------------

@pytest.mark.parametrize("fmt,bits,expected", [
    ("Q2.6", 8, "Q2.6"), ("Q5.3", 8, "Q5.3"), ("Q8.8", 8, "Q8.8"),
    ("Q2.6", 4, "Q1.3"), ("Q5.3", 4, "Q3.1"), ("Q1.7", 2, "Q1.1"),
    ("Q2.6", 16, "Q4.12"), ("Q8.8", 16, "Q16.16"), ("Q3.5", 6, "Q2.4"),
])
def test_reduce_format(fmt, bits, expected):
    assert str(oracle.reduce_format(QFormat.parse(fmt), bits)) == expected


def test_reduce_format_rejects_tiny_widths(weights):
    with pytest.raises(ValueError):
        oracle.reduce_format(QFormat(2, 6), 1)
    with pytest.raises(ValueError):
        oracle.sweep_bitwidths(weights, random_epochs(0, 1), [1], [8])


def test_sweep_curve(weights):
    epochs = random_epochs(1, 200)
    pts = {}
    for wb, ab in [(2, 2), (4, 4), (8, 8), (16, 16), (8, 16), (16, 8)]:
        (p,) = oracle.sweep_bitwidths(weights, epochs, [wb], [ab])
        assert 0.0 <= p.agreement <= 1.0 and p.output_mse >= 0
        pts[wb, ab] = p
    assert pts[16, 16].agreement >= 0.99
    assert pts[2, 2].agreement < pts[8, 8].agreement
    diag = [pts[b, b].agreement for b in (2, 4, 8, 16)]
    assert all(b >= a - 0.02 for a, b in zip(diag, diag[1:]))
    assert pts[8, 16].agreement >= pts[8, 8].agreement - 0.02
    assert pts[16, 8].agreement >= pts[8, 8].agreement - 0.02
    csv = oracle.sweep_csv(list(pts.values()))
    assert csv.splitlines()[0] == "weight_bits,act_bits,agreement,mse"
    assert len(csv.splitlines()) == 7


# -- exponential study ---------------------------------------------------------

def test_exp_table_shape():
    rows = oracle.exp_error_table(range(1, 7))
    real = [r.real_max for r in rows]
    fixed = [r.fixed_max for r in rows]
    assert all(b < a for a, b in zip(real, real[1:]))
    assert all(b <= a for a, b in zip(fixed, fixed[1:]))
    for r in rows:
        assert r.fixed_mean <= r.fixed_max and r.real_mean <= r.real_max


def test_exp_error_zero_at_origin():
    for t in range(1, 9):
        (row,) = oracle.exp_error_table([t], grid=1 + 2, lo=0.0, hi=0.0)
        assert row.fixed_max == 0.0 and row.real_max == 0.0


def test_exp_real_scheme_converges():
    x = np.linspace(-1, 1, 101)
    assert np.allclose(oracle.taylor_exp_real(x, 12), np.exp(x), rtol=1e-12)
    assert oracle.taylor_exp_real(np.array([0.0]), 1)[0] == 1.0


def test_exp_table_rejects_bad_terms():
    for bad in ([0, 1], [9], []):
        with pytest.raises(ValueError):
            oracle.exp_error_table(bad)
