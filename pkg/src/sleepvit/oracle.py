"""Double-precision reference of the same graph, and the bit-width sweep."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .config import ModelConfig, build_tensor_map
from .fixedpoint import COMPUTE_FORMAT, QFormat
from .memory import (
    INTERMEDIATE_BANKS,
    INTERMEDIATE_WORDS_PER_BANK,
    WEIGHT_BANKS,
    WEIGHT_WORDS_PER_BANK,
    BankKind,
    MemorySystem,
    StorageFormat,
)
from .model import ADC_MIDPOINT, Engine, as_epoch, fill_weights

LN_EPS = 2.0 ** -21


def normalize(epoch) -> np.ndarray:
    return (np.asarray(epoch, dtype=np.float64) - ADC_MIDPOINT) / ADC_MIDPOINT


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def swish(u: np.ndarray) -> np.ndarray:
    return u / (1.0 + np.exp(-u))


def patch_embed(x: np.ndarray, w: Mapping[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    patches = x.reshape(cfg.num_patches, cfg.patch_len)
    tok = patches @ w["patch.w"].T + w["patch.b"]
    if cfg.use_cls_token:
        tok = np.vstack([w["cls"][None, :], tok])
    return tok + w["pos"]


def encoder_layer(tokens: np.ndarray, w: Mapping[str, np.ndarray], cfg: ModelConfig,
                  layer: int = 0) -> np.ndarray:
    p = f"l{layer}."
    hd = cfg.head_dim
    h = layernorm(tokens, w[p + "ln1.gamma"], w[p + "ln1.beta"])
    q = h @ w[p + "attn.wq"].T + w[p + "attn.bq"]
    k = h @ w[p + "attn.wk"].T + w[p + "attn.bk"]
    v = h @ w[p + "attn.wv"].T + w[p + "attn.bv"]
    heads = []
    for i in range(cfg.num_heads):
        c = slice(i * hd, (i + 1) * hd)
        scores = q[:, c] @ k[:, c].T / math.sqrt(hd)
        heads.append(softmax(scores) @ v[:, c])
    t1 = tokens + np.hstack(heads) @ w[p + "attn.wo"].T + w[p + "attn.bo"]
    h2 = layernorm(t1, w[p + "ln2.gamma"], w[p + "ln2.beta"])
    hidden = swish(h2 @ w[p + "mlp.w1"].T + w[p + "mlp.b1"])
    return t1 + hidden @ w[p + "mlp.w2"].T + w[p + "mlp.b2"]


def classify(tokens: np.ndarray, w: Mapping[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    feat = tokens[0] if cfg.use_cls_token else tokens.mean(axis=0)
    return softmax(w["head.w"] @ feat + w["head.b"])


def reference_infer(epoch, weights: Mapping[str, np.ndarray],
                    config: Optional[ModelConfig] = None) -> np.ndarray:
    """Class probabilities of the unquantized graph in IEEE double precision."""
    cfg = config or ModelConfig()
    tok = patch_embed(normalize(as_epoch(epoch, cfg.samples)), weights, cfg)
    for layer in range(cfg.num_layers):
        tok = encoder_layer(tok, weights, cfg, layer)
    return classify(tok, weights, cfg)


# -- bit-width sweep --------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    weight_bits: int
    activation_bits: int
    agreement: float
    output_mse: float


def reduce_format(fmt: QFormat, bits: int, nominal_bits: int = 8) -> QFormat:
    """Scale a format to ``bits`` per nominal single-width word.

    The integer field keeps its share of the word, rounded half up and at
    least one bit (the sign); the fraction takes the rest. A double-width
    format scales to twice ``bits``.
    """
    if bits < 2:
        raise ValueError("widths below 2 bits are not supported")
    total = fmt.total_bits * bits // nominal_bits
    int_bits = max(1, math.floor(fmt.int_bits * bits / nominal_bits + 0.5))
    int_bits = min(int_bits, total)
    return QFormat(int_bits, total - int_bits)


def reduced_formats(cfg: ModelConfig, weight_bits: int, act_bits: int) -> dict[str, StorageFormat]:
    out = {}
    for d in build_tensor_map(cfg):
        bits = weight_bits if d.bank_set is BankKind.WEIGHTS else act_bits
        out[d.name] = StorageFormat.of(reduce_format(d.storage.qformat, bits))
    return out


def sized_memory(cfg: ModelConfig, formats: Mapping[str, StorageFormat]) -> MemorySystem:
    """Memory big enough for ``formats`` (wider sweeps outgrow the real SRAM)."""
    descs = build_tensor_map(cfg, formats=formats)
    need = {k: max((d.end for d in descs if d.bank_set is k), default=0) for k in BankKind}
    mem = MemorySystem(
        weight_words=max(WEIGHT_WORDS_PER_BANK, -(-need[BankKind.WEIGHTS] // WEIGHT_BANKS)),
        intermediate_words=max(INTERMEDIATE_WORDS_PER_BANK,
                               -(-need[BankKind.INTERMEDIATE] // INTERMEDIATE_BANKS)),
        strict_formats=False,
    )
    mem.add_tensors(descs)
    return mem


def sweep_engine(weights: Mapping[str, np.ndarray], cfg: ModelConfig,
                 weight_bits: int, act_bits: int) -> Engine:
    mem = sized_memory(cfg, reduced_formats(cfg, weight_bits, act_bits))
    fill_weights(mem, dict(weights))
    return Engine(mem, cfg)


def oracle_labels(weights: Mapping[str, np.ndarray], epochs: Iterable,
                  cfg: ModelConfig) -> np.ndarray:
    return np.array([reference_infer(e, weights, cfg) for e in epochs])


def _sweep_point(args) -> SweepPoint:
    weights, cfg, wb, ab, epochs, ref = args
    eng = sweep_engine(weights, cfg, wb, ab)
    probs = np.array([eng.infer(e).class_probs for e in epochs])
    agree = float(np.mean(probs.argmax(axis=1) == ref.argmax(axis=1)))
    mse = float(np.mean((probs - ref) ** 2))
    return SweepPoint(wb, ab, agree, mse)


def sweep_bitwidths(weights: Mapping[str, np.ndarray], epochs: Sequence,
                    weight_bits_range: Iterable[int], act_bits_range: Iterable[int],
                    config: Optional[ModelConfig] = None,
                    workers: int = 1) -> list[SweepPoint]:
    """Argmax agreement and probability MSE against the oracle per width pair.

    ``weights`` are real values; each point re-quantizes them into the
    reduced formats. Points are independent and may run in parallel.
    """
    cfg = config or ModelConfig()
    wbs, abs_ = list(weight_bits_range), list(act_bits_range)
    for b in wbs + abs_:
        if b < 2:
            raise ValueError("widths below 2 bits are not supported")
    epochs = [as_epoch(e, cfg.samples) for e in epochs]
    ref = oracle_labels(weights, epochs, cfg)
    jobs = [(dict(weights), cfg, wb, ab, epochs, ref) for wb in wbs for ab in abs_]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    lines = ["weight_bits,act_bits,agreement,mse"]
    lines += [f"{p.weight_bits},{p.activation_bits},{p.agreement!r},{p.output_mse!r}"
              for p in points]
    return "\n".join(lines) + "\n"


# -- exponential approximation study --------------------------------------

@dataclass(frozen=True)
class ExpErrorRow:
    terms: int
    fixed_max: float
    fixed_mean: float
    real_max: float
    real_mean: float


def taylor_exp_real(x: np.ndarray, terms: int) -> np.ndarray:
    """The unit's range-reduced Taylor scheme in unquantized arithmetic."""
    z = np.asarray(x, dtype=np.float64) / math.log(2.0)
    i = np.floor(z)
    f = (z - i) * math.log(2.0)
    p = np.zeros_like(f)
    for k in reversed(range(terms)):
        p = p * f / (k + 1) + 1.0
    return np.ldexp(p, i.astype(np.int64))


def exp_error_table(terms_range: Iterable[int], grid: int = 2001, lo: float = -1.0,
                    hi: float = 1.0, fmt: QFormat = COMPUTE_FORMAT) -> list[ExpErrorRow]:
    """Max/mean |approx - e**x| over an even grid, fixed-point and real-valued."""
    terms = list(terms_range)
    if not terms or min(terms) < 1 or max(terms) > 8:
        raise ValueError("terms must lie within 1..8")
    if grid < 2:
        raise ValueError("grid needs at least 2 points")
    raw = np.floor(np.ldexp(np.linspace(lo, hi, grid), fmt.frac_bits)).astype(np.int64)
    x = np.ldexp(raw.astype(np.float64), -fmt.frac_bits)
    exact = np.exp(x)
    rows = []
    for t in terms:
        fx, _ = kernels.exponential(raw, fmt, t)
        e_fix = np.abs(np.ldexp(fx.astype(np.float64), -fmt.frac_bits) - exact)
        e_real = np.abs(taylor_exp_real(x, t) - exact)
        rows.append(ExpErrorRow(t, float(e_fix.max()), float(e_fix.mean()),
                                float(e_real.max()), float(e_real.mean())))
    return rows


def exp_error_csv(rows: Sequence[ExpErrorRow]) -> str:
    lines = ["terms,fixed_max_err,fixed_mean_err,real_max_err,real_mean_err"]
    lines += [f"{r.terms},{r.fixed_max!r},{r.fixed_mean!r},{r.real_max!r},{r.real_mean!r}"
              for r in rows]
    return "\n".join(lines) + "\n"
