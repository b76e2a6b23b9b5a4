"""SleepViT inference as a static schedule over the shared compute units.

The engine walks a fixed sequence of unit invocations, the software analogue
of the accelerator's instruction-less controller: patch embedding, one or
more pre-norm encoder layers, the classification head, the final softmax
and the rolling average over the last few predictions. Every intermediate
tensor round-trips through the banked memory model, so storage quantization
happens exactly where the hardware applies it.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .alu import divide, divider_latency, sqrt_latency, square_root
from .config import EPOCH_SAMPLES, ModelConfig, build_tensor_map
from .fixedpoint import COMPUTE_FORMAT, FixedValue, QFormat
from .memory import BankKind, MemorySystem
from .profiling import ActivityTrace
from .vector import (
    Activation,
    layernorm_usage,
    mac_usage,
    softmax_usage,
)

ADC_MIDPOINT = 32768
ADC_FRAC_BITS = 15


class Stage(enum.IntEnum):
    WAKE = 0
    LIGHT = 1
    DEEP = 2
    REM = 3


@dataclass(frozen=True)
class FsmTiming:
    """Controller cycles spent around unit calls (not part of any unit's latency)."""

    dispatch: int = 1  # start/done handshake per unit call
    read: int = 1
    write: int = 1
    alu: int = 1  # single-cycle add/mul issued directly by the controller


def as_epoch(samples, n: int = EPOCH_SAMPLES) -> np.ndarray:
    """Validate one epoch of 16-bit unsigned ADC samples."""
    arr = np.asarray(samples)
    if arr.shape != (n,):
        raise ValueError(f"epoch must hold exactly {n} samples, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
        raise ValueError("samples must be unsigned 16-bit")
    return arr.astype(np.int64)


def normalize_input(epoch, fmt: QFormat = COMPUTE_FORMAT) -> np.ndarray:
    """Map u16 samples affinely onto [-1, 1) as compute-format raw codes.

    ``(u - 32768) / 32768`` is exact: it is ``u`` with the MSB flipped read as
    Q1.15, widened to the compute format.
    """
    u = np.asarray(epoch, dtype=np.int64)
    centred = u - ADC_MIDPOINT
    shift = fmt.frac_bits - ADC_FRAC_BITS
    return centred << shift if shift >= 0 else centred >> -shift


class RollingFilter:
    """Elementwise mean of the most recent ``depth`` probability vectors."""

    def __init__(self, depth: int = 3, fmt: QFormat = COMPUTE_FORMAT):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.fmt = fmt
        self.history: deque[np.ndarray] = deque(maxlen=depth)

    def __len__(self) -> int:
        return len(self.history)

    def push(self, probs_raw: np.ndarray) -> np.ndarray:
        self.history.append(np.asarray(probs_raw, dtype=np.int64).copy())
        return self.output()

    def output(self) -> np.ndarray:
        if not self.history:
            raise ValueError("filter is empty")
        total = self.history[0]
        for p in list(self.history)[1:]:
            total, _ = kernels.add(total, p, self.fmt)
        count = np.full(total.shape, len(self.history) << self.fmt.frac_bits, dtype=np.int64)
        mean, _, _ = kernels.divide(total, count, self.fmt)
        return mean

    def reset(self) -> None:
        self.history.clear()


@dataclass
class InferenceOutput:
    class_probs_raw: np.ndarray
    filtered_probs_raw: np.ndarray
    stage: Stage
    raw_stage: Stage  # argmax of the unfiltered probabilities
    total_cycles: int
    trace: ActivityTrace
    frac_bits: int = COMPUTE_FORMAT.frac_bits

    @property
    def class_probs(self) -> np.ndarray:
        return np.ldexp(self.class_probs_raw.astype(np.float64), -self.frac_bits)

    @property
    def filtered_probs(self) -> np.ndarray:
        return np.ldexp(self.filtered_probs_raw.astype(np.float64), -self.frac_bits)


def argmax_first(raw: np.ndarray) -> int:
    return int(np.argmax(raw))


def build_memory(cfg: ModelConfig, **kwargs) -> MemorySystem:
    """An empty memory system holding the default address map for ``cfg``."""
    strict = kwargs.pop("strict_formats", True)
    mem = MemorySystem(strict_formats=strict)
    mem.add_tensors(build_tensor_map(cfg, **kwargs))
    return mem


class Engine:
    """One accelerator instance: memory, weights and a static schedule.

    Not shareable between threads during a run; use one engine per worker.
    """

    def __init__(self, memory: MemorySystem, config: Optional[ModelConfig] = None,
                 timing: FsmTiming = FsmTiming()):
        self.cfg = config or ModelConfig()
        self.mem = memory
        self.fmt = memory.compute_format
        self.timing = timing
        self.terms = self.cfg.taylor_terms
        self._check_map()
        self.reload_weights()
        self.trace = ActivityTrace()

    def _check_map(self) -> None:
        expected = {d.name: d for d in build_tensor_map(self.cfg)}
        for name, ref in expected.items():
            if name not in self.mem.tensors:
                raise ValueError(f"address map lacks tensor {name!r}")
            got = self.mem.tensors[name]
            if got.shape != ref.shape or got.bank_set is not ref.bank_set:
                raise ValueError(f"tensor {name!r} has shape {got.shape}, expected {ref.shape}")

    def reload_weights(self) -> None:
        self.w = {}
        for name, d in self.mem.tensors.items():
            if d.bank_set is BankKind.WEIGHTS:
                self.w[name] = self.mem.read_tensor(d).reshape(d.shape)

    # -- helpers -------------------------------------------------------------

    def _charge(self, phase: str, cycles: int, busy=None, count: int = 1) -> None:
        self.trace.charge(phase, cycles, busy, count)

    def _call(self, phase: str, unit: str, usage: dict, overhead: int, count: int = 1,
              extra: Optional[dict] = None) -> None:
        """Charge ``count`` calls of ``unit``: its latency plus controller overhead."""
        busy = _merge(usage, extra or {})
        self.trace.charge(phase, usage[unit] + overhead, busy, count)

    def _flag(self, phase: str, op: str, mask, kind: str = "overflow") -> None:
        self.trace.flag(phase, op, kind, int(np.count_nonzero(mask)))

    def _store(self, phase: str, name: str, raw: np.ndarray, start: int = 0) -> None:
        ov = self.mem.write_tensor(name, raw, start)
        self._flag(phase, f"store:{name}", ov)

    def _load(self, name: str) -> np.ndarray:
        d = self.mem.tensors[name]
        return self.mem.read_tensor(d).reshape(d.shape)

    def _roundtrip(self, phase: str, name: str, raw: np.ndarray) -> np.ndarray:
        """Quantize through a reused buffer's storage format; the last row stays in memory."""
        d = self.mem.tensors[name]
        stored, ov = kernels.cast(raw, self.fmt, d.storage.qformat)
        self._flag(phase, f"store:{name}", ov)
        back, _ = kernels.cast(stored, d.storage.qformat, self.fmt)
        self.mem.write_stored(d, np.asarray(stored, dtype=np.int64).reshape(-1, d.length)[-1])
        return back

    def _linear(self, x: np.ndarray, w: np.ndarray, b: np.ndarray):
        acc, fl = kernels.dot(x[..., :, None, :], w[None, :, :], self.fmt)
        acc, o = kernels.add(acc, b, self.fmt)
        return acc, fl | o

    # -- schedule ------------------------------------------------------------

    def load_input(self, epoch) -> None:
        cfg, t = self.cfg, self.timing
        raw = normalize_input(as_epoch(epoch, cfg.samples), self.fmt)
        self._store("embed", "input", raw)
        self._charge("embed", t.read + t.write, count=cfg.samples)

    def patch_embed(self) -> None:
        cfg, t = self.cfg, self.timing
        d, off = cfg.d_model, int(cfg.use_cls_token)
        x = self._load("input").reshape(cfg.num_patches, cfg.patch_len)
        acc, fl = self._linear(x, self.w["patch.w"], self.w["patch.b"])
        pos = self.w["pos"]
        tok, o = kernels.add(acc, pos[off:], self.fmt)
        self._flag("embed", "mac:patch", fl | o)
        self._store("embed", "stream", tok, start=off * d)
        self._call("embed", "mac", mac_usage(cfg.patch_len, Activation.LINEAR, self.terms),
                   t.dispatch + t.read + t.alu + t.write, cfg.num_patches * d, {"adder": 1})
        if off:
            cls, o = kernels.add(self.w["cls"], pos[0], self.fmt)
            self._flag("embed", "add:cls", o)
            self._store("embed", "stream", cls)
            self._charge("embed", 2 * t.read + t.alu + t.write, {"adder": 1}, count=d)

    def _layernorm(self, phase: str, prefix: str) -> None:
        cfg, t = self.cfg, self.timing
        x = self._load("stream")
        y, fl = kernels.layernorm(x, self.w[prefix + ".gamma"], self.w[prefix + ".beta"], self.fmt)
        self._flag(phase, "layernorm", fl)
        self._store(phase, "ln_out", y)
        self._call(phase, "layernorm", layernorm_usage(cfg.d_model), t.dispatch, cfg.num_tokens)

    def attention(self, layer: int) -> None:
        cfg, t = self.cfg, self.timing
        p = f"l{layer}."
        n_tok, d, hd = cfg.num_tokens, cfg.d_model, cfg.head_dim
        self._layernorm("attention", p + "ln1")

        h = self._load("ln_out")
        outs = {}
        for name in ("q", "k", "v"):
            y, fl = self._linear(h, self.w[p + "attn.w" + name], self.w[p + "attn.b" + name])
            self._flag("attention", f"mac:{name}", fl)
            outs[name] = y
        self._store("attention", "q", outs["q"])
        self._store("attention", "k", outs["k"])
        self._store("attention", "v_t", outs["v"].T)
        self._call("attention", "mac", mac_usage(d, Activation.LINEAR), t.dispatch + t.write,
                   3 * n_tok * d)

        # 1/sqrt(head_dim) once, reused as a multiplier for every score
        root = square_root(FixedValue(hd << self.fmt.frac_bits, self.fmt))
        scale = divide(FixedValue(1 << self.fmt.frac_bits, self.fmt), root.value)
        self._charge("attention", 2 * t.dispatch + sqrt_latency(self.fmt) + divider_latency(self.fmt),
                     {"sqrt": sqrt_latency(self.fmt), "divider": divider_latency(self.fmt)})

        q, k, vt = self._load("q"), self._load("k"), self._load("v_t")
        attn = np.zeros((n_tok, d), dtype=q.dtype)
        for head in range(cfg.num_heads):
            cols = slice(head * hd, (head + 1) * hd)
            s, fl = kernels.dot(q[:, None, cols], k[None, :, cols], self.fmt)
            s, o = kernels.mul(s, np.asarray(scale.value.raw), self.fmt)
            self._flag("attention", "mac:scores", fl | o)
            s = self._roundtrip("attention", "score_row", s)
            probs, ov, dz = kernels.softmax(s, self.fmt, self.terms)
            self._flag("attention", "softmax", ov)
            self._flag("attention", "softmax", dz, "divide_by_zero")
            probs = self._roundtrip("attention", "attn_prob", probs)
            a, fl = kernels.dot(probs[:, None, :], vt[None, cols, :], self.fmt)
            self._flag("attention", "mac:av", fl)
            attn[:, cols] = a
        self._store("attention", "attn_out", attn)

        heads = cfg.num_heads
        self._call("attention", "mac", mac_usage(hd), t.dispatch + t.alu + t.write,
                   heads * n_tok * n_tok, {"multiplier": 1})
        self._call("attention", "softmax", softmax_usage(n_tok, self.terms), t.dispatch,
                   heads * n_tok)
        self._call("attention", "mac", mac_usage(n_tok), t.dispatch + t.write,
                   heads * n_tok * hd)

        a = self._load("attn_out")
        o, fl = self._linear(a, self.w[p + "attn.wo"], self.w[p + "attn.bo"])
        res, ov = kernels.add(self._load("stream"), o, self.fmt)
        self._flag("attention", "mac:proj", fl | ov)
        self._store("attention", "stream", res)
        self._call("attention", "mac", mac_usage(d, Activation.LINEAR),
                   t.dispatch + t.read + t.alu + t.write, n_tok * d, {"adder": 1})

    def mlp(self, layer: int) -> None:
        cfg, t = self.cfg, self.timing
        p = f"l{layer}."
        n_tok, d, m = cfg.num_tokens, cfg.d_model, cfg.mlp_dim
        self._layernorm("mlp", p + "ln2")

        h = self._load("ln_out")
        u, fl = self._linear(h, self.w[p + "mlp.w1"], self.w[p + "mlp.b1"])
        act, fa = kernels.swish(u, self.fmt, self.terms)
        self._flag("mlp", "mac:mlp1", fl | fa)
        self._store("mlp", "mlp_hidden", act)
        self._call("mlp", "mac", mac_usage(d, Activation.SWISH, self.terms),
                   t.dispatch + t.write, n_tok * m)

        g = self._load("mlp_hidden")
        o, fl = self._linear(g, self.w[p + "mlp.w2"], self.w[p + "mlp.b2"])
        res, ov = kernels.add(self._load("stream"), o, self.fmt)
        self._flag("mlp", "mac:mlp2", fl | ov)
        self._store("mlp", "stream", res)
        self._call("mlp", "mac", mac_usage(m, Activation.LINEAR),
                   t.dispatch + t.read + t.alu + t.write, n_tok * d, {"adder": 1})

    def encoder_layer(self, layer: int = 0) -> None:
        self.attention(layer)
        self.mlp(layer)

    def classify(self) -> np.ndarray:
        cfg, t = self.cfg, self.timing
        d, c = cfg.d_model, cfg.num_classes
        stream = self._load("stream")
        if cfg.use_cls_token:
            feat = stream[0]
        else:
            n = stream.shape[0]
            total = np.zeros(d, dtype=stream.dtype)
            for row in stream:
                total, o = kernels.add(total, row, self.fmt)
                self._flag("head", "pool", o)
            count = np.full(d, n << self.fmt.frac_bits, dtype=stream.dtype)
            mean, o, _ = kernels.divide(total, count, self.fmt)
            self._flag("head", "pool", o)
            self._store("head", "pooled", mean)
            feat = self._load("pooled")
            self._charge("head", n * (t.read + t.alu) + t.dispatch + divider_latency(self.fmt)
                         + t.write, {"adder": n, "divider": divider_latency(self.fmt)}, count=d)
        logits, fl = self._linear(feat[None, :], self.w["head.w"], self.w["head.b"])
        self._flag("head", "mac:head", fl)
        self._store("head", "logits", logits[0])
        self._call("head", "mac", mac_usage(d, Activation.LINEAR), t.dispatch + t.write, c)

        probs, ov, dz = kernels.softmax(self._load("logits"), self.fmt, self.terms)
        self._flag("head", "softmax", ov)
        self._flag("head", "softmax", dz, "divide_by_zero")
        # written back in place like every softmax; the filter and argmax
        # take the unit's compute-format output directly
        self.mem.write_tensor("logits", probs)
        self._call("head", "softmax", softmax_usage(c, self.terms), t.dispatch)
        return probs

    def run(self, epoch) -> np.ndarray:
        """One full pass over an epoch; returns compute-format class probabilities."""
        self.trace = ActivityTrace()
        self.load_input(epoch)
        self.patch_embed()
        for layer in range(self.cfg.num_layers):
            self.encoder_layer(layer)
        return self.classify()

    def infer(self, epoch, state: Optional[RollingFilter] = None) -> InferenceOutput:
        probs = self.run(epoch)
        c, t = self.cfg.num_classes, self.timing
        if state is not None:
            k = len(state.history) + 1 if len(state.history) < state.depth else state.depth
            filtered = state.push(probs)
            self._charge("head", (k - 1) * t.alu + t.dispatch + divider_latency(self.fmt),
                         {"adder": k - 1, "divider": divider_latency(self.fmt)}, count=c)
        else:
            filtered = probs.copy()
        self._charge("head", t.alu, count=c)  # argmax compare chain
        return InferenceOutput(
            class_probs_raw=np.asarray(probs, dtype=np.int64),
            filtered_probs_raw=np.asarray(filtered, dtype=np.int64),
            stage=Stage(argmax_first(filtered)),
            raw_stage=Stage(argmax_first(probs)),
            total_cycles=self.trace.total_cycles,
            trace=self.trace,
            frac_bits=self.fmt.frac_bits,
        )

    def infer_stream(self, epochs: Iterable, use_filter: bool = True) -> list[InferenceOutput]:
        state = RollingFilter(self.cfg.avg_depth, self.fmt) if use_filter else None
        return [self.infer(e, state) for e in epochs]


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v
    return out


# -- weights --------------------------------------------------------------

def weight_names(memory: MemorySystem) -> list[str]:
    return [n for n, d in memory.tensors.items() if d.bank_set is BankKind.WEIGHTS]


def fill_weights(memory: MemorySystem, values: dict[str, np.ndarray]) -> None:
    """Quantize real-valued weights into their storage formats (floor, saturate)."""
    fmt = memory.compute_format
    for name in weight_names(memory):
        d = memory.tensors[name]
        v = np.asarray(values[name], dtype=np.float64).reshape(-1)
        if v.size != d.length:
            raise ValueError(f"{name}: got {v.size} values, expected {d.length}")
        raw = kernels.as_raw(np.floor(np.ldexp(v, fmt.frac_bits)).astype(np.int64), fmt)
        memory.write_tensor(d, raw)


def random_weights(memory: MemorySystem, seed: int, scale: float = 0.25) -> dict[str, np.ndarray]:
    """I.i.d. uniform [-scale, scale] values for every weight tensor, in address order."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    rng = np.random.default_rng(seed)
    out = {}
    for name in weight_names(memory):
        d = memory.tensors[name]
        out[name] = rng.uniform(-scale, scale, size=d.shape) if scale > 0 else np.zeros(d.shape)
    return out


def stored_weights(memory: MemorySystem) -> dict[str, np.ndarray]:
    """Real values of the weights as held in memory (exact dyadic floats)."""
    out = {}
    for name in weight_names(memory):
        d = memory.tensors[name]
        raw = memory.read_stored(d).reshape(d.shape)
        out[name] = np.ldexp(raw.astype(np.float64), -d.storage.qformat.frac_bits)
    return out


def random_epochs(seed: int, n: int, samples: int = EPOCH_SAMPLES) -> np.ndarray:
    """Uniform u16 noise epochs, shape (n, samples)."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << 16, size=(n, samples), dtype=np.int64)


def make_engine(config: Optional[ModelConfig] = None, seed: int = 0, scale: float = 0.25,
                weights: Optional[dict[str, np.ndarray]] = None,
                **map_kwargs) -> Engine:
    """Engine over the default address map with random (or given) weights."""
    cfg = config or ModelConfig()
    mem = build_memory(cfg, **map_kwargs)
    fill_weights(mem, weights if weights is not None else random_weights(mem, seed, scale))
    return Engine(mem, cfg)
