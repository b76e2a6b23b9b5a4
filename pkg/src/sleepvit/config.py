"""Model hyperparameters and the tensor address map derived from them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

from .memory import (
    INTERMEDIATE_BANKS,
    WEIGHT_BANKS,
    BankKind,
    StorageFormat,
    TensorDescriptor,
)

EPOCH_SAMPLES = 3840


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 128
    clip_seconds: int = 30
    patch_len: int = 64
    d_model: int = 64
    num_heads: int = 8
    num_layers: int = 1
    mlp_dim: int = 32
    num_classes: int = 4
    avg_depth: int = 3
    use_cls_token: bool = True
    taylor_terms: int = 3

    def __post_init__(self) -> None:
        if self.samples % self.patch_len:
            raise ValueError(f"patch_len {self.patch_len} does not divide {self.samples} samples")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.num_heads} heads")
        for name in ("sample_rate", "clip_seconds", "patch_len", "d_model", "num_heads",
                     "num_layers", "mlp_dim", "num_classes", "avg_depth", "taylor_terms"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def samples(self) -> int:
        return self.sample_rate * self.clip_seconds

    @property
    def num_patches(self) -> int:
        return self.samples // self.patch_len

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def num_tokens(self) -> int:
        return self.num_patches + int(self.use_cls_token)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        derived = {"num_patches", "head_dim"}
        unknown = set(d) - known - derived
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        for key in derived & set(d):
            if d[key] != getattr(cfg, key):
                raise ValueError(f"{key}={d[key]} inconsistent with derived {getattr(cfg, key)}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Storage format per tensor role. Only the family ranges are fixed by the
# hardware; this particular assignment is overridable via the weight file.
DEFAULT_ROLE_FORMATS = {
    "embed": "Q2.6",
    "attn": "Q2.6",
    "mlp": "Q3.5",
    "head": "Q5.3",
    "input": "Q1.7",
    "scores": "Q1.7",
    "probs": "Q8.8",
    "residual": "Q8.8",
    "mlp_hidden": "Q8.8",
}


def weight_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, role) for every learnable tensor, in address order."""
    d, m = cfg.d_model, cfg.mlp_dim
    out = [
        ("patch.w", (d, cfg.patch_len), "embed"),
        ("patch.b", (d,), "embed"),
    ]
    if cfg.use_cls_token:
        out.append(("cls", (d,), "embed"))
    out.append(("pos", (cfg.num_tokens, d), "embed"))
    for layer in range(cfg.num_layers):
        p = f"l{layer}."
        out += [
            (p + "ln1.gamma", (d,), "attn"),
            (p + "ln1.beta", (d,), "attn"),
            (p + "attn.wq", (d, d), "attn"),
            (p + "attn.bq", (d,), "attn"),
            (p + "attn.wk", (d, d), "attn"),
            (p + "attn.bk", (d,), "attn"),
            (p + "attn.wv", (d, d), "attn"),
            (p + "attn.bv", (d,), "attn"),
            (p + "attn.wo", (d, d), "attn"),
            (p + "attn.bo", (d,), "attn"),
            (p + "ln2.gamma", (d,), "mlp"),
            (p + "ln2.beta", (d,), "mlp"),
            (p + "mlp.w1", (m, d), "mlp"),
            (p + "mlp.b1", (m,), "mlp"),
            (p + "mlp.w2", (d, m), "mlp"),
            (p + "mlp.b2", (d,), "mlp"),
        ]
    out += [
        ("head.w", (cfg.num_classes, d), "head"),
        ("head.b", (cfg.num_classes,), "head"),
    ]
    return out


def intermediate_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    t, d = cfg.num_tokens, cfg.d_model
    out = [
        ("input", (cfg.samples,), "input"),
        ("stream", (t, d), "residual"),
        ("ln_out", (t, d), "residual"),
        ("q", (t, d), "residual"),
        ("k", (t, d), "residual"),
        # values are written transposed so each AV dot product reads a contiguous column
        ("v_t", (d, t), "residual"),
        ("score_row", (t,), "scores"),
        ("attn_prob", (t,), "probs"),
        ("attn_out", (t, d), "residual"),
        ("mlp_hidden", (t, cfg.mlp_dim), "mlp_hidden"),
    ]
    if not cfg.use_cls_token:
        out.append(("pooled", (d,), "residual"))
    out.append(("logits", (cfg.num_classes,), "residual"))
    return out


def count_parameters(cfg: ModelConfig) -> int:
    total = 0
    for _, shape, _ in weight_shapes(cfg):
        n = 1
        for s in shape:
            n *= s
        total += n
    return total


def _align(addr: int, n: int) -> int:
    return -(-addr // n) * n


def build_tensor_map(cfg: ModelConfig,
                     formats: Optional[Mapping[str, StorageFormat]] = None,
                     role_formats: Optional[Mapping[str, str]] = None) -> list[TensorDescriptor]:
    """Allocate every tensor back to back, bases aligned to the bank count.

    ``formats`` overrides individual tensors by name; ``role_formats``
    overrides whole roles (see ``DEFAULT_ROLE_FORMATS``).
    """
    roles = dict(DEFAULT_ROLE_FORMATS)
    roles.update(role_formats or {})
    formats = dict(formats or {})
    descs = []
    for kind, shapes, nbanks in ((BankKind.WEIGHTS, weight_shapes(cfg), WEIGHT_BANKS),
                                 (BankKind.INTERMEDIATE, intermediate_shapes(cfg),
                                  INTERMEDIATE_BANKS)):
        addr = 0
        for name, shape, role in shapes:
            storage = formats.get(name) or StorageFormat.of(roles[role])
            length = 1
            for s in shape:
                length *= s
            addr = _align(addr, nbanks)
            desc = TensorDescriptor(name, addr, length, storage, kind, shape)
            descs.append(desc)
            addr = desc.end
    return descs
