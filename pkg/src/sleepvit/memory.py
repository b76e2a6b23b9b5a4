"""Banked on-chip SRAM model with per-tensor storage formats.

Words are 8 bits. A word address ``a`` in a bank set with ``n`` banks lives in
bank ``a % n`` at row ``a // n``, so the bytes of a multi-word element always
land in distinct banks and are fetched in the same cycle. Elements are stored
big-endian across their words: the high byte sits at the lower address.

Values cross the memory boundary in the compute format; the controller casts
them to and from each tensor's storage format (truncation toward -inf and
symmetric saturation on the way in, exact widening on the way out).
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .fixedpoint import COMPUTE_FORMAT, FixedValue, QFormat, cast

WEIGHT_BANKS = 2
WEIGHT_WORDS_PER_BANK = 15872
INTERMEDIATE_BANKS = 4
INTERMEDIATE_WORDS_PER_BANK = 14336

WEIGHT_FILE_MAGIC = b"SVITWGT1"
WEIGHT_FILE_VERSION = 1


class MemoryModelError(Exception):
    """Base class for memory model errors."""


class CapacityError(MemoryModelError):
    pass


class WeightFileError(MemoryModelError):
    pass


class BankKind(str, enum.Enum):
    WEIGHTS = "weights"
    INTERMEDIATE = "intermediate"


class Width(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    # only reachable through reduced/extended-width sweeps
    QUAD = 4

    @classmethod
    def for_bits(cls, bits: int) -> "Width":
        for w in cls:
            if bits <= 8 * w:
                return w
        raise ValueError(f"no storage width holds {bits} bits")


@dataclass(frozen=True)
class StorageFormat:
    qformat: QFormat
    width: Width

    def __post_init__(self) -> None:
        if self.qformat.total_bits > 8 * self.width:
            raise ValueError(f"{self.qformat} does not fit a {self.width.name.lower()} word")

    @classmethod
    def of(cls, fmt: str | QFormat) -> "StorageFormat":
        q = QFormat.parse(fmt) if isinstance(fmt, str) else fmt
        return cls(q, Width.for_bits(q.total_bits))


def check_family(kind: BankKind, storage: StorageFormat) -> None:
    """Reject formats outside the hardware's supported storage families."""
    q = storage.qformat
    if kind is BankKind.WEIGHTS:
        ok = storage.width is Width.SINGLE and q.total_bits == 8 and 2 <= q.int_bits <= 5
    elif storage.width is Width.SINGLE:
        ok = q.total_bits == 8 and 1 <= q.int_bits <= 6
    else:
        ok = storage.width is Width.DOUBLE and q == QFormat(8, 8)
    if not ok:
        raise ValueError(f"{q} ({storage.width.name.lower()}) not a supported {kind.value} format")


@dataclass(frozen=True)
class TensorDescriptor:
    name: str
    base: int
    length: int
    storage: StorageFormat
    bank_set: BankKind
    shape: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.shape:
            object.__setattr__(self, "shape", (self.length,))
        if math.prod(self.shape) != self.length:
            raise ValueError(f"{self.name}: shape {self.shape} != length {self.length}")

    @property
    def words(self) -> int:
        return self.length * int(self.storage.width)

    @property
    def end(self) -> int:
        return self.base + self.words

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "base": self.base,
            "length": self.length,
            "shape": list(self.shape),
            "format": str(self.storage.qformat),
            "width": self.storage.width.name.lower(),
            "bank_set": self.bank_set.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TensorDescriptor":
        q = QFormat.parse(d["format"])
        width = Width[d["width"].upper()] if "width" in d else Width.for_bits(q.total_bits)
        return cls(
            name=d["name"],
            base=int(d["base"]),
            length=int(d["length"]),
            storage=StorageFormat(q, width),
            bank_set=BankKind(d["bank_set"]),
            shape=tuple(d.get("shape") or (int(d["length"]),)),
        )


@dataclass
class BankSet:
    kind: BankKind
    n_banks: int
    words_per_bank: int
    data: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.data = np.zeros((self.n_banks, self.words_per_bank), dtype=np.uint8)

    @property
    def capacity(self) -> int:
        return self.n_banks * self.words_per_bank

    def locate(self, addr):
        return addr % self.n_banks, addr // self.n_banks

    def load(self, addrs: np.ndarray) -> np.ndarray:
        bank, row = self.locate(addrs)
        return self.data[bank, row]

    def store(self, addrs: np.ndarray, values: np.ndarray) -> None:
        bank, row = self.locate(addrs)
        self.data[bank, row] = values


def encode_words(raw: np.ndarray, width: int) -> np.ndarray:
    """Two's-complement codes -> (n, width) bytes, high byte first."""
    u = np.asarray(raw, dtype=np.int64).astype(np.uint64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64) * np.uint64(8)
    return ((u[:, None] >> shifts) & np.uint64(0xFF)).astype(np.uint8)


def decode_words(words: np.ndarray) -> np.ndarray:
    width = words.shape[-1]
    acc = np.zeros(words.shape[:-1], dtype=np.int64)
    for j in range(width):
        acc = (acc << 8) | words[..., j].astype(np.int64)
    bits = 8 * width
    if bits < 64:
        sign = np.int64(1) << (bits - 1)
        acc = np.where(acc >= sign, acc - (np.int64(1) << bits), acc)
    return acc


class MemorySystem:
    """Weight and intermediate-result bank sets plus the tensor address map."""

    def __init__(self, weight_words: int = WEIGHT_WORDS_PER_BANK,
                 intermediate_words: int = INTERMEDIATE_WORDS_PER_BANK,
                 compute_format: QFormat = COMPUTE_FORMAT, strict_formats: bool = True):
        self.banks = {
            BankKind.WEIGHTS: BankSet(BankKind.WEIGHTS, WEIGHT_BANKS, weight_words),
            BankKind.INTERMEDIATE: BankSet(BankKind.INTERMEDIATE, INTERMEDIATE_BANKS,
                                           intermediate_words),
        }
        self.compute_format = compute_format
        self.strict_formats = strict_formats
        self.tensors: dict[str, TensorDescriptor] = {}
        self.reads = 0
        self.writes = 0

    # -- address map -------------------------------------------------------

    def add_tensor(self, desc: TensorDescriptor) -> TensorDescriptor:
        if desc.name in self.tensors:
            raise ValueError(f"duplicate tensor {desc.name!r}")
        if self.strict_formats:
            check_family(desc.bank_set, desc.storage)
        bs = self.banks[desc.bank_set]
        if int(desc.storage.width) > bs.n_banks:
            raise ValueError(f"{desc.name}: element wider than the bank count")
        if desc.base < 0 or desc.end > bs.capacity:
            raise CapacityError(
                f"{desc.name}: words [{desc.base}, {desc.end}) exceed "
                f"{desc.bank_set.value} capacity {bs.capacity}")
        for other in self.tensors.values():
            if other.bank_set is desc.bank_set and desc.base < other.end and other.base < desc.end:
                raise ValueError(f"{desc.name} overlaps {other.name}")
        self.tensors[desc.name] = desc
        return desc

    def add_tensors(self, descs: Iterable[TensorDescriptor]) -> None:
        for d in descs:
            self.add_tensor(d)

    def __getitem__(self, name: str) -> TensorDescriptor:
        return self.tensors[name]

    def footprint_report(self) -> dict[str, dict[str, int]]:
        report = {}
        for kind, bs in self.banks.items():
            used = sum(d.words for d in self.tensors.values() if d.bank_set is kind)
            if used > bs.capacity:
                raise CapacityError(f"{kind.value}: {used} words used of {bs.capacity}")
            report[kind.value] = {"used": used, "free": bs.capacity - used,
                                  "capacity": bs.capacity}
        return report

    # -- element access ----------------------------------------------------

    def _desc(self, desc: TensorDescriptor | str) -> TensorDescriptor:
        return self.tensors[desc] if isinstance(desc, str) else desc

    def _addresses(self, desc: TensorDescriptor, start: int, count: int) -> np.ndarray:
        if start < 0 or count < 0 or start + count > desc.length:
            raise IndexError(f"{desc.name}: elements [{start}, {start + count}) "
                             f"outside length {desc.length}")
        w = int(desc.storage.width)
        idx = np.arange(start, start + count, dtype=np.int64)
        return desc.base + idx[:, None] * w + np.arange(w, dtype=np.int64)

    def read_stored(self, desc: TensorDescriptor | str, start: int = 0,
                    count: Optional[int] = None) -> np.ndarray:
        """Raw codes in the tensor's storage format."""
        desc = self._desc(desc)
        count = desc.length - start if count is None else count
        words = self.banks[desc.bank_set].load(self._addresses(desc, start, count))
        self.reads += count
        return decode_words(words)

    def write_stored(self, desc: TensorDescriptor | str, raw: np.ndarray, start: int = 0) -> None:
        desc = self._desc(desc)
        raw = np.asarray(raw, dtype=np.int64).ravel()
        mx = desc.storage.qformat.max_raw
        if raw.size and (raw.max() > mx or raw.min() < -mx):
            raise ValueError(f"{desc.name}: stored code outside {desc.storage.qformat}")
        addrs = self._addresses(desc, start, raw.size)
        self.banks[desc.bank_set].store(addrs, encode_words(raw, int(desc.storage.width)))
        self.writes += raw.size

    def read_tensor(self, desc: TensorDescriptor | str, start: int = 0,
                    count: Optional[int] = None) -> np.ndarray:
        """Compute-format raw codes (exact widening cast)."""
        desc = self._desc(desc)
        stored = self.read_stored(desc, start, count)
        out, _ = kernels.cast(stored, desc.storage.qformat, self.compute_format)
        return out

    def write_tensor(self, desc: TensorDescriptor | str, raw: np.ndarray,
                     start: int = 0) -> np.ndarray:
        """Narrow compute-format codes into storage; returns the saturation mask."""
        desc = self._desc(desc)
        raw = kernels.as_raw(np.asarray(raw).ravel(), self.compute_format)
        stored, ov = kernels.cast(raw, self.compute_format, desc.storage.qformat)
        self.write_stored(desc, np.asarray(stored, dtype=np.int64), start)
        return ov

    def read_element(self, desc: TensorDescriptor | str, index: int) -> FixedValue:
        desc = self._desc(desc)
        raw = int(self.read_stored(desc, index, 1)[0])
        return cast(FixedValue(raw, desc.storage.qformat), self.compute_format).value

    def write_element(self, desc: TensorDescriptor | str, index: int, v: FixedValue) -> bool:
        desc = self._desc(desc)
        stored, ov = cast(v, desc.storage.qformat)
        self.write_stored(desc, np.array([stored.raw]), index)
        return ov

    def clear(self, kind: BankKind) -> None:
        self.banks[kind].data[:] = 0


# -- weight file ----------------------------------------------------------
#
#   magic    8 bytes  b"SVITWGT1"
#   hlen     4 bytes  little-endian uint32, length of the JSON header
#   header   hlen bytes of UTF-8 JSON
#   payload  for each weight bank in order: words_per_bank bytes
#
# The header holds the descriptors of every tensor (weights and
# intermediates), so storage formats can be overridden per file.


def save_weight_file(path: str | Path, memory: MemorySystem, extra: Optional[dict] = None) -> None:
    bs = memory.banks[BankKind.WEIGHTS]
    header = {
        "version": WEIGHT_FILE_VERSION,
        "compute_format": str(memory.compute_format),
        "weight_banks": bs.n_banks,
        "words_per_bank": bs.words_per_bank,
        "tensors": [d.to_json() for d in memory.tensors.values()],
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_FILE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for b in range(bs.n_banks):
            fh.write(bs.data[b].tobytes())


def read_weight_file(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != WEIGHT_FILE_MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a weight file")
    if len(data) < 12:
        raise WeightFileError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: header is not valid JSON ({exc})") from None
    for key in ("version", "weight_banks", "words_per_bank", "tensors"):
        if key not in header:
            raise WeightFileError(f"{path}: header missing {key!r}")
    if header["version"] != WEIGHT_FILE_VERSION:
        raise WeightFileError(f"{path}: unsupported version {header['version']}")
    n, words = int(header["weight_banks"]), int(header["words_per_bank"])
    payload = data[12 + hlen:]
    if len(payload) != n * words:
        raise WeightFileError(f"{path}: payload is {len(payload)} bytes, expected {n * words}")
    banks = [np.frombuffer(payload, dtype=np.uint8, count=words, offset=b * words).copy()
             for b in range(n)]
    return header, banks


def load_weight_file(path: str | Path, strict_formats: bool = True) -> tuple[dict, MemorySystem]:
    header, banks = read_weight_file(path)
    if header["weight_banks"] != WEIGHT_BANKS:
        raise WeightFileError(f"{path}: expected {WEIGHT_BANKS} weight banks")
    mem = MemorySystem(weight_words=header["words_per_bank"],
                       compute_format=QFormat.parse(header.get("compute_format", "Q18.21")),
                       strict_formats=strict_formats)
    try:
        mem.add_tensors(TensorDescriptor.from_json(d) for d in header["tensors"])
    except CapacityError:
        raise
    except (KeyError, ValueError, MemoryModelError) as exc:
        raise WeightFileError(f"{path}: invalid tensor descriptor ({exc})") from None
    for b, arr in enumerate(banks):
        mem.banks[BankKind.WEIGHTS].data[b] = arr
    return header, mem
