"""Reading EEG epoch files: text (one sample per line) or raw u16 LE."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import EPOCH_SAMPLES


class EpochFileError(ValueError):
    """Malformed epoch file; the message names the file and line or byte offset."""


def parse_csv(text: str, path: str = "<input>", samples: int = EPOCH_SAMPLES) -> np.ndarray:
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        field = line.strip()
        if not field:
            raise EpochFileError(f"{path}:{lineno}: empty line")
        try:
            v = int(field, 10)
        except ValueError:
            raise EpochFileError(f"{path}:{lineno}: not an integer sample: {field!r}") from None
        if not 0 <= v <= 0xFFFF:
            raise EpochFileError(f"{path}:{lineno}: sample {v} outside 0..65535")
        values.append(v)
    if not values or len(values) % samples:
        raise EpochFileError(
            f"{path}:{len(values) + 1}: {len(values)} samples is not a positive multiple of {samples} "
            f"(last epoch has {len(values) % samples})")
    return np.array(values, dtype=np.int64).reshape(-1, samples)


def parse_binary(data: bytes, path: str = "<input>", samples: int = EPOCH_SAMPLES) -> np.ndarray:
    if len(data) % 2:
        raise EpochFileError(f"{path}: offset {len(data) - 1}: odd byte count, dangling half sample")
    n = len(data) // 2
    if n == 0 or n % samples:
        whole = n - n % samples
        raise EpochFileError(
            f"{path}: offset {2 * whole}: {n} samples is not a positive multiple of {samples}")
    return np.frombuffer(data, dtype="<u2").astype(np.int64).reshape(-1, samples)


def read_epochs(path: str | Path, samples: int = EPOCH_SAMPLES) -> np.ndarray:
    """Epochs from a file, shape (n_epochs, samples).

    ``.csv``/``.txt`` files are text; anything else is read as binary.
    """
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        try:
            text = path.read_text(encoding="ascii")
        except UnicodeDecodeError as exc:
            raise EpochFileError(f"{path}: offset {exc.start}: non-ASCII byte") from None
        return parse_csv(text, str(path), samples)
    return parse_binary(path.read_bytes(), str(path), samples)


def write_csv(path: str | Path, epochs: np.ndarray) -> None:
    flat = np.asarray(epochs, dtype=np.int64).reshape(-1)
    Path(path).write_text("".join(f"{int(v)}\n" for v in flat))


def write_binary(path: str | Path, epochs: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(epochs).reshape(-1).astype("<u2").tobytes())
