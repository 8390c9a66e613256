"""16-bit PGM export for label maps (file value 0 = background = label -1)."""
import re
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

_MAXVAL = 65535


def write_pgm16(labels: np.ndarray, path) -> None:
    """Write an int label map (-1 background) as a binary 16-bit PGM."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValidationError("label map must be 2-D")
    if arr.min() < -1 or arr.max() + 1 > _MAXVAL:
        raise ValidationError("labels out of range for 16-bit PGM")
    h, w = arr.shape
    data = (arr.astype(np.int64) + 1).astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{_MAXVAL}\n".encode("ascii"))
        fh.write(data)


def read_pgm16(path) -> np.ndarray:
    """Read a binary 16-bit PGM back into an int32 label map (-1 background)."""
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != _MAXVAL:
        raise FormatError(f"{path}: expected 16-bit maxval, got {maxval}")
    if len(raw) - m.end() < 2 * w * h:
        raise FormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(raw, dtype=">u2", count=w * h, offset=m.end())
    return pixels.reshape(h, w).astype(np.int32) - 1
