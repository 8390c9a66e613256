"""Grid data types, Middlebury flow-file I/O, and particle advection."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FlowIOError, FormatError, ValidationError

FLO_MAGIC = 202021.25
_HEADER = struct.Struct("<fii")
_MAX_PIXELS = 1 << 26


@dataclass(frozen=True)
class GridDims:
    """Frame size in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"grid dims must be at least 1x1, got {self.width}x{self.height}"
            )

    @property
    def count(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Particle:
    """A sub-pixel position inside the grid (x right, y down)."""

    x: float
    y: float

    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


class MotionField:
    """Dense per-pixel field of 2-D vectors.

    The same container holds input motion vectors, thermal energy fields,
    and merged motion patterns.  ``vectors`` has shape (height, width, 2)
    with components ordered (x, y); storage is float64 and read-only after
    construction.
    """

    __slots__ = ("dims", "vectors")

    def __init__(self, dims: GridDims, vectors):
        vecs = np.ascontiguousarray(vectors, dtype=np.float64)
        if vecs.shape != (dims.height, dims.width, 2):
            raise ValidationError(
                f"vector array shape {vecs.shape} does not match dims "
                f"{dims.width}x{dims.height}"
            )
        if not np.all(np.isfinite(vecs)):
            raise ValidationError("motion field contains non-finite components")
        vecs.setflags(write=False)
        self.dims = dims
        self.vectors = vecs

    @classmethod
    def zeros(cls, dims: GridDims) -> "MotionField":
        return cls(dims, np.zeros((dims.height, dims.width, 2)))

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.vectors[..., 0], self.vectors[..., 1])

    def __eq__(self, other):
        return (
            isinstance(other, MotionField)
            and self.dims == other.dims
            and np.array_equal(self.vectors, other.vectors)
        )

    def __repr__(self):
        return f"MotionField({self.dims.width}x{self.dims.height})"


# A thermal energy field has the same shape and storage as a motion field.
ThermalEnergyField = MotionField


@dataclass(frozen=True)
class FlowSequence:
    """Per-frame motion fields sharing one grid; frame_rate is metadata only."""

    dims: GridDims
    frames: tuple
    frame_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 1:
            raise ValidationError("flow sequence needs at least one frame")
        for i, f in enumerate(self.frames):
            if f.dims != self.dims:
                raise ValidationError(f"frame {i} dims {f.dims} != sequence dims {self.dims}")

    def __len__(self):
        return len(self.frames)


def read_flo(path) -> MotionField:
    """Read one Middlebury-format flow file."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FlowIOError(f"{path}: truncated before magic tag")
    (magic,) = struct.unpack_from("<f", data, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad magic tag {magic!r}")
    if len(data) < _HEADER.size:
        raise FlowIOError(f"{path}: truncated header")
    _, w, h = _HEADER.unpack_from(data, 0)
    if w < 1 or h < 1 or w * h > _MAX_PIXELS:
        raise FormatError(f"{path}: implausible dimensions {w}x{h}")
    need = _HEADER.size + 8 * w * h
    if len(data) < need:
        raise FlowIOError(f"{path}: payload truncated ({len(data)} < {need} bytes)")
    if len(data) > need:
        raise FormatError(f"{path}: {len(data) - need} trailing bytes")
    payload = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=_HEADER.size)
    vecs = payload.astype(np.float64).reshape(h, w, 2)
    if not np.all(np.isfinite(vecs)):
        raise ValidationError(f"{path}: non-finite flow values")
    return MotionField(GridDims(w, h), vecs)


def write_flo(field: MotionField, path) -> None:
    """Write a Middlebury-format flow file (little-endian, float32 payload)."""
    w, h = field.dims.width, field.dims.height
    payload = field.vectors.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FLO_MAGIC, w, h))
        fh.write(payload)


def bilinear_sample(vectors: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample a (h, w, 2) field at sub-pixel positions with bilinear weights.

    Positions are clamped into the grid, so querying on the border returns
    the border value exactly.
    """
    h, w = vectors.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = vectors[y0, x0] * (1.0 - fx) + vectors[y0, x1] * fx
    bot = vectors[y1, x0] * (1.0 - fx) + vectors[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def advect(seq: FlowSequence, start_frame: int, T: int) -> MotionField:
    """Net displacement of every pixel tracked through T frames of flow.

    Each step moves the tracked point by the bilinearly interpolated flow of
    the current frame; points leaving the grid are clamped to the boundary
    and keep advecting from there.
    """
    if T < 1:
        raise ValidationError(f"frame interval T must be >= 1, got {T}")
    if start_frame < 0 or start_frame + T > len(seq):
        raise ValidationError(
            f"advection needs frames [{start_frame}, {start_frame + T}) "
            f"but the sequence has {len(seq)}"
        )
    w, h = seq.dims.width, seq.dims.height
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx = np.zeros_like(xs)
    dy = np.zeros_like(ys)
    for t in range(start_frame, start_frame + T):
        step = bilinear_sample(seq.frames[t].vectors, xs + dx, ys + dy)
        dx = np.clip(dx + step[..., 0], -xs, (w - 1.0) - xs)
        dy = np.clip(dy + step[..., 1], -ys, (h - 1.0) - ys)
    return MotionField(seq.dims, np.stack([dx, dy], axis=-1))
