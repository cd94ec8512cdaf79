"""Dense float64 grids, flat parameter vectors and the EQG1 binary format.

A "grid" is just a numpy float64 array; the helpers here enforce the few
contracts the rest of the package relies on (non-empty operands, matching
shapes, finite results) and implement the bit-exact file format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"EQG1"
MAX_RANK = 32
# Largest payload accepted on read; guards against absurd headers.
MAX_ELEMENTS = 1 << 34


class GridError(ValueError):
    """Raised for invalid grid operands."""


class GridFormatError(GridError):
    """Base class for EQG1 decoding failures."""


class MalformedHeaderError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


def as_grid(a) -> np.ndarray:
    """Return ``a`` as a float64 ndarray (no copy when already one)."""
    return np.asarray(a, dtype=np.float64)


def _nonempty(a: np.ndarray) -> np.ndarray:
    a = as_grid(a)
    if a.size == 0:
        raise GridError("empty operand")
    return a


def norm2(a) -> float:
    """Euclidean norm of the flattened grid."""
    a = _nonempty(a)
    return float(np.sqrt(np.dot(a.ravel(), a.ravel())))


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return ``alpha * x + y`` as a new array."""
    x, y = as_grid(x), as_grid(y)
    if x.shape != y.shape:
        raise GridError(f"shape mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def reduce_max(a, per_channel: bool = False):
    """Global maximum, or one maximum per slice of the leading axis."""
    a = _nonempty(a)
    if not per_channel:
        return float(a.max())
    if a.ndim == 0:
        return [float(a)]
    return [float(v) for v in a.reshape(a.shape[0], -1).max(axis=1)]


def write_grid(path, grid) -> None:
    grid = np.ascontiguousarray(as_grid(grid))
    Path(path).write_bytes(encode_grid(grid))


def encode_grid(grid) -> bytes:
    grid = np.ascontiguousarray(as_grid(grid))
    header = MAGIC + struct.pack("<I", grid.ndim)
    header += struct.pack(f"<{grid.ndim}I", *grid.shape)
    return header + grid.astype("<f8").tobytes()


def read_grid(path) -> np.ndarray:
    return decode_grid(Path(path).read_bytes())


def decode_grid(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise MalformedHeaderError("malformed header")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank > MAX_RANK:
        raise DimensionOverflowError(f"dimension overflow: rank {rank}")
    end = 8 + 4 * rank
    if len(buf) < end:
        raise MalformedHeaderError("malformed header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = 1
    for d in shape:
        count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"dimension overflow: shape {shape}")
    payload = buf[end:]
    if len(payload) < 8 * count:
        raise TruncatedPayloadError(
            f"truncated payload: expected {count} values, found {len(payload) // 8}"
        )
    if len(payload) > 8 * count:
        raise MalformedHeaderError("malformed header: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f8", count=count).astype(np.float64)
    return data.reshape(shape)


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class ParamVector:
    """Flat float64 parameter array with named, contiguous segments."""

    def __init__(self, data, layout: Sequence[Segment]):
        data = as_grid(data).ravel()
        layout = tuple(layout)
        pos = 0
        for seg in layout:
            if seg.offset != pos:
                raise GridError(f"segment {seg.name!r} is not contiguous")
            pos += seg.size
        if pos != data.size:
            raise GridError(f"layout covers {pos} values, data has {data.size}")
        self.data = data
        self.layout = layout

    @classmethod
    def from_arrays(cls, named: Iterable[tuple[str, np.ndarray]]) -> "ParamVector":
        layout, chunks, pos = [], [], 0
        for name, arr in named:
            arr = as_grid(arr)
            layout.append(Segment(name, tuple(arr.shape), pos))
            chunks.append(arr.ravel())
            pos += arr.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(data, layout)

    @classmethod
    def zeros_like(cls, other: "ParamVector") -> "ParamVector":
        return cls(np.zeros_like(other.data), other.layout)

    def like(self, data) -> "ParamVector":
        """New vector with this layout and the given flat data."""
        return ParamVector(data, self.layout)

    def __getitem__(self, name: str) -> np.ndarray:
        for seg in self.layout:
            if seg.name == name:
                return self.data[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        raise KeyError(name)

    def names(self) -> list[str]:
        return [s.name for s in self.layout]

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def __len__(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        segs = ", ".join(f"{s.name}{list(s.shape)}" for s in self.layout)
        return f"ParamVector({segs})"

    def layout_manifest(self) -> list[dict]:
        return [{"name": s.name, "shape": list(s.shape), "offset": s.offset} for s in self.layout]

    @classmethod
    def from_manifest(cls, data, manifest: list[dict]) -> "ParamVector":
        layout = [Segment(m["name"], tuple(m["shape"]), int(m["offset"])) for m in manifest]
        return cls(data, layout)
