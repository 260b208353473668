"""Dense ego-centric semantic voxel grid and its ``.vxsg`` binary format.

Axis convention: array axis 0 (H) is ego x (forward), axis 1 (W) is ego y
(left), axis 2 (D) is ego z (up). Cells are half-open
``[origin + idx * vs, origin + (idx + 1) * vs)`` with ``origin`` the min corner.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAGIC = b"VXSG"
FORMAT_VERSION = 1
MAX_VOXELS = 1 << 30


class GridFormatError(ValueError):
    """Base class for malformed ``.vxsg`` payloads."""


class BadMagicError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class LabelRangeError(GridFormatError):
    pass


@dataclass(frozen=True)
class Label:
    name: str
    color: tuple[int, int, int]
    is_foreground: bool = False


@dataclass(frozen=True)
class LabelTaxonomy:
    entries: tuple[Label, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("taxonomy needs at least the empty label")
        empty = entries[0]
        if empty.name != "empty" or tuple(empty.color) != (0, 0, 0) or empty.is_foreground:
            raise ValueError("entry 0 must be ('empty', (0, 0, 0), not foreground)")
        if len(entries) > 256:
            raise ValueError("at most 256 labels fit in u8 storage")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        colors = [tuple(e.color) for e in entries[1:]]
        if len(set(colors)) != len(colors):
            raise ValueError("non-empty label colors must be pairwise distinct")
        for e in entries:
            if len(e.color) != 3 or not all(0 <= c <= 255 for c in e.color):
                raise ValueError(f"bad color for {e.name!r}: {e.color}")
            if (0, 0, 0) == tuple(e.color) and e is not empty:
                raise ValueError("black is reserved for the empty label")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def palette(self) -> np.ndarray:
        """(L, 3) uint8 color table indexed by label id."""
        return np.array([e.color for e in self.entries], dtype=np.uint8)

    def foreground(self) -> np.ndarray:
        """(L,) bool table of foreground flags."""
        return np.array([e.is_foreground for e in self.entries], dtype=bool)

    def to_json(self) -> str:
        return json.dumps(
            [
                {"name": e.name, "color": list(e.color), "is_foreground": e.is_foreground}
                for e in self.entries
            ]
        )

    @classmethod
    def from_json(cls, text: str) -> "LabelTaxonomy":
        return cls(
            tuple(
                Label(d["name"], tuple(int(c) for c in d["color"]), bool(d["is_foreground"]))
                for d in json.loads(text)
            )
        )


DEFAULT_TAXONOMY = LabelTaxonomy(
    (
        Label("empty", (0, 0, 0)),
        Label("road", (128, 64, 128)),
        Label("building", (70, 70, 70)),
        Label("vehicle", (0, 0, 142), True),
        Label("pedestrian", (220, 20, 60), True),
        Label("vegetation", (107, 142, 35)),
    )
)

EMPTY, ROAD, BUILDING, VEHICLE, PEDESTRIAN, VEGETATION = range(6)


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    """Immutable labelled voxel grid.

    ``voxel_size`` and ``origin`` are snapped to float32 so the binary format
    round-trips exactly.
    """

    labels: np.ndarray
    voxel_size: float
    origin: tuple[float, float, float]
    taxonomy: LabelTaxonomy = field(default=DEFAULT_TAXONOMY)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.uint8, order="C", copy=True)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3D array, got shape {labels.shape}")
        vs = _f32(self.voxel_size)
        if not np.isfinite(vs) or vs <= 0:
            raise ValueError(f"voxel_size must be finite and > 0, got {self.voxel_size}")
        origin = tuple(_f32(o) for o in self.origin)
        if len(origin) != 3 or not all(np.isfinite(origin)):
            raise ValueError(f"origin must be a finite 3-vector, got {self.origin}")
        if labels.size and int(labels.max()) >= len(self.taxonomy):
            raise LabelRangeError(
                f"label {int(labels.max())} outside taxonomy of {len(self.taxonomy)}"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def aabb_min(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    @property
    def aabb_max(self) -> np.ndarray:
        return self.aabb_min + np.array(self.dims, dtype=np.float64) * self.voxel_size

    def with_labels(self, labels: np.ndarray) -> "SemanticGrid":
        return SemanticGrid(labels, self.voxel_size, self.origin, self.taxonomy)

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return (
            self.voxel_size == other.voxel_size
            and self.origin == other.origin
            and self.taxonomy == other.taxonomy
            and np.array_equal(self.labels, other.labels)
        )

    def sha256(self) -> str:
        return hashlib.sha256(write_grid(self)).hexdigest()


def empty_grid(
    dims: Sequence[int] = (64, 64, 16),
    voxel_size: float = 0.5,
    origin: Sequence[float] = (-16.0, -16.0, -0.5),
    taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
) -> SemanticGrid:
    return SemanticGrid(np.zeros(tuple(dims), np.uint8), voxel_size, tuple(origin), taxonomy)


def voxel_of(grid: SemanticGrid, point) -> Optional[tuple[int, int, int]]:
    p = np.asarray(point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    idx = np.floor((p - grid.aabb_min) / grid.voxel_size).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)):
        return None
    return tuple(int(i) for i in idx)


def voxels_of(grid: SemanticGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``voxel_of``: returns (N, 3) indices and an (N,) in-bounds flag."""
    idx = np.floor((np.asarray(points, np.float64) - grid.aabb_min) / grid.voxel_size)
    idx = idx.astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=-1)
    return idx, inside


def center_of(grid: SemanticGrid, idx) -> np.ndarray:
    i = np.asarray(idx, dtype=np.int64)
    if i.shape != (3,) or np.any(i < 0) or np.any(i >= np.array(grid.dims)):
        raise IndexError(f"voxel index {tuple(idx)} outside dims {grid.dims}")
    return grid.aabb_min + (i + 0.5) * grid.voxel_size


# -- binary format ---------------------------------------------------------

_HEADER = struct.Struct("<4sH3If3f")


def write_grid(grid: SemanticGrid) -> bytes:
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, *grid.dims, grid.voxel_size, *grid.origin),
        struct.pack("<H", len(grid.taxonomy)),
    ]
    for e in grid.taxonomy.entries:
        name = e.name.encode("utf-8")
        if len(name) > 255:
            raise ValueError(f"label name too long: {e.name!r}")
        parts.append(struct.pack("<B", len(name)) + name)
        parts.append(struct.pack("<4B", *e.color, int(e.is_foreground)))
    # x-major, then y, then z
    parts.append(grid.labels.tobytes(order="C"))
    return b"".join(parts)


def read_grid(data: bytes) -> SemanticGrid:
    view = memoryview(data)
    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise BadMagicError("bad magic: not a VXSG payload")
    if len(view) < _HEADER.size + 2:
        raise TruncatedPayloadError("truncated payload: header incomplete")
    _, version, h, w, d, vs, ox, oy, oz = _HEADER.unpack_from(view, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported VXSG version {version}")
    if min(h, w, d) < 1 or h * w * d > MAX_VOXELS:
        raise DimensionOverflowError(f"dimension overflow: dims {(h, w, d)}")
    pos = _HEADER.size
    (count,) = struct.unpack_from("<H", view, pos)
    pos += 2
    entries = []
    for _ in range(count):
        if pos + 1 > len(view):
            raise TruncatedPayloadError("truncated payload: taxonomy table")
        n = view[pos]
        pos += 1
        if pos + n + 4 > len(view):
            raise TruncatedPayloadError("truncated payload: taxonomy table")
        name = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        r, g, b, fg = struct.unpack_from("<4B", view, pos)
        pos += 4
        entries.append(Label(name, (r, g, b), bool(fg)))
    taxonomy = LabelTaxonomy(tuple(entries))
    n_vox = h * w * d
    if len(view) - pos < n_vox:
        raise TruncatedPayloadError(
            f"truncated payload: expected {n_vox} label bytes, got {len(view) - pos}"
        )
    if len(view) - pos > n_vox:
        raise GridFormatError("trailing bytes after label payload")
    labels = np.frombuffer(view[pos:], dtype=np.uint8).reshape(h, w, d).copy()
    if n_vox and int(labels.max()) >= count:
        raise LabelRangeError(f"label {int(labels.max())} outside taxonomy of {count}")
    return SemanticGrid(labels, vs, (ox, oy, oz), taxonomy)


def header_size(grid: SemanticGrid) -> int:
    return len(write_grid(grid)) - grid.labels.size
