"""Per-camera condition maps rendered from a semantic grid by ray casting.

Four maps plus a foreground mask are produced per view and frame:
semantic (palette RGB), depth (ray distance / d_max), coordinate (hit point
normalized by the grid AABB), a P-plane MPI of nearest labels per depth slab,
and the mask of pixels whose first hit is a foreground label.

Miss conventions: semantic black, depth 1.0, coordinate zeros, MPI empty,
mask 0. A hit never encodes depth 1.0.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pnm
from .camera import CameraRig, Extrinsics, Intrinsics, pixel_rays
from .grid import LabelTaxonomy, SemanticGrid
from .raycast import first_hit_batch, trace_batch

DEFAULT_DMAX = 51.2
DEFAULT_PLANES = 8
_BELOW_ONE = float(np.nextafter(1.0, 0.0))
DEPTH_SCALE = 65535


@dataclass
class ConditionStack:
    semantic: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 in [0, 1]
    coordinate: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mpi: np.ndarray  # (P, H, W) uint8 label ids
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    view: str = ""
    frame: int = 0
    d_max: float = DEFAULT_DMAX
    planes: int = DEFAULT_PLANES
    render_seconds: float = field(default=0.0, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def equals(self, other: "ConditionStack") -> bool:
        return (
            np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.coordinate, other.coordinate)
            and np.array_equal(self.mpi, other.mpi)
            and np.array_equal(self.mask, other.mask)
        )


def _rays(intr: Intrinsics, extr: Extrinsics) -> np.ndarray:
    return pixel_rays(intr, extr).reshape(-1, 3)


def _semantic(grid, lab, shape):
    return grid.taxonomy.palette()[lab].reshape(*shape, 3)


def _depth(dist, d_max, shape):
    depth = np.ones(dist.shape)
    hit = np.isfinite(dist)
    depth[hit] = np.clip(dist[hit] / d_max, 0.0, _BELOW_ONE)
    return depth.reshape(shape)


def _coordinate(grid, origin, dirs, dist, shape):
    out = np.zeros(dirs.shape)
    hit = np.isfinite(dist)
    pts = origin + dist[hit, None] * dirs[hit]
    lo, hi = grid.aabb_min, grid.aabb_max
    out[hit] = np.clip((pts - lo) / (hi - lo), 0.0, 1.0)
    return out.reshape(*shape, 3)


def _mask(grid, lab, shape):
    return grid.taxonomy.foreground()[lab].astype(np.uint8).reshape(shape)


def render_semantic(grid: SemanticGrid, intr: Intrinsics, extr: Extrinsics, d_max: float):
    lab, _, _ = first_hit_batch(grid, extr.translation, _rays(intr, extr), d_max)
    return _semantic(grid, lab, (intr.height, intr.width))


def render_depth(grid: SemanticGrid, intr: Intrinsics, extr: Extrinsics, d_max: float):
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    _, dist, _ = first_hit_batch(grid, extr.translation, _rays(intr, extr), d_max)
    return _depth(dist, d_max, (intr.height, intr.width))


def render_coordinate(grid: SemanticGrid, intr: Intrinsics, extr: Extrinsics, d_max: float):
    dirs = _rays(intr, extr)
    _, dist, _ = first_hit_batch(grid, extr.translation, dirs, d_max)
    return _coordinate(grid, extr.translation, dirs, dist, (intr.height, intr.width))


def render_mpi(grid: SemanticGrid, intr: Intrinsics, extr: Extrinsics, d_max: float, planes: int):
    _, _, _, mpi = trace_batch(grid, extr.translation, _rays(intr, extr), d_max, planes)
    return mpi.T.reshape(planes, intr.height, intr.width).copy()


def render_mask(grid: SemanticGrid, intr: Intrinsics, extr: Extrinsics, d_max: float):
    lab, _, _ = first_hit_batch(grid, extr.translation, _rays(intr, extr), d_max)
    return _mask(grid, lab, (intr.height, intr.width))


def render_view(
    grid: SemanticGrid,
    intr: Intrinsics,
    extr: Extrinsics,
    d_max: float = DEFAULT_DMAX,
    planes: int = DEFAULT_PLANES,
    view: str = "",
    frame: int = 0,
) -> ConditionStack:
    """All five maps from one traversal per pixel."""
    start = time.perf_counter()
    shape = (intr.height, intr.width)
    dirs = _rays(intr, extr)
    lab, dist, _, mpi = trace_batch(grid, extr.translation, dirs, d_max, planes)
    stack = ConditionStack(
        semantic=_semantic(grid, lab, shape),
        depth=_depth(dist, d_max, shape),
        coordinate=_coordinate(grid, extr.translation, dirs, dist, shape),
        mpi=mpi.T.reshape(planes, *shape).copy(),
        mask=_mask(grid, lab, shape),
        view=view,
        frame=frame,
        d_max=float(d_max),
        planes=int(planes),
    )
    stack.render_seconds = time.perf_counter() - start
    return stack


def render_stack(
    grid: SemanticGrid,
    rig: CameraRig,
    frame: int = 0,
    d_max: float = DEFAULT_DMAX,
    planes: int = DEFAULT_PLANES,
    jobs: int = 1,
) -> list[ConditionStack]:
    """Condition stacks for every view of ``rig``; output is independent of ``jobs``."""
    if planes < 1:
        raise ValueError("plane count must be >= 1")

    def one(v):
        return render_view(grid, v.intrinsics, v.extrinsics, d_max, planes, v.name, frame)

    if jobs <= 1:
        return [one(v) for v in rig.views]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, rig.views))


# -- decoding helpers ------------------------------------------------------


def decode_semantic(semantic: np.ndarray, taxonomy: LabelTaxonomy) -> np.ndarray:
    """Invert the palette; every pixel must carry a taxonomy color."""
    pal = taxonomy.palette().astype(np.int64)
    key = semantic.astype(np.int64) @ np.array([1 << 16, 1 << 8, 1])
    table = pal @ np.array([1 << 16, 1 << 8, 1])
    order = np.argsort(table)
    pos = np.searchsorted(table[order], key)
    pos = np.clip(pos, 0, len(table) - 1)
    labels = order[pos]
    if not np.array_equal(table[labels], key):
        raise ValueError("semantic image contains colors outside the palette")
    return labels.astype(np.uint8)


def decode_coordinate(coordinate: np.ndarray, grid: SemanticGrid) -> np.ndarray:
    return grid.aabb_min + coordinate * (grid.aabb_max - grid.aabb_min)


def mpi_one_hot(mpi: np.ndarray, n_labels: int) -> np.ndarray:
    """(P, H, W) labels -> (P * (L - 1), H, W) occupancy of non-empty labels."""
    planes = [(mpi == k) for k in range(1, n_labels)]
    return np.stack(planes, axis=1).reshape(-1, *mpi.shape[1:]).astype(np.float64)


# -- on-disk layout --------------------------------------------------------


def stack_paths(stack_dir: Path, view: str, planes: int) -> dict[str, Path]:
    paths = {
        "semantic": stack_dir / f"{view}_semantic.ppm",
        "depth": stack_dir / f"{view}_depth.pgm",
        "coordinate": stack_dir / f"{view}_coordinate.ppm",
        "mask": stack_dir / f"{view}_mask.pgm",
    }
    for p in range(planes):
        paths[f"mpi_{p}"] = stack_dir / f"{view}_mpi_{p}.ppm"
    return paths


def frame_dir(root, scene: str, frame: int) -> Path:
    return Path(root) / scene / f"{frame:04d}"


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    q = np.round(depth * DEPTH_SCALE).astype(np.int64)
    # keep hits strictly below the miss code
    q = np.where(depth < 1.0, np.minimum(q, DEPTH_SCALE - 1), DEPTH_SCALE)
    return q.astype(np.uint16)


def save_stack(stack: ConditionStack, root, scene: str, taxonomy: LabelTaxonomy) -> list[Path]:
    d = frame_dir(root, scene, stack.frame)
    d.mkdir(parents=True, exist_ok=True)
    paths = stack_paths(d, stack.view, stack.planes)
    pal = taxonomy.palette()
    pnm.write(paths["semantic"], stack.semantic)
    pnm.write(paths["depth"], quantize_depth(stack.depth), maxval=DEPTH_SCALE)
    pnm.write(
        paths["coordinate"], np.round(stack.coordinate * DEPTH_SCALE).astype(np.uint16), DEPTH_SCALE
    )
    pnm.write(paths["mask"], stack.mask.astype(np.uint8) * 255)
    for p in range(stack.planes):
        pnm.write(paths[f"mpi_{p}"], pal[stack.mpi[p]])
    return list(paths.values())


def load_stack(
    root, scene: str, frame: int, view: str, planes: int, taxonomy: LabelTaxonomy, d_max: float
) -> ConditionStack:
    paths = stack_paths(frame_dir(root, scene, frame), view, planes)
    semantic, _ = pnm.read(paths["semantic"])
    depth_q, _ = pnm.read(paths["depth"])
    coord_q, _ = pnm.read(paths["coordinate"])
    mask, _ = pnm.read(paths["mask"])
    mpi = np.stack([decode_semantic(pnm.read(paths[f"mpi_{p}"])[0], taxonomy) for p in range(planes)])
    return ConditionStack(
        semantic=semantic,
        depth=depth_q.astype(np.float64) / DEPTH_SCALE,
        coordinate=coord_q.astype(np.float64) / DEPTH_SCALE,
        mpi=mpi,
        mask=(mask > 0).astype(np.uint8),
        view=view,
        frame=frame,
        d_max=d_max,
        planes=planes,
    )


def write_sidecar(root, scene: str, frame: int, d_max, planes, rig_hash, grid_hash, views) -> Path:
    path = frame_dir(root, scene, frame) / "sidecar.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {
        "d_max": float(d_max),
        "planes": int(planes),
        "rig_sha256": rig_hash,
        "grid_sha256": grid_hash,
        "views": list(views),
    }
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path
