"""Deterministic synthetic driving scenes: static layout plus moving objects.

Layer 0 of the grid is road. Buildings and vegetation are static boxes;
vehicles and pedestrians move at constant velocity without rotation. On
overlap, pedestrians beat vehicles beat static boxes beat road.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import (
    BUILDING,
    DEFAULT_TAXONOMY,
    PEDESTRIAN,
    ROAD,
    VEGETATION,
    VEHICLE,
    SemanticGrid,
)
from .rng import Xoshiro256

MAX_PLACEMENT_ATTEMPTS = 200


class SceneConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    seed: int = 0
    frames: int = 16
    dt: float = 1.0 / 12.0
    dims: tuple[int, int, int] = (64, 64, 16)
    voxel_size: float = 0.5
    origin: Optional[tuple[float, float, float]] = None
    n_vehicles: int = 3
    n_pedestrians: int = 4
    n_buildings: int = 6
    n_vegetation: int = 4
    ego_clearance: float = 3.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.origin is not None:
            self.origin = tuple(float(o) for o in self.origin)

    def resolved_origin(self) -> tuple[float, float, float]:
        if self.origin is not None:
            return self.origin
        h, w, _ = self.dims
        vs = self.voxel_size
        # ego-centred in x/y; road layer top surface at z = 0
        return (-h * vs / 2, -w * vs / 2, -vs)

    def validate(self):
        if self.frames < 1:
            raise SceneConfigError("frames must be >= 1")
        for name in ("n_vehicles", "n_pedestrians", "n_buildings", "n_vegetation"):
            if getattr(self, name) < 0:
                raise SceneConfigError(f"{name} must be >= 0")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SceneConfigError("dims must be three positive integers")
        if not (self.voxel_size > 0 and math.isfinite(self.voxel_size)):
            raise SceneConfigError("voxel_size must be positive")
        if not self.dt > 0:
            raise SceneConfigError("dt must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SceneConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ObjectTrack:
    label: int
    size: tuple[int, int, int]  # voxels
    start: tuple[float, float, float]  # box center at t = 0, meters
    velocity: tuple[float, float, float]  # m/s

    def position_at(self, t: float) -> np.ndarray:
        return np.asarray(self.start) + np.asarray(self.velocity) * t

    def aabb_at(self, t: float, voxel_size: float) -> tuple[np.ndarray, np.ndarray]:
        half = np.asarray(self.size, np.float64) * voxel_size / 2
        c = self.position_at(t)
        return c - half, c + half


@dataclass
class TemporalScene:
    frames: list[SemanticGrid]
    tracks: list[ObjectTrack]
    dt: float
    seed: int
    config: SceneConfig = field(default_factory=SceneConfig)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "dt": self.dt,
            "frames": len(self.frames),
            "tracks": [
                {
                    "label": t.label,
                    "label_name": self.frames[0].taxonomy.entries[t.label].name,
                    "size": list(t.size),
                    "start": list(t.start),
                    "velocity": list(t.velocity),
                }
                for t in self.tracks
            ],
        }


def _index_range(lo_world, hi_world, grid_lo, vs, n):
    """Indices whose cell centers lie in [lo_world, hi_world)."""
    i0 = math.ceil((lo_world - grid_lo) / vs - 0.5)
    i1 = math.ceil((hi_world - grid_lo) / vs - 0.5)
    return max(i0, 0), min(i1, n)


def _box_slices(lo, hi, grid: SemanticGrid):
    return tuple(
        slice(*_index_range(lo[a], hi[a], grid.origin[a], grid.voxel_size, grid.dims[a]))
        for a in range(3)
    )


def rasterize_track(track: ObjectTrack, grid_template: SemanticGrid, t: float) -> set:
    """Voxels whose centers fall inside the object's box at time ``t``."""
    lo, hi = track.aabb_at(t, grid_template.voxel_size)
    sx, sy, sz = _box_slices(lo, hi, grid_template)
    return {
        (i, j, k)
        for i in range(sx.start, sx.stop)
        for j in range(sy.start, sy.stop)
        for k in range(sz.start, sz.stop)
    }


def compose_frame(
    static: SemanticGrid, tracks: Sequence[ObjectTrack], t: float
) -> SemanticGrid:
    labels = static.labels.copy()
    # vehicles first so pedestrians overwrite them
    for label in (VEHICLE, PEDESTRIAN):
        for tr in tracks:
            if tr.label == label:
                lo, hi = tr.aabb_at(t, static.voxel_size)
                labels[_box_slices(lo, hi, static)] = label
    return static.with_labels(labels)


def _overlaps(lo_a, hi_a, lo_b, hi_b) -> bool:
    return bool(np.all(lo_a < hi_b) and np.all(lo_b < hi_a))


def _ego_box(cfg: SceneConfig):
    c = cfg.ego_clearance
    return np.array([-c, -c, -np.inf]), np.array([c, c, np.inf])


def _place_static(rng, cfg, grid_lo, grid_hi, size, ego_lo, ego_hi):
    vs = cfg.voxel_size
    ext = np.asarray(size, np.float64) * vs
    floor = grid_lo[2] + vs
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        # snap to the voxel lattice so static boxes are exact
        i = rng.randint(0, max(cfg.dims[0] - size[0], 0))
        j = rng.randint(0, max(cfg.dims[1] - size[1], 0))
        lo = np.array([grid_lo[0] + i * vs, grid_lo[1] + j * vs, floor])
        hi = lo + ext
        if np.any(hi > grid_hi + 1e-9):
            continue
        if _overlaps(lo, hi, ego_lo, ego_hi):
            continue
        return lo, hi
    raise SceneConfigError(f"cannot place static box of size {size} voxels")


def _place_track(rng, cfg, grid_lo, grid_hi, label, ego_lo, ego_hi) -> ObjectTrack:
    vs = cfg.voxel_size
    duration = (cfg.frames - 1) * cfg.dt
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        axis = rng.randint(0, 1)
        if label == VEHICLE:
            size = [8, 4, 3] if axis == 0 else [4, 8, 3]
            speed = rng.uniform(2.0, 8.0)
        else:
            size = [1, 1, 4]
            speed = rng.uniform(0.8, 1.6)
        vel = [0.0, 0.0, 0.0]
        vel[axis] = speed if rng.random() < 0.5 else -speed
        half = np.array(size, np.float64) * vs / 2
        if np.any(2 * half > grid_hi - grid_lo) or size[2] + 1 > cfg.dims[2]:
            raise SceneConfigError(f"grid too small for object of size {size} voxels")
        lo_c = grid_lo + half + np.maximum(-np.array(vel) * duration, 0)
        hi_c = grid_hi - half - np.maximum(np.array(vel) * duration, 0)
        if np.any(hi_c[:2] < lo_c[:2]):
            continue
        cx = rng.uniform(lo_c[0], hi_c[0])
        cy = rng.uniform(lo_c[1], hi_c[1])
        cz = grid_lo[2] + vs + half[2]
        start = np.array([cx, cy, cz])
        end = start + np.array(vel) * duration
        sweep_lo = np.minimum(start, end) - half
        sweep_hi = np.maximum(start, end) + half
        if np.any(sweep_lo < grid_lo) or np.any(sweep_hi > grid_hi):
            continue
        if _overlaps(sweep_lo, sweep_hi, ego_lo, ego_hi):
            continue
        return ObjectTrack(label, tuple(size), tuple(float(x) for x in start), tuple(vel))
    raise SceneConfigError(
        f"cannot place a {DEFAULT_TAXONOMY.entries[label].name} track inside the grid"
    )


def generate_scene(config: SceneConfig) -> TemporalScene:
    config.validate()
    rng = Xoshiro256(config.seed)
    origin = config.resolved_origin()
    labels = np.zeros(config.dims, np.uint8)
    labels[:, :, 0] = ROAD
    static = SemanticGrid(labels, config.voxel_size, origin, DEFAULT_TAXONOMY)
    grid_lo, grid_hi = static.aabb_min, static.aabb_max
    ego_lo, ego_hi = _ego_box(config)

    labels = static.labels.copy()
    max_h = config.dims[2] - 1
    for kind, count in ((BUILDING, config.n_buildings), (VEGETATION, config.n_vegetation)):
        for _ in range(count):
            if kind == BUILDING:
                size = (rng.randint(4, 10), rng.randint(4, 10), min(rng.randint(6, 14), max_h))
            else:
                size = (rng.randint(2, 4), rng.randint(2, 4), min(rng.randint(2, 5), max_h))
            if size[2] < 1 or size[0] > config.dims[0] or size[1] > config.dims[1]:
                raise SceneConfigError("grid too small for static boxes")
            lo, hi = _place_static(rng, config, grid_lo, grid_hi, size, ego_lo, ego_hi)
            labels[_box_slices(lo, hi, static)] = kind
    static = static.with_labels(labels)

    tracks = []
    for label, count in ((VEHICLE, config.n_vehicles), (PEDESTRIAN, config.n_pedestrians)):
        for _ in range(count):
            tracks.append(_place_track(rng, config, grid_lo, grid_hi, label, ego_lo, ego_hi))

    frames = [compose_frame(static, tracks, i * config.dt) for i in range(config.frames)]
    return TemporalScene(frames, tracks, config.dt, config.seed, config)
