"""Voxel traversal: first-hit and full-trace queries, plus a sampling oracle.

The walk steps from cell to cell across the nearest axis boundary
(Amanatides-Woo style). Boundary crossings are recomputed from the cell index
each step rather than accumulated, so long rays do not drift. Ties between axes
step x before y before z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .camera import Ray
from .grid import SemanticGrid, voxels_of


@dataclass(frozen=True, eq=False)
class RayHit:
    voxel: tuple[int, int, int]
    label: int
    distance: float
    point: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, RayHit):
            return NotImplemented
        return (
            self.voxel == other.voxel
            and self.label == other.label
            and self.distance == other.distance
            and np.array_equal(self.point, other.point)
        )


@dataclass(frozen=True)
class RayTrace:
    hits: tuple[RayHit, ...]

    def __len__(self):
        return len(self.hits)

    def __iter__(self):
        return iter(self.hits)

    @property
    def first(self) -> Optional[RayHit]:
        return self.hits[0] if self.hits else None


@numba.njit(cache=True, nogil=True)
def _walk(labels, lo, vs, o, d, d_max, idx_out, t_out, lab_out, max_hits):
    """Write up to ``max_hits`` non-empty cells pierced by the ray; return the count."""
    dims = labels.shape
    t0 = 0.0
    t1 = d_max
    entry_axis = -1
    for a in range(3):
        hi = lo[a] + dims[a] * vs
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] >= hi:
                return 0
        else:
            ta = (lo[a] - o[a]) / d[a]
            tb = (hi - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
                entry_axis = a
            if tb < t1:
                t1 = tb
    if t0 > t1:
        return 0

    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    for a in range(3):
        step[a] = 1 if d[a] > 0.0 else -1
        if a == entry_axis:
            idx[a] = 0 if d[a] > 0.0 else dims[a] - 1
        else:
            rel = (o[a] + t0 * d[a] - lo[a]) / vs
            i = int(math.floor(rel))
            # a start exactly on a face, heading down, pierces the lower cell
            if d[a] < 0.0 and rel == i:
                i -= 1
            idx[a] = min(max(i, 0), dims[a] - 1)

    t_cell = t0
    n = 0
    while True:
        lab = labels[idx[0], idx[1], idx[2]]
        if lab != 0:
            idx_out[n, 0] = idx[0]
            idx_out[n, 1] = idx[1]
            idx_out[n, 2] = idx[2]
            t_out[n] = t_cell
            lab_out[n] = lab
            n += 1
            if n >= max_hits:
                return n
        # next boundary crossing per axis, recomputed from the index
        best = np.inf
        axis = -1
        for a in range(3):
            if d[a] != 0.0:
                face = lo[a] + (idx[a] + (1 if step[a] > 0 else 0)) * vs
                ta = (face - o[a]) / d[a]
                if ta < best:
                    best = ta
                    axis = a
        if axis < 0 or best > t1:
            return n
        idx[axis] += step[axis]
        if idx[axis] < 0 or idx[axis] >= dims[axis]:
            return n
        t_cell = max(best, t_cell)


@numba.njit(cache=True, nogil=True)
def _first_hit_batch(labels, lo, vs, o, dirs, d_max):
    n = dirs.shape[0]
    lab = np.zeros(n, np.uint8)
    dist = np.full(n, np.inf)
    vox = np.full((n, 3), -1, np.int64)
    idx_buf = np.empty((1, 3), np.int64)
    t_buf = np.empty(1)
    lab_buf = np.empty(1, np.uint8)
    for r in range(n):
        if _walk(labels, lo, vs, o, dirs[r], d_max, idx_buf, t_buf, lab_buf, 1) > 0:
            lab[r] = lab_buf[0]
            dist[r] = t_buf[0]
            vox[r, 0] = idx_buf[0, 0]
            vox[r, 1] = idx_buf[0, 1]
            vox[r, 2] = idx_buf[0, 2]
    return lab, dist, vox


@numba.njit(cache=True, nogil=True)
def _trace_batch(labels, lo, vs, o, dirs, d_max, planes):
    """One full traversal per ray feeding both the first-hit outputs and the MPI."""
    n = dirs.shape[0]
    cap = labels.shape[0] + labels.shape[1] + labels.shape[2] + 3
    lab = np.zeros(n, np.uint8)
    dist = np.full(n, np.inf)
    vox = np.full((n, 3), -1, np.int64)
    mpi = np.zeros((n, planes), np.uint8)
    idx_buf = np.empty((cap, 3), np.int64)
    t_buf = np.empty(cap)
    lab_buf = np.empty(cap, np.uint8)
    for r in range(n):
        k = _walk(labels, lo, vs, o, dirs[r], d_max, idx_buf, t_buf, lab_buf, cap)
        if k == 0:
            continue
        lab[r] = lab_buf[0]
        dist[r] = t_buf[0]
        vox[r, 0] = idx_buf[0, 0]
        vox[r, 1] = idx_buf[0, 1]
        vox[r, 2] = idx_buf[0, 2]
        for h in range(k):
            p = _slab(t_buf[h], d_max, planes)
            if mpi[r, p] == 0:
                mpi[r, p] = lab_buf[h]
    return lab, dist, vox, mpi


@numba.njit(cache=True, nogil=True)
def _slab(t, d_max, planes):
    p = int(math.floor(t / d_max * planes))
    return min(max(p, 0), planes - 1)


def _grid_args(grid: SemanticGrid):
    return grid.labels, grid.aabb_min, float(grid.voxel_size)


def _check_ray(ray: Ray, d_max: float):
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    o = np.asarray(ray.origin, np.float64)
    d = np.asarray(ray.direction, np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit length")
    return o, d


def _hit(ray_o, ray_d, voxel, label, t) -> RayHit:
    return RayHit(tuple(int(i) for i in voxel), int(label), float(t), ray_o + t * ray_d)


def first_hit(grid: SemanticGrid, ray: Ray, d_max: float) -> Optional[RayHit]:
    o, d = _check_ray(ray, d_max)
    lab, dist, vox = _first_hit_batch(*_grid_args(grid), o, d[None, :], float(d_max))
    if lab[0] == 0:
        return None
    return _hit(o, d, vox[0], lab[0], dist[0])


def full_trace(grid: SemanticGrid, ray: Ray, d_max: float) -> RayTrace:
    o, d = _check_ray(ray, d_max)
    labels, lo, vs = _grid_args(grid)
    cap = sum(grid.dims) + 3
    idx = np.empty((cap, 3), np.int64)
    t = np.empty(cap)
    lab = np.empty(cap, np.uint8)
    k = _walk(labels, lo, vs, o, d, float(d_max), idx, t, lab, cap)
    return RayTrace(tuple(_hit(o, d, idx[i], lab[i], t[i]) for i in range(k)))


def first_hit_batch(grid: SemanticGrid, origin, dirs: np.ndarray, d_max: float):
    """First hits for many rays sharing one origin.

    Returns ``(labels, distances, voxels)``; misses have label 0, distance inf
    and voxel (-1, -1, -1).
    """
    dirs = np.ascontiguousarray(dirs, np.float64).reshape(-1, 3)
    return _first_hit_batch(*_grid_args(grid), np.asarray(origin, np.float64), dirs, float(d_max))


def trace_batch(grid: SemanticGrid, origin, dirs: np.ndarray, d_max: float, planes: int):
    """First hits plus per-slab nearest labels, from a single traversal per ray."""
    if planes < 1:
        raise ValueError("plane count must be >= 1")
    dirs = np.ascontiguousarray(dirs, np.float64).reshape(-1, 3)
    return _trace_batch(
        *_grid_args(grid), np.asarray(origin, np.float64), dirs, float(d_max), int(planes)
    )


# -- verification oracle ---------------------------------------------------


def _occupied(grid: SemanticGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx, inside = voxels_of(grid, points)
    lab = np.zeros(len(points), np.uint8)
    ii = idx[inside]
    lab[inside] = grid.labels[ii[:, 0], ii[:, 1], ii[:, 2]]
    return lab, idx


def oracle_first_hit(
    grid: SemanticGrid, ray: Ray, d_max: float, step: float, tol: float = 1e-6
) -> Optional[RayHit]:
    """Dense fixed-step march with bisection refinement of the entry distance.

    Misses any occupied cell whose chord is shorter than ``step``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    o = np.asarray(ray.origin, np.float64)
    d = np.asarray(ray.direction, np.float64)
    ts = np.arange(0.0, d_max, step)
    ts = np.append(ts, d_max)
    lab, _ = _occupied(grid, o + ts[:, None] * d)
    hit = np.flatnonzero(lab)
    if hit.size == 0:
        return None
    j = int(hit[0])
    if j == 0:
        t = 0.0
    else:
        lo_t, hi_t = ts[j - 1], ts[j]
        while hi_t - lo_t > tol:
            mid = 0.5 * (lo_t + hi_t)
            if _occupied(grid, (o + mid * d)[None])[0][0]:
                hi_t = mid
            else:
                lo_t = mid
        t = hi_t
    lab_t, idx = _occupied(grid, (o + t * d)[None])
    return RayHit(tuple(int(i) for i in idx[0]), int(lab_t[0]), float(t), o + t * d)


def oracle_traced_voxels(grid: SemanticGrid, ray: Ray, d_max: float, step: float) -> set:
    """Set of non-empty voxels visited by a dense fixed-step march."""
    o = np.asarray(ray.origin, np.float64)
    d = np.asarray(ray.direction, np.float64)
    ts = np.append(np.arange(0.0, d_max, step), d_max)
    lab, idx = _occupied(grid, o + ts[:, None] * d)
    return {tuple(int(i) for i in v) for v in idx[lab != 0]}


def slab_intersection(lo, hi, o, d) -> Optional[tuple[float, float]]:
    """Closed-form ray/AABB entry and exit distances, or None when missed."""
    lo, hi, o, d = (np.asarray(x, np.float64) for x in (lo, hi, o, d))
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / d
        tb = (hi - o) / d
    t_near = np.where(d == 0, np.where((o >= lo) & (o < hi), -np.inf, np.inf), np.minimum(ta, tb))
    t_far = np.where(d == 0, np.where((o >= lo) & (o < hi), np.inf, -np.inf), np.maximum(ta, tb))
    t0, t1 = float(np.max(t_near)), float(np.min(t_far))
    if t0 > t1 or t1 < 0:
        return None
    return max(t0, 0.0), t1
