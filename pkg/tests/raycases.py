"""Randomized grid/ray cases with an exact closed-form reference.

The reference intersects the ray with every occupied cell's box. Cases where
the ray grazes an occupied cell (chord shorter than the exclusion length) or
enters one right at ``d_max`` are rejected, because a fixed-step sampler
cannot resolve them.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from voxcond.camera import Ray
from voxcond.grid import DEFAULT_TAXONOMY, SemanticGrid


@dataclass
class Case:
    grid: SemanticGrid
    ray: Ray
    d_max: float
    step: float
    exact_t: Optional[float]  # closed-form first-hit distance, None on miss
    exact_voxel: Optional[tuple]
    unambiguous_voxel: bool  # hit point is clear of cell edges on the entry face


def box_intervals(grid, o, d):
    """Entry/exit distances of the ray against every occupied cell."""
    occ = np.argwhere(grid.labels > 0)
    lo = grid.aabb_min + occ * grid.voxel_size
    hi = lo + grid.voxel_size
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / d
        tb = (hi - o) / d
    inside = (o >= lo) & (o < hi)
    near = np.where(d == 0, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    far = np.where(d == 0, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    return occ, near.max(axis=1), far.min(axis=1)


def _edge_clearance(grid, p, axis_hint):
    """Distance from ``p`` to the nearest cell plane, ignoring the entry-face axis."""
    rel = (p - grid.aabb_min) / grid.voxel_size
    dist = np.abs(rel - np.round(rel)) * grid.voxel_size
    dist[axis_hint] = np.inf
    return float(dist.min())


def make_case(rng, exclusion=1e-4, max_tries=100) -> Case:
    for _ in range(max_tries):
        dims = tuple(int(x) for x in rng.integers(2, 11, 3))
        vs = float(np.float32(rng.uniform(0.25, 2.0)))
        origin = tuple(float(np.float32(x)) for x in rng.uniform(-5, 5, 3))
        density = rng.uniform(0.02, 0.3)
        labels = np.where(rng.random(dims) < density, rng.integers(1, 6, dims), 0).astype(np.uint8)
        grid = SemanticGrid(labels, vs, origin, DEFAULT_TAXONOMY)
        lo, hi = grid.aabb_min, grid.aabb_max
        span = hi - lo
        o = rng.uniform(lo - 0.5 * span, hi + 0.5 * span)
        if rng.random() < 0.15:
            d = np.zeros(3)
            d[rng.integers(3)] = rng.choice([-1.0, 1.0])
        else:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
        d_max = float(rng.uniform(0.5, 2.0 * np.linalg.norm(span)))
        step = vs / 64
        tol = max(exclusion, 2 * step)

        occ, t0, t1 = box_intervals(grid, o, d)
        t0c = np.maximum(t0, 0.0)
        t1c = np.minimum(t1, d_max)
        pierced = t1c > t0c
        chord = np.where(pierced, t1c - t0c, np.inf)
        if np.any(chord < tol):
            continue
        # entries close to d_max are a coin flip for a sampler
        if np.any(np.abs(t0 - d_max) < tol):
            continue
        if np.any(pierced & (np.abs(t1) < tol)):
            continue
        if not pierced.any():
            return Case(grid, Ray(o, d), d_max, step, None, None, True)
        j = int(np.argmin(np.where(pierced, t0c, np.inf)))
        t = float(t0c[j])
        p = o + t * d
        entry_axis = int(np.argmin(np.abs(((p - lo) / vs) - np.round((p - lo) / vs))))
        clear = t == 0.0 or _edge_clearance(grid, p, entry_axis) > exclusion
        # a second box entered at the same distance makes the voxel id a tie
        ties = np.count_nonzero(pierced & (np.abs(t0c - t) < exclusion)) > 1
        return Case(grid, Ray(o, d), d_max, step, t, tuple(int(i) for i in occ[j]), clear and not ties)
    raise RuntimeError("could not generate a non-grazing case")
