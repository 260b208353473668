import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raycases import make_case
from voxcond.camera import Ray
from voxcond.grid import DEFAULT_TAXONOMY, SemanticGrid, empty_grid
from voxcond.raycast import (
    first_hit,
    first_hit_batch,
    full_trace,
    oracle_first_hit,
    oracle_traced_voxels,
    slab_intersection,
    trace_batch,
)


def unit_grid(occupied, dims=(12, 3, 3), origin=(-0.5, -1.5, -1.5)):
    labels = np.zeros(dims, np.uint8)
    for idx, lab in occupied.items():
        labels[idx] = lab
    return SemanticGrid(labels, 1.0, origin, DEFAULT_TAXONOMY)


X = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]))


def test_empty_grid_never_hits(rng):
    g = empty_grid((8, 8, 8), 1.0, (-4, -4, -4))
    for _ in range(50):
        d = rng.normal(size=3)
        r = Ray(rng.uniform(-6, 6, 3), d / np.linalg.norm(d))
        assert first_hit(g, r, 30.0) is None
        assert oracle_first_hit(g, r, 30.0, 1 / 64) is None
        assert len(full_trace(g, r, 30.0)) == 0


def test_single_voxel_axis_hit():
    # voxel spanning [4.5, 5.5] x [-0.5, 0.5]^2
    g = unit_grid({(5, 1, 1): 3})
    hit = first_hit(g, X, 20.0)
    assert hit.distance == 4.5 and hit.label == 3 and hit.voxel == (5, 1, 1)
    assert np.allclose(hit.point, (4.5, 0, 0))
    o = oracle_first_hit(g, X, 20.0, 1 / 64)
    assert o.voxel == (5, 1, 1) and abs(o.distance - 4.5) < 1e-5


def test_hit_beyond_d_max_is_absent():
    g = unit_grid({(5, 1, 1): 3})
    assert first_hit(g, X, 4.4) is None
    assert first_hit(g, X, 4.5).distance == 4.5


def test_origin_inside_occupied_voxel_gives_zero():
    g = unit_grid({(0, 1, 1): 2})
    hit = first_hit(g, X, 5.0)
    assert hit.distance == 0.0 and hit.voxel == (0, 1, 1)


def test_ray_starting_outside_is_clipped():
    g = unit_grid({(2, 1, 1): 1})
    r = Ray(np.array([-10.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert first_hit(g, r, 100.0).distance == pytest.approx(11.5, abs=1e-12)


def test_ray_missing_aabb():
    g = unit_grid({(2, 1, 1): 1})
    r = Ray(np.array([0.0, 10.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert first_hit(g, r, 100.0) is None


def test_full_trace_two_voxels():
    g = unit_grid({(3, 1, 1): 1, (7, 1, 1): 4})
    tr = full_trace(g, X, 20.0)
    assert [h.distance for h in tr] == [2.5, 6.5]
    assert [h.label for h in tr] == [1, 4]
    assert tr.first == first_hit(g, X, 20.0)


def test_edge_tie_steps_x_first():
    # ray through the shared edge of cells along x and y
    labels = np.zeros((4, 4, 1), np.uint8)
    labels[2, 1, 0] = 1  # reached by stepping x first
    labels[1, 2, 0] = 2
    g = SemanticGrid(labels, 1.0, (0.0, 0.0, 0.0), DEFAULT_TAXONOMY)
    d = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    r = Ray(np.array([0.5, 0.5, 0.5]), d)
    tr = full_trace(g, r, 10.0)
    assert tr.first.voxel == (2, 1, 0)


def test_unit_direction_required():
    g = unit_grid({})
    with pytest.raises(ValueError):
        first_hit(g, Ray(np.zeros(3), np.array([2.0, 0, 0])), 1.0)
    with pytest.raises(ValueError):
        first_hit(g, X, 0.0)


def test_oracle_matches_closed_form_on_oblique_ray():
    labels = np.zeros((5, 5, 5), np.uint8)
    labels[3, 2, 1] = 2
    g = SemanticGrid(labels, 0.5, (0.0, 0.0, 0.0), DEFAULT_TAXONOMY)
    o = np.array([0.1, 0.2, 0.05])
    target = np.array([1.73, 1.26, 0.77])
    d = (target - o) / np.linalg.norm(target - o)
    t0, _ = slab_intersection([1.5, 1.0, 0.5], [2.0, 1.5, 1.0], o, d)
    hit = oracle_first_hit(g, Ray(o, d), 10.0, 0.5 / 64)
    assert abs(hit.distance - t0) < 1e-5
    assert abs(first_hit(g, Ray(o, d), 10.0).distance - t0) < 1e-9


def test_oracle_step_must_be_positive():
    with pytest.raises(ValueError):
        oracle_first_hit(unit_grid({}), X, 1.0, 0.0)


def test_dda_agrees_with_oracle_and_closed_form(rng):
    for _ in range(400):
        c = make_case(rng)
        hit = first_hit(c.grid, c.ray, c.d_max)
        oracle = oracle_first_hit(c.grid, c.ray, c.d_max, c.step)
        assert (hit is None) == (oracle is None) == (c.exact_t is None)
        if hit is None:
            continue
        assert abs(hit.distance - c.exact_t) < 1e-9
        assert abs(hit.distance - oracle.distance) <= max(1e-5, c.step)
        if c.unambiguous_voxel:
            assert hit.voxel == oracle.voxel == c.exact_voxel
        lo = c.grid.aabb_min + np.array(hit.voxel) * c.grid.voxel_size
        assert np.all(hit.point >= lo - 1e-6) and np.all(hit.point <= lo + c.grid.voxel_size + 1e-6)


def test_trace_matches_oracle_voxel_set(rng):
    for _ in range(150):
        c = make_case(rng)
        tr = full_trace(c.grid, c.ray, c.d_max)
        got = {h.voxel for h in tr}
        expect = oracle_traced_voxels(c.grid, c.ray, c.d_max, c.step)
        assert got == expect
        t = [h.distance for h in tr]
        assert all(a < b for a, b in zip(t, t[1:]))
        assert len(got) == len(tr)
        if tr.first is not None:
            assert tr.first == first_hit(c.grid, c.ray, c.d_max)


def test_increasing_d_max_only_adds_hits(rng):
    for _ in range(200):
        c = make_case(rng)
        short = first_hit(c.grid, c.ray, c.d_max)
        long = first_hit(c.grid, c.ray, 2 * c.d_max)
        if short is not None:
            assert long.voxel == short.voxel and long.distance == short.distance


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(*[st.floats(-30, 30)] * 3))
def test_translation_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    c = make_case(rng)
    # shift by whole float32-representable steps so both grids are exact
    shift = np.array([float(np.float32(s)) for s in shift])
    moved = SemanticGrid(
        c.grid.labels, c.grid.voxel_size, tuple(np.array(c.grid.origin) + shift), DEFAULT_TAXONOMY
    )
    real_shift = np.array(moved.origin) - np.array(c.grid.origin)
    a = first_hit(c.grid, c.ray, c.d_max)
    b = first_hit(moved, Ray(c.ray.origin + real_shift, c.ray.direction), c.d_max)
    assert (a is None) == (b is None)
    if a is not None:
        assert a.label == b.label
        assert abs(a.distance - b.distance) < 1e-9


def test_batch_matches_scalar(rng):
    g = SemanticGrid(
        np.where(rng.random((10, 10, 5)) < 0.15, 3, 0).astype(np.uint8),
        0.5,
        (-2.5, -2.5, -1.0),
        DEFAULT_TAXONOMY,
    )
    o = np.array([0.1, -0.2, 0.3])
    dirs = rng.normal(size=(300, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lab, dist, vox = first_hit_batch(g, o, dirs, 8.0)
    for i, d in enumerate(dirs):
        h = first_hit(g, Ray(o, d), 8.0)
        if h is None:
            assert lab[i] == 0 and np.isinf(dist[i])
        else:
            assert (lab[i], dist[i], tuple(vox[i])) == (h.label, h.distance, h.voxel)
    lab2, dist2, vox2, mpi = trace_batch(g, o, dirs, 8.0, 4)
    assert np.array_equal(lab, lab2) and np.array_equal(dist, dist2) and np.array_equal(vox, vox2)
    assert mpi.shape == (300, 4)


def test_slab_intersection_basics():
    assert slab_intersection([0, 0, 0], [1, 1, 1], [-1, 0.5, 0.5], [1, 0, 0]) == (1.0, 2.0)
    assert slab_intersection([0, 0, 0], [1, 1, 1], [-1, 2.0, 0.5], [1, 0, 0]) is None
    assert slab_intersection([0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5], [0, 0, 1]) == (0.0, 0.5)
