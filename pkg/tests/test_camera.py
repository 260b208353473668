import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxcond.camera import (
    CameraRig,
    Extrinsics,
    Intrinsics,
    default_rig,
    pixel_ray,
    pixel_rays,
    project,
)

K = Intrinsics(100.0, 120.0, 80.0, 48.0, 160, 96)


def rotation_from(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    x, y, z = axis
    skew = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + math.sin(angle) * skew + (1 - math.cos(angle)) * skew @ skew


def test_principal_ray_is_camera_z():
    r = pixel_ray(K, Extrinsics.identity(), (K.cx, K.cy))
    assert np.allclose(r.direction, (0, 0, 1))
    assert np.allclose(r.origin, 0)


def test_one_focal_offset_is_45_degrees():
    r = pixel_ray(K, Extrinsics.identity(), (K.cx + K.fx, K.cy))
    assert np.allclose(r.direction, np.array([1, 0, 1]) / math.sqrt(2))


def test_directions_are_unit(rng):
    extr = Extrinsics(rotation_from(rng.normal(size=3), 1.1), rng.normal(size=3))
    d = pixel_rays(K, extr)
    assert d.shape == (96, 160, 3)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)


def test_pixel_rays_match_scalar_rays():
    extr = default_rig()["front_left"].extrinsics
    d = pixel_rays(K, extr)
    for i, j in [(0, 0), (10, 77), (95, 159)]:
        assert np.allclose(d[i, j], pixel_ray(K, extr, (j + 0.5, i + 0.5)).direction, atol=1e-15)


def test_non_finite_pixel_rejected():
    with pytest.raises(ValueError):
        pixel_ray(K, Extrinsics.identity(), (np.inf, 3.0))


def test_point_behind_camera_is_absent():
    assert project(K, Extrinsics.identity(), (0.0, 0.0, -1.0)) is None
    assert project(K, Extrinsics.identity(), (1.0, 0.0, 0.0)) is None


def test_point_outside_image_is_absent():
    assert project(K, Extrinsics.identity(), (100.0, 0.0, 1.0)) is None


def test_project_inverts_pixel_ray():
    extr = default_rig()["back"].extrinsics
    r = pixel_ray(K, extr, (33.3, 70.1))
    u, v, depth = project(K, extr, r.origin + 7.5 * r.direction)
    assert abs(u - 33.3) < 1e-6 and abs(v - 70.1) < 1e-6
    assert abs(depth - 7.5) < 1e-9


@settings(max_examples=300, deadline=None)
@given(
    st.tuples(*[st.floats(-1, 1)] * 3),
    st.floats(-math.pi, math.pi),
    st.tuples(*[st.floats(-20, 20)] * 3),
    st.floats(0.02, 0.98),
    st.floats(0.02, 0.98),
    st.floats(0.1, 80.0),
)
def test_frustum_round_trip(axis, angle, t, fu, fv, dist):
    if np.linalg.norm(axis) < 1e-3:
        axis = (0, 0, 1)
    extr = Extrinsics(rotation_from(axis, angle), t)
    # sample a point inside the frustum, then go project -> ray -> march
    r0 = pixel_ray(K, extr, (fu * K.width, fv * K.height))
    p = r0.origin + dist * r0.direction
    u, v, depth = project(K, extr, p)
    r = pixel_ray(K, extr, (u, v))
    assert np.linalg.norm(r.origin + depth * r.direction - p) < 1e-6


def test_extrinsics_validation():
    with pytest.raises(ValueError):
        Extrinsics(np.diag([1.0, 1.0, 1.001]), np.zeros(3))
    with pytest.raises(ValueError):
        Extrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Extrinsics(np.eye(3), (0, 0, np.nan))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        Intrinsics(1.0, 1.0, 4.0, 1.0, 4, 4)


def test_default_rig_layout():
    rig = default_rig()
    assert rig.names == ["front", "front_left", "back_left", "back", "back_right", "front_right"]
    for i, v in enumerate(rig.views):
        yaw = math.radians(60 * i)
        fwd = pixel_ray(v.intrinsics, v.extrinsics, (80, 48)).direction
        assert np.allclose(fwd, (math.cos(yaw), math.sin(yaw), 0), atol=1e-12)
        assert (v.intrinsics.width, v.intrinsics.height) == (160, 96)
    # image "down" is ego -z for a level camera
    top = pixel_ray(K, rig["front"].extrinsics, (80, 0)).direction
    assert top[2] > 0


def test_rig_json_round_trip_and_hash():
    rig = default_rig()
    back = CameraRig.from_json(rig.to_json())
    assert back.names == rig.names
    assert back.sha256() == rig.sha256()
    assert rig.select(["front"]).sha256() != rig.sha256()


def test_rig_rejects_duplicate_names():
    v = default_rig().views[0]
    with pytest.raises(ValueError):
        CameraRig((v, v))
    with pytest.raises(ValueError):
        CameraRig(())
