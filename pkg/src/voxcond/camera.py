"""Pinhole cameras and the multi-camera rig.

Camera frame: +z forward, +x right, +y down. Extrinsics map camera to ego.
Rays are parameterised by Euclidean distance from the camera center.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

ORTHO_TOL = 1e-9


class Ray(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics for an image resized by ``factor`` (e.g. 0.25 for 4x downsampling)."""
        return Intrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
        )

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True, eq=False)
class Extrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def looking(cls, yaw: float, position: Sequence[float]) -> "Extrinsics":
        """Level camera looking along ego heading ``yaw`` (radians, CCW from +x)."""
        c, s = math.cos(yaw), math.sin(yaw)
        right = (s, -c, 0.0)
        down = (0.0, 0.0, -1.0)
        forward = (c, s, 0.0)
        return cls(np.array([right, down, forward]).T, np.asarray(position, float))


@dataclass(frozen=True)
class View:
    name: str
    intrinsics: Intrinsics
    extrinsics: Extrinsics


@dataclass(frozen=True)
class CameraRig:
    views: tuple[View, ...]

    def __post_init__(self):
        views = tuple(self.views)
        object.__setattr__(self, "views", views)
        if not views:
            raise ValueError("rig needs at least one view")
        names = [v.name for v in views]
        if len(set(names)) != len(names):
            raise ValueError("view names must be unique")

    def __len__(self):
        return len(self.views)

    def __getitem__(self, name: str) -> View:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.views]

    def select(self, names: Sequence[str]) -> "CameraRig":
        return CameraRig(tuple(self[n] for n in names))

    def scaled(self, factor: float) -> "CameraRig":
        return CameraRig(
            tuple(View(v.name, v.intrinsics.scaled(factor), v.extrinsics) for v in self.views)
        )

    def to_list(self) -> list[dict]:
        out = []
        for v in self.views:
            k = v.intrinsics
            out.append(
                {
                    "name": v.name,
                    "fx": k.fx,
                    "fy": k.fy,
                    "cx": k.cx,
                    "cy": k.cy,
                    "width": k.width,
                    "height": k.height,
                    "rotation": [float(x) for x in v.extrinsics.rotation.ravel()],
                    "translation": [float(x) for x in v.extrinsics.translation],
                }
            )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2)

    @classmethod
    def from_list(cls, items: list[dict]) -> "CameraRig":
        views = []
        for d in items:
            k = Intrinsics(
                float(d["fx"]),
                float(d["fy"]),
                float(d["cx"]),
                float(d["cy"]),
                int(d["width"]),
                int(d["height"]),
            )
            rot = np.array(d["rotation"], dtype=np.float64)
            if rot.size != 9:
                raise ValueError("rotation needs 9 row-major floats")
            views.append(View(d["name"], k, Extrinsics(rot.reshape(3, 3), d["translation"])))
        return cls(tuple(views))

    @classmethod
    def from_json(cls, text: str) -> "CameraRig":
        return cls.from_list(json.loads(text))

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_list(), sort_keys=True).encode()).hexdigest()


DEFAULT_VIEW_NAMES = ("front", "front_left", "back_left", "back", "back_right", "front_right")


def default_rig(
    width: int = 160,
    height: int = 96,
    focal: float = 100.0,
    mount_height: float = 1.5,
    mount_radius: float = 1.0,
) -> CameraRig:
    """Six level cameras at 60 degree yaw increments around the ego vehicle."""
    k = Intrinsics(focal, focal, width / 2, height / 2, width, height)
    views = []
    for i, name in enumerate(DEFAULT_VIEW_NAMES):
        yaw = math.radians(60.0 * i)
        pos = (mount_radius * math.cos(yaw), mount_radius * math.sin(yaw), mount_height)
        views.append(View(name, k, Extrinsics.looking(yaw, pos)))
    return CameraRig(tuple(views))


def pixel_ray(intr: Intrinsics, extr: Extrinsics, pixel) -> Ray:
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError("pixel coordinates must be finite")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d = extr.rotation @ d_cam
    return Ray(extr.translation.copy(), d / np.linalg.norm(d))


def pixel_grid(intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) at pixel centers, each of shape (height, width)."""
    u = np.arange(intr.width, dtype=np.float64) + 0.5
    v = np.arange(intr.height, dtype=np.float64) + 0.5
    return np.meshgrid(u, v)


def pixel_rays(intr: Intrinsics, extr: Extrinsics) -> np.ndarray:
    """Unit ego-frame directions through every pixel center, shape (height, width, 3)."""
    u, v = pixel_grid(intr)
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], -1)
    d = d_cam @ extr.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project(intr: Intrinsics, extr: Extrinsics, point) -> Optional[tuple[float, float, float]]:
    p = np.asarray(point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    rel = p - extr.translation
    x, y, z = extr.rotation.T @ rel
    if z <= 0:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        return None
    return float(u), float(v), float(np.linalg.norm(rel))
