"""Toy training clips built from rendered condition stacks.

There is no video and no VAE at this scale. Target latents come from a fixed
random "appearance model": per-label embeddings shaded by depth plus a
position-dependent texture. The latent is therefore a deterministic function
of the 3D semantics, which is what makes conditioning useful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..camera import CameraRig, default_rig
from ..conditions import ConditionStack, decode_semantic, mpi_one_hot, render_stack
from ..grid import DEFAULT_TAXONOMY, LabelTaxonomy
from ..scenegen import SceneConfig, generate_scene

APPEARANCE_SEED = 20240917


@dataclass
class Clip:
    """One training clip; frame axis is view-major (view 0 frames, then view 1, ...)."""

    z0: np.ndarray  # (F, c, h, w)
    group_a: np.ndarray  # (F, 4, h, w) semantic RGB + depth
    coord: np.ndarray  # (F, 3, h, w)
    mpi: np.ndarray  # (F, P * (L - 1), h, w)
    mask: np.ndarray  # (F, 1, h, w) binary
    n_views: int
    n_frames: int

    @property
    def shape(self):
        return self.z0.shape

    def view_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_views), self.n_frames)


def _pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool the last two axes by an integer factor."""
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"image {h}x{w} not divisible by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def appearance_latent(
    label_frac: np.ndarray,
    depth: np.ndarray,
    coord: np.ndarray,
    channels: int = 8,
    seed: int = APPEARANCE_SEED,
) -> np.ndarray:
    """(F, L, h, w) label fractions + depth + coordinates -> (F, c, h, w) latent."""
    rng = np.random.default_rng(seed)
    n_labels = label_frac.shape[1]
    emb = rng.normal(size=(n_labels, channels))
    tex = 0.5 * rng.normal(size=(3, channels))
    freq = rng.uniform(2.0, 5.0, size=3)
    base = np.einsum("flhw,lc->fchw", label_frac, emb)
    shade = 1.0 - 0.6 * depth
    texture = np.einsum("fahw,ac->fchw", np.sin(2 * np.pi * freq[None, :, None, None] * coord), tex)
    # texture only where something was hit
    hit = 1.0 - label_frac[:, :1]
    return base * shade + texture * hit


def clip_from_stacks(
    stacks: Sequence[ConditionStack],
    n_views: int,
    factor: int = 4,
    taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
    channels: int = 8,
) -> Clip:
    """Stacks ordered view-major -> downsampled clip arrays."""
    n = len(stacks)
    if n % n_views:
        raise ValueError("stack count must be a multiple of the view count")
    n_labels = len(taxonomy)
    sem = np.stack([s.semantic.transpose(2, 0, 1) / 255.0 for s in stacks])
    depth = np.stack([s.depth[None] for s in stacks])
    coord = np.stack([s.coordinate.transpose(2, 0, 1) for s in stacks])
    labels = np.stack([decode_semantic(s.semantic, taxonomy) for s in stacks])
    one_hot = (labels[:, None] == np.arange(n_labels)[None, :, None, None]).astype(np.float64)
    mpi = np.stack([mpi_one_hot(s.mpi, n_labels) for s in stacks])
    mask = np.stack([s.mask[None].astype(np.float64) for s in stacks])

    sem, depth, coord, one_hot, mpi = (_pool(x, factor) for x in (sem, depth, coord, one_hot, mpi))
    mask = (_pool(mask, factor) > 0).astype(np.float64)
    z0 = appearance_latent(one_hot, depth, coord, channels)
    return Clip(
        z0=z0,
        group_a=np.concatenate([sem, depth], axis=1),
        coord=coord,
        mpi=mpi,
        mask=mask,
        n_views=n_views,
        n_frames=n // n_views,
    )


@dataclass
class DatasetConfig:
    train_seeds: tuple[int, ...] = (11, 12, 13)
    heldout_seeds: tuple[int, ...] = (101,)
    frames_per_scene: int = 8
    clip_frames: int = 4
    views: tuple[str, ...] = ("front", "front_left")
    factor: int = 4
    d_max: float = 51.2
    planes: int = 8
    channels: int = 8
    n_vehicles: int = 5
    n_pedestrians: int = 8


def scene_clips(
    frames,
    rig: CameraRig,
    clip_frames: int,
    factor: int,
    d_max: float,
    planes: int,
    channels: int,
    taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
) -> list[Clip]:
    """Cut a rendered frame sequence into non-overlapping clips."""
    per_frame = [render_stack(g, rig, i, d_max, planes) for i, g in enumerate(frames)]
    clips = []
    for start in range(0, len(frames) - clip_frames + 1, clip_frames):
        stacks = [
            per_frame[start + f][v] for v in range(len(rig)) for f in range(clip_frames)
        ]
        clips.append(clip_from_stacks(stacks, len(rig), factor, taxonomy, channels))
    return clips


def build_dataset(cfg: DatasetConfig = DatasetConfig()) -> tuple[list[Clip], list[Clip]]:
    rig = default_rig().select(cfg.views)

    def clips_for(seeds):
        out = []
        for s in seeds:
            scene = generate_scene(
                SceneConfig(
                    seed=s,
                    frames=cfg.frames_per_scene,
                    n_vehicles=cfg.n_vehicles,
                    n_pedestrians=cfg.n_pedestrians,
                )
            )
            out += scene_clips(
                scene.frames, rig, cfg.clip_frames, cfg.factor, cfg.d_max, cfg.planes, cfg.channels
            )
        return out

    return clips_for(cfg.train_seeds), clips_for(cfg.heldout_seeds)
