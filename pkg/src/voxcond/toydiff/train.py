"""Rectified-flow training and sampling for the toy denoiser.

The loss and its gradient come from :mod:`voxcond.numerics`; torch only
backpropagates that gradient through the network. Optimisation is plain
gradient descent with a fixed step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .. import numerics
from .data import Clip
from .model import GROUPS, ToyDenoiser

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.5
    gamma: float = 2.0
    cond_dropout: float = 0.1
    k_max: int = 1
    mode: str = "base"  # "base" or "adapter"
    groups: tuple[str, ...] = GROUPS
    seed: int = 0
    smooth: int = 25
    clip_norm: float = 1.0

    def __post_init__(self):
        self.groups = tuple(self.groups)
        if self.mode not in ("base", "adapter"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if any(g not in GROUPS for g in self.groups):
            raise ValueError(f"unknown condition group in {self.groups}")


@dataclass
class TrainResult:
    model: ToyDenoiser
    log: list[dict]

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.log])

    def smoothed(self, window: int = 25) -> np.ndarray:
        x = self.losses
        if len(x) < window:
            return np.array([x.mean()])
        return np.convolve(x, np.ones(window) / window, mode="valid")

    def jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.log)


DTYPE = torch.float32


def _tensors(clip: Clip):
    return tuple(
        torch.from_numpy(x).to(DTYPE) for x in (clip.z0, clip.group_a, clip.coord, clip.mpi)
    )


def _frame_times(keep: torch.Tensor, t: float) -> torch.Tensor:
    """Per-frame flow time; clean frames sit at t = 0."""
    return torch.where(keep, torch.zeros((), dtype=DTYPE), torch.full((), t, dtype=DTYPE))


def frame_mask_for(clip: Clip, k: int) -> np.ndarray:
    """First-k masking applied per view on the view-major frame axis."""
    return np.tile(numerics.first_k_mask(clip.n_frames, k), clip.n_views)


def _check_clip(model: ToyDenoiser, clip: Clip):
    cfg = model.cfg
    expect = (cfg.channels, cfg.height, cfg.width_px)
    got = (clip.z0.shape[1], *clip.z0.shape[2:])
    if got != expect or clip.mpi.shape[1] != cfg.mpi_channels:
        raise ValueError(f"clip resolution/channels {got} do not match model {expect}")


def train(
    clips: Sequence[Clip],
    model: ToyDenoiser,
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Train in place and return the model with its per-step log.

    ``mode="adapter"`` enables the adapters and updates only their weights.
    """
    if not clips:
        raise ValueError("need at least one clip")
    for clip in clips:
        _check_clip(model, clip)
    params = numerics.MaskedLossParams(cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)

    if cfg.mode == "adapter":
        model.use_adapter = True
        for _, p in model.base_parameters():
            p.requires_grad_(False)
        trainable = model.adapter_parameters()
    else:
        model.use_adapter = False
        trainable = [p for _, p in model.base_parameters()]
    opt = torch.optim.SGD(trainable, lr=cfg.lr, momentum=0.0)

    records = []
    for step in range(cfg.steps):
        clip = clips[int(rng.integers(len(clips)))]
        z0, ga, co, mp = _tensors(clip)
        k = int(rng.integers(0, cfg.k_max + 1))
        fmask = frame_mask_for(clip, k)
        t = float(rng.uniform())
        eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
        keep = torch.from_numpy(fmask == 0)
        z_t = (1 - t) * z0 + t * eps
        z_t[keep] = z0[keep]
        t_frames = _frame_times(keep, t)

        drop = rng.uniform() < cfg.cond_dropout
        if drop:
            ga, co, mp = torch.zeros_like(ga), torch.zeros_like(co), torch.zeros_like(mp)
        cond = model.encode(ga, co, mp, cfg.groups)
        v = model(z_t, t_frames, cond, clip.n_views)

        target = (eps - z0).numpy().astype(np.float64)
        e = target - v.detach().numpy().astype(np.float64)
        loss, grad_e = numerics.masked_diffusion_loss(e, clip.mask, params, fmask)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at step {step} (lr={cfg.lr}, t={t:.3f}, k={k})"
            )
        opt.zero_grad(set_to_none=True)
        v.backward(torch.from_numpy(-grad_e).to(DTYPE))
        if cfg.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(trainable, cfg.clip_norm)
        opt.step()

        gen_frames = fmask.astype(bool)
        sq = (e * e)[gen_frames]
        m = np.broadcast_to(clip.mask, e.shape)[gen_frames].astype(bool)
        records.append(
            {
                "step": step,
                "loss": loss,
                "fg_loss": float(sq[m].mean()) if m.any() else 0.0,
                "bg_loss": float(sq[~m].mean()) if (~m).any() else 0.0,
            }
        )
        if step % 100 == 0:
            log.debug("step %d loss %.5f", step, loss)

    for p in model.parameters():
        p.requires_grad_(True)
    return TrainResult(model, records)


@torch.no_grad()
def sample(
    model: ToyDenoiser,
    clip: Clip,
    k: int = 1,
    steps: int = 8,
    cfg_scale: float = 1.0,
    seed: int = 0,
    groups: Sequence[str] = GROUPS,
    conditional: bool = True,
) -> np.ndarray:
    """Euler-integrate from noise at t=1 to t=0, holding the first ``k`` frames of each view clean.

    Each step combines the conditional prediction with an unconditional one
    (condition inputs zeroed) by classifier-free guidance. With
    ``conditional=False`` only the unconditional prediction is used.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    _check_clip(model, clip)
    fmask = frame_mask_for(clip, k)
    z0, ga, co, mp = _tensors(clip)
    if not fmask.any():
        return clip.z0.copy()
    keep = torch.from_numpy(fmask == 0)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    z[keep] = z0[keep]
    cond = model.encode(ga, co, mp, groups)
    uncond = model.encode(torch.zeros_like(ga), torch.zeros_like(co), torch.zeros_like(mp), groups)
    ts = numerics.rf_timesteps(steps)
    for t, t_next in zip(ts[:-1], ts[1:]):
        t_frames = _frame_times(keep, t)
        v_u = model(z, t_frames, uncond, clip.n_views)
        if conditional:
            v_c = model(z, t_frames, cond, clip.n_views)
            v = numerics.cfg_combine(v_c, v_u, cfg_scale)
        else:
            v = v_u
        z = z + (t_next - t) * v
        z[keep] = z0[keep]
    return z.numpy().astype(np.float64)


def reconstruction_error(
    model: ToyDenoiser,
    clips: Sequence[Clip],
    k: int = 1,
    steps: int = 8,
    cfg_scale: float = 1.0,
    seed: int = 0,
    groups: Sequence[str] = GROUPS,
    conditional: bool = True,
) -> dict:
    """Sampled-vs-true MSE over generated frames, split by the foreground mask."""
    fg, bg = [], []
    for i, clip in enumerate(clips):
        out = sample(model, clip, k, steps, cfg_scale, seed + i, groups, conditional)
        gen_frames = frame_mask_for(clip, k).astype(bool)
        sq = ((out - clip.z0) ** 2)[gen_frames]
        m = np.broadcast_to(clip.mask, out.shape)[gen_frames].astype(bool)
        fg.append(sq[m])
        bg.append(sq[~m])
    fg_all, bg_all = np.concatenate(fg), np.concatenate(bg)
    return {
        "fg_mse": float(fg_all.mean()) if fg_all.size else 0.0,
        "bg_mse": float(bg_all.mean()) if bg_all.size else 0.0,
        "all_mse": float(np.concatenate([fg_all, bg_all]).mean()),
    }


@torch.no_grad()
def denoise_error(
    model: ToyDenoiser,
    clips: Sequence[Clip],
    times: Sequence[float] = (0.3, 0.6, 0.9),
    k: int = 1,
    seed: int = 0,
    groups: Sequence[str] = GROUPS,
    conditional: bool = True,
) -> dict:
    """One-step reconstruction ``z_t - t * v`` against the true clip at fixed noise levels.

    Lower variance than :func:`reconstruction_error`; noise is drawn from ``seed``.
    """
    gen = torch.Generator().manual_seed(seed)
    fg, bg = [], []
    for clip in clips:
        _check_clip(model, clip)
        z0, ga, co, mp = _tensors(clip)
        if not conditional:
            ga, co, mp = torch.zeros_like(ga), torch.zeros_like(co), torch.zeros_like(mp)
        cond = model.encode(ga, co, mp, groups)
        fmask = frame_mask_for(clip, k)
        keep = torch.from_numpy(fmask == 0)
        m = np.broadcast_to(clip.mask, clip.z0.shape)[fmask.astype(bool)].astype(bool)
        for t in times:
            eps = torch.randn(z0.shape, generator=gen, dtype=DTYPE)
            z_t = (1 - t) * z0 + t * eps
            z_t[keep] = z0[keep]
            v = model(z_t, _frame_times(keep, t), cond, clip.n_views)
            x0 = (z_t - t * v).numpy().astype(np.float64)
            sq = ((x0 - clip.z0) ** 2)[fmask.astype(bool)]
            fg.append(sq[m])
            bg.append(sq[~m])
    fg_all, bg_all = np.concatenate(fg), np.concatenate(bg)
    return {
        "fg_mse": float(fg_all.mean()) if fg_all.size else 0.0,
        "bg_mse": float(bg_all.mean()) if bg_all.size else 0.0,
        "all_mse": float(np.concatenate([fg_all, bg_all]).mean()),
    }
