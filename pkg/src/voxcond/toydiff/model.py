"""Toy ControlNet-style velocity predictor.

Topology: an input conv, ``n_blocks`` base blocks, a parallel stack of control
blocks fed with the backbone features plus the fused condition map, and one
zero-initialised 1x1 projection per control block whose output is added to
the matching base block. Optional consistency adapters wrap the projected
control features of selected blocks.

Frames from all views are stacked on the leading axis (view-major); temporal
operators reshape to (views, frames, ...) so they never mix views.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F

GROUPS = ("sem_dep", "mpi_coor")


@dataclass
class ToyConfig:
    channels: int = 8
    width: int = 16
    enc_width: int = 8
    n_blocks: int = 2
    adapter_blocks: tuple[int, ...] = (0, 1)
    heads: int = 2
    planes: int = 8
    n_labels: int = 6
    n_views: int = 2
    frames: int = 4
    height: int = 24
    width_px: int = 40
    time_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        self.adapter_blocks = tuple(int(i) for i in self.adapter_blocks)
        if any(not 0 <= i < self.n_blocks for i in self.adapter_blocks):
            raise ValueError("adapter placement outside the control blocks")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    @property
    def mpi_channels(self) -> int:
        return self.planes * (self.n_labels - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def zero_conv(cin: int, cout: int) -> nn.Conv2d:
    conv = nn.Conv2d(cin, cout, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = t[:, None] * 1000.0 * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class Block(nn.Module):
    def __init__(self, width: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.time = nn.Linear(time_dim, width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x, temb):
        h = F.silu(self.conv1(x) + self.time(temb)[:, :, None, None])
        return x + self.conv2(h)


class ConditionEncoder(nn.Module):
    """Two condition groups, concatenated on channels and fused by a zero conv.

    Group A encodes semantic RGB + depth with one shared encoder. Group B
    encodes coordinates and the MPI through separate paths.
    """

    def __init__(self, cfg: ToyConfig):
        super().__init__()
        e = cfg.enc_width
        self.enc_a = nn.Sequential(
            nn.Conv2d(4, e, 3, padding=1), nn.SiLU(), nn.Conv2d(e, e, 3, padding=1)
        )
        self.enc_coord = nn.Sequential(
            nn.Conv2d(3, e, 3, padding=1), nn.SiLU(), nn.Conv2d(e, e, 3, padding=1)
        )
        self.enc_mpi = nn.Sequential(
            nn.Conv2d(cfg.mpi_channels, e, 1), nn.SiLU(), nn.Conv2d(e, e, 3, padding=1)
        )
        self.fusion = zero_conv(3 * e, cfg.width)

    def group_features(self, group_a, coord, mpi):
        feat_a = self.enc_a(group_a)
        feat_b = torch.cat([self.enc_coord(coord), self.enc_mpi(mpi)], dim=1)
        return feat_a, feat_b

    def forward(self, group_a, coord, mpi):
        feat_a, feat_b = self.group_features(group_a, coord, mpi)
        return self.fusion(torch.cat([feat_a, feat_b], dim=1))


class TemporalAttention(nn.Module):
    """Full (non-causal) multi-head self-attention over frames at each pixel."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.last_weights: Optional[torch.Tensor] = None

    def forward(self, x, n_views: int):
        fv, c, h, w = x.shape
        f = fv // n_views
        tokens = x.reshape(n_views, f, c, h * w).permute(0, 3, 1, 2).reshape(-1, f, c)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        d = c // self.heads

        def split(t):
            return t.reshape(t.shape[0], f, self.heads, d).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        self.last_weights = weights.detach()
        y = (weights @ v).transpose(1, 2).reshape(-1, f, c)
        y = self.out(y)
        return y.reshape(n_views, h * w, f, c).permute(0, 2, 3, 1).reshape(fv, c, h, w)


class ConsistencyAdapter(nn.Module):
    """Spatial conv, temporal conv, temporal attention, then a zero-init residual."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.spatial_dw = nn.Conv2d(width, width, 3, padding=1, groups=width)
        self.spatial_pw = nn.Conv2d(width, width, 1)
        self.temporal = nn.Conv1d(width, width, 3, padding=1)
        self.attention = TemporalAttention(width, heads)
        self.proj = zero_conv(width, width)

    def forward(self, c, n_views: int):
        fv, w, hh, ww = c.shape
        f = fv // n_views
        h = F.silu(self.spatial_pw(self.spatial_dw(c)))
        seq = h.reshape(n_views, f, w, hh * ww).permute(0, 3, 2, 1).reshape(-1, w, f)
        seq = F.silu(self.temporal(seq))
        h = seq.reshape(n_views, hh * ww, w, f).permute(0, 3, 2, 1).reshape(fv, w, hh, ww)
        h = h + self.attention(h, n_views)
        return c + self.proj(h)


class ToyDenoiser(nn.Module):
    def __init__(self, cfg: ToyConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        w = cfg.width
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.view_embed = nn.Parameter(0.1 * torch.randn(cfg.n_views, w))
        self.conv_in = nn.Conv2d(cfg.channels, w, 3, padding=1)
        self.base = nn.ModuleList(Block(w, cfg.time_dim) for _ in range(cfg.n_blocks))
        self.encoder = ConditionEncoder(cfg)
        self.control = nn.ModuleList(Block(w, cfg.time_dim) for _ in range(cfg.n_blocks))
        # ControlNet-style: control blocks start as copies of the base blocks
        for ctrl, base in zip(self.control, self.base):
            ctrl.load_state_dict(base.state_dict())
        self.control_proj = nn.ModuleList(zero_conv(w, w) for _ in range(cfg.n_blocks))
        self.adapters = nn.ModuleDict(
            {str(i): ConsistencyAdapter(w, cfg.heads) for i in cfg.adapter_blocks}
        )
        self.conv_out = nn.Conv2d(w, cfg.channels, 3, padding=1)
        self.use_adapter = False

    def base_parameters(self):
        """Everything except the adapters."""
        for name, p in self.named_parameters():
            if not name.startswith("adapters."):
                yield name, p

    def adapter_parameters(self):
        return list(self.adapters.parameters())

    def checksum(self, which: str = "base") -> str:
        h = hashlib.sha256()
        params = self.base_parameters() if which == "base" else self.adapters.named_parameters()
        for name, p in params:
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def encode(self, group_a, coord, mpi, groups=GROUPS):
        if "sem_dep" not in groups:
            group_a = torch.zeros_like(group_a)
        if "mpi_coor" not in groups:
            coord, mpi = torch.zeros_like(coord), torch.zeros_like(mpi)
        return self.encoder(group_a, coord, mpi)

    def forward(
        self, z_t, t, cond: Optional[torch.Tensor], n_views: int, adapter: Optional[bool] = None
    ):
        """Predict velocity. ``t`` holds one time per frame; ``cond`` is the fused map or None."""
        use_adapter = self.use_adapter if adapter is None else adapter
        fv = z_t.shape[0]
        f = fv // n_views
        temb = self.time_mlp(timestep_embedding(t, self.cfg.time_dim))
        views = torch.arange(n_views).repeat_interleave(f)
        x = self.conv_in(z_t) + self.view_embed[views][:, :, None, None]
        h = x if cond is None else x + cond
        for i, (base, ctrl, proj) in enumerate(zip(self.base, self.control, self.control_proj)):
            h = ctrl(h, temb)
            c = proj(h)
            if use_adapter and str(i) in self.adapters:
                c = self.adapters[str(i)](c, n_views)
            x = base(x, temb) + c
        return self.conv_out(F.silu(x))
