"""Paired ablation grid: mask-loss weight x adapter x condition group."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Clip
from .model import GROUPS, ToyConfig, ToyDenoiser
from .train import TrainConfig, denoise_error, reconstruction_error, train

GROUP_SETS = {"sem+dep": ("sem_dep",), "mpi+coor": ("mpi_coor",)}


@dataclass
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    gammas: tuple[float, ...] = (0.0, 2.0)
    group_sets: dict = field(default_factory=lambda: dict(GROUP_SETS))
    base_steps: int = 500
    adapter_steps: int = 200
    lr: float = 0.5
    baseline: bool = True
    sample_steps: int = 8


@dataclass
class Cell:
    gamma: float
    adapter: bool
    groups: str
    seeds: list[int]
    denoise: list[dict]
    sampled: list[dict]
    final_loss: list[float]

    def mean(self, metric: str = "fg_mse", kind: str = "denoise") -> float:
        rows = self.denoise if kind == "denoise" else self.sampled
        return float(np.mean([r[metric] for r in rows]))


@dataclass
class AblationReport:
    config: dict
    cells: list[Cell]
    baselines: list[Cell]
    wall_seconds: float = 0.0

    def find(self, gamma: float, adapter: bool, groups: str) -> Cell:
        for c in self.cells:
            if c.gamma == gamma and c.adapter == adapter and c.groups == groups:
                return c
        raise KeyError((gamma, adapter, groups))

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "cells": [asdict(c) for c in self.cells],
                "baselines": [asdict(c) for c in self.baselines],
            },
            indent=2,
            sort_keys=True,
        )

    def to_markdown(self) -> str:
        lines = [
            "| gamma | adapter | conditions | fg mse | bg mse | all mse | sampled fg | sampled all | per-seed fg |",
            "|---|---|---|---|---|---|---|---|---|",
        ]
        for c in self.cells + self.baselines:
            per_seed = ", ".join(f"{s}:{r['fg_mse']:.4f}" for s, r in zip(c.seeds, c.denoise))
            lines.append(
                f"| {c.gamma:g} | {'on' if c.adapter else 'off'} | {c.groups} "
                f"| {c.mean('fg_mse'):.4f} | {c.mean('bg_mse'):.4f} | {c.mean('all_mse'):.4f} "
                f"| {c.mean('fg_mse', 'sampled'):.4f} | {c.mean('all_mse', 'sampled'):.4f} "
                f"| {per_seed} |"
            )
        return "\n".join(lines) + "\n"


def _evaluate(model, heldout, groups, seed, sample_steps):
    return (
        denoise_error(model, heldout, groups=groups, seed=seed),
        reconstruction_error(model, heldout, steps=sample_steps, groups=groups, seed=seed),
    )


def run_ablation(
    train_clips: Sequence[Clip],
    heldout: Sequence[Clip],
    cfg: AblationConfig = AblationConfig(),
    model_cfg: ToyConfig = ToyConfig(),
    progress=None,
) -> AblationReport:
    """Every cell trains the base model from the same seed; the adapter-on
    cell fine-tunes that same base model, so the pairs differ only in the
    ablated factor. Held-out evaluation noise depends only on the seed.
    """
    start = time.perf_counter()
    cells: dict[tuple, Cell] = {}
    baselines = []
    group_items = list(cfg.group_sets.items())
    if cfg.baseline:
        group_items.append(("none", ()))
    for gamma in cfg.gammas:
        for name, groups in group_items:
            for seed in cfg.seeds:
                mcfg = ToyConfig(**{**model_cfg.to_dict(), "seed": seed})
                model = ToyDenoiser(mcfg)
                res = train(
                    train_clips,
                    model,
                    TrainConfig(
                        steps=cfg.base_steps, lr=cfg.lr, gamma=gamma, groups=groups, seed=seed
                    ),
                )
                variants = [(False, res)]
                if name != "none":
                    ft = train(
                        train_clips,
                        model,
                        TrainConfig(
                            steps=cfg.adapter_steps,
                            lr=cfg.lr,
                            gamma=gamma,
                            groups=groups,
                            seed=seed + 1000,
                            mode="adapter",
                        ),
                    )
                    variants.append((True, ft))
                for adapter, r in variants:
                    model.use_adapter = adapter
                    den, smp = _evaluate(model, heldout, groups, seed, cfg.sample_steps)
                    key = (gamma, adapter, name)
                    if key not in cells:
                        cells[key] = Cell(gamma, adapter, name, [], [], [], [])
                    c = cells[key]
                    c.seeds.append(seed)
                    c.denoise.append(den)
                    c.sampled.append(smp)
                    c.final_loss.append(float(r.smoothed()[-1]))
                if progress:
                    progress(f"gamma={gamma:g} groups={name} seed={seed} done")
    main = [c for k, c in cells.items() if k[2] != "none"]
    baselines = [c for k, c in cells.items() if k[2] == "none"]
    main.sort(key=lambda c: (c.gamma, c.groups, c.adapter))
    config = asdict(cfg)
    config["group_sets"] = {k: list(v) for k, v in cfg.group_sets.items()}
    return AblationReport(config, main, baselines, time.perf_counter() - start)


def majority(wins: Sequence[bool]) -> bool:
    return sum(bool(w) for w in wins) * 2 > len(wins)
