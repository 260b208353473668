"""Command-line entry point: ``voxcond <command> ...``.

Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraRig, default_rig
from .conditions import (
    DEFAULT_DMAX,
    DEFAULT_PLANES,
    load_stack,
    render_view,
    save_stack,
    write_sidecar,
)
from .grid import GridFormatError, LabelTaxonomy, read_grid, write_grid
from .manifest import MANIFEST, RunManifest, sha256_bytes, sha256_file, sha256_json
from .scenegen import SceneConfig, SceneConfigError, generate_scene

log = logging.getLogger("voxcond")


class UsageError(Exception):
    """Bad flags or config: exit 2."""


class RunError(Exception):
    """Runtime failure: exit 1."""


def _load_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config parse error in {path}: {exc}") from None


def _read_manifest(root, what: str) -> RunManifest:
    try:
        return RunManifest.read(root)
    except FileNotFoundError:
        raise RunError(f"missing {what} manifest in {root}") from None


# -- scene -----------------------------------------------------------------


def cmd_scene_gen(args) -> int:
    raw = _load_json(args.config, "scene config")
    if not isinstance(raw, dict):
        raise UsageError("config parse error: scene config must be a JSON object")
    try:
        cfg = SceneConfig.from_dict(raw)
        start = time.perf_counter()
        scene = generate_scene(cfg)
    except (SceneConfigError, TypeError, ValueError) as exc:
        raise UsageError(f"infeasible scene config: {exc}") from None
    elapsed = time.perf_counter() - start

    out = Path(args.out)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, grid in enumerate(scene.frames):
        p = frames_dir / f"{i:04d}.vxsg"
        p.write_bytes(write_grid(grid))
        written.append(p)
    tracks = out / "tracks.json"
    tracks.write_text(json.dumps(scene.manifest(), indent=2, sort_keys=True) + "\n")
    taxonomy = out / "taxonomy.json"
    taxonomy.write_text(scene.frames[0].taxonomy.to_json() + "\n")
    written += [tracks, taxonomy]

    m = RunManifest(
        stage="scene",
        config_hashes={"scene": sha256_json(json.loads(cfg.to_json()))},
        seeds={"scene": cfg.seed},
        wall_seconds={"generate": elapsed},
        extra={"name": args.name or out.resolve().name, "frames": len(scene.frames)},
    )
    m.add_files(out, written)
    m.write(out)
    print(f"wrote {len(scene.frames)} frames to {frames_dir}")
    return 0


def cmd_rig_default(args) -> int:
    Path(args.out).write_text(default_rig(args.width, args.height, args.focal).to_json() + "\n")
    return 0


# -- project ---------------------------------------------------------------


def _load_scene(scene_dir: Path):
    sm = _read_manifest(scene_dir, "scene")
    n = sm.extra.get("frames", 0)
    grids = []
    for i in range(n):
        rel = f"frames/{i:04d}.vxsg"
        p = scene_dir / rel
        if not p.exists():
            raise RunError(f"missing frame {rel} in {scene_dir}")
        data = p.read_bytes()
        if sm.artifacts.get(rel) != sha256_bytes(data):
            raise RunError(f"grid hash mismatch against manifest for {rel}")
        try:
            grids.append(read_grid(data))
        except GridFormatError as exc:
            raise RunError(f"{rel}: {exc}") from None
    if not grids:
        raise RunError(f"scene {scene_dir} has no frames")
    return sm, grids


def cmd_project(args) -> int:
    scene_dir = Path(args.scene)
    sm, grids = _load_scene(scene_dir)
    if args.rig:
        try:
            rig = CameraRig.from_list(_load_json(args.rig, "rig config"))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"config parse error in rig: {exc}") from None
    else:
        rig = default_rig()
    if args.views:
        try:
            rig = rig.select([v.strip() for v in args.views.split(",") if v.strip()])
        except KeyError as exc:
            raise UsageError(f"unknown view {exc}") from None
    if args.planes < 1 or not args.dmax > 0:
        raise UsageError("--planes must be >= 1 and --dmax > 0")

    out = Path(args.out)
    rig_hash = rig.sha256()
    if (out / MANIFEST).exists():
        prev = RunManifest.read(out)
        if prev.config_hashes.get("rig") not in (None, rig_hash):
            raise RunError("rig hash mismatch against existing manifest in output directory")
    scene_name = sm.extra["name"]
    jobs = [(fi, v) for fi in range(len(grids)) for v in rig.views]

    def one(job):
        fi, v = job
        return render_view(
            grids[fi], v.intrinsics, v.extrinsics, args.dmax, args.planes, v.name, fi
        )

    start = time.perf_counter()
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            stacks = list(pool.map(one, jobs))
    else:
        stacks = [one(j) for j in jobs]
    render_wall = time.perf_counter() - start

    written = []
    taxonomy = grids[0].taxonomy
    for st in stacks:
        written += save_stack(st, out, scene_name, taxonomy)
    for fi, g in enumerate(grids):
        written.append(
            write_sidecar(out, scene_name, fi, args.dmax, args.planes, rig_hash, g.sha256(), rig.names)
        )
    (out / "rig.json").write_text(rig.to_json() + "\n")
    (out / "taxonomy.json").write_text(taxonomy.to_json() + "\n")
    written += [out / "rig.json", out / "taxonomy.json"]

    per_view = {}
    for st in stacks:
        secs, rays = per_view.get(st.view, (0.0, 0))
        per_view[st.view] = (secs + st.render_seconds, rays + st.depth.size)
    throughput = {}
    for name, (secs, rays) in per_view.items():
        throughput[name] = rays / secs if secs > 0 else float("inf")
        print(f"{name}: {rays} rays in {secs:.3f}s -> {throughput[name]:.0f} rays/s")

    m = RunManifest(
        stage="project",
        config_hashes={"scene": sm.config_hashes.get("scene"), "rig": rig_hash},
        seeds=dict(sm.seeds),
        # throughput is a timing, so it lives with the wall-clock fields
        wall_seconds={"render": render_wall, "rays_per_second": throughput},
        extra={
            "scene": scene_name,
            "frames": len(grids),
            "views": rig.names,
            "d_max": args.dmax,
            "planes": args.planes,
        },
    )
    m.add_files(out, written)
    m.write(out)
    return 0


# -- toy model commands ----------------------------------------------------


@dataclass
class _Conditions:
    """Clips loaded from one or more `project` outputs, plus their provenance."""

    clips: list
    planes: int
    n_labels: int
    scene_hashes: list
    rig_hashes: list
    seeds: list


def _load_dir(cond_dir: Path, views, clip_frames: int, height: int):
    from .toydiff.data import clip_from_stacks

    pm = _read_manifest(cond_dir, "project")
    ex = pm.extra
    taxonomy = LabelTaxonomy.from_json((cond_dir / "taxonomy.json").read_text())
    views = views or ex["views"][:2]
    missing = [v for v in views if v not in ex["views"]]
    if missing:
        raise UsageError(f"views {missing} not present in {cond_dir}")
    frames = ex["frames"]
    if frames < clip_frames:
        raise RunError(f"need at least {clip_frames} frames, found {frames}")
    clips = []
    for start in range(0, frames - clip_frames + 1, clip_frames):
        stacks = []
        for v in views:
            for f in range(start, start + clip_frames):
                try:
                    stacks.append(
                        load_stack(cond_dir, ex["scene"], f, v, ex["planes"], taxonomy, ex["d_max"])
                    )
                except FileNotFoundError as exc:
                    raise RunError(f"missing condition image: {exc.filename}") from None
        full_h = stacks[0].depth.shape[0]
        if full_h % height:
            raise UsageError(f"image height {full_h} not a multiple of model height {height}")
        clips.append(clip_from_stacks(stacks, len(views), full_h // height, taxonomy))
    return clips, pm, len(taxonomy)


def _load_conditions(dirs, views, clip_frames: int, height: int) -> _Conditions:
    out = _Conditions([], 0, 0, [], [], [])
    for d in dirs:
        clips, pm, n_labels = _load_dir(Path(d), views, clip_frames, height)
        planes = pm.extra["planes"]
        if out.clips and (planes, n_labels) != (out.planes, out.n_labels):
            raise UsageError(f"{d}: plane count or taxonomy differs from the other inputs")
        out.clips += clips
        out.planes, out.n_labels = planes, n_labels
        out.scene_hashes.append(pm.config_hashes.get("scene"))
        out.rig_hashes.append(pm.config_hashes.get("rig"))
        out.seeds.append(pm.seeds.get("scene"))
    return out


def _model_cfg(cond: _Conditions, seed):
    from .toydiff.model import ToyConfig

    c = cond.clips[0]
    return ToyConfig(
        channels=c.z0.shape[1],
        planes=cond.planes,
        n_labels=cond.n_labels,
        n_views=c.n_views,
        frames=c.n_frames,
        height=c.z0.shape[2],
        width_px=c.z0.shape[3],
        seed=seed,
    )


def _views_arg(s):
    return [v.strip() for v in s.split(",") if v.strip()] if s else None


def cmd_train(args) -> int:
    from .toydiff import checkpoint
    from .toydiff.model import ToyDenoiser
    from .toydiff.train import TrainConfig, TrainingDivergedError, train

    cond = _load_conditions(args.conditions, _views_arg(args.views), args.clip_frames, args.height)
    if args.init:
        model, _ = checkpoint.load_model(Path(args.init).read_bytes())
    else:
        model = ToyDenoiser(_model_cfg(cond, args.seed))
    tcfg = TrainConfig(
        steps=args.steps, lr=args.lr, gamma=args.gamma, mode=args.mode, seed=args.seed
    )
    start = time.perf_counter()
    try:
        res = train(cond.clips, model, tcfg)
    except (TrainingDivergedError, ValueError) as exc:
        raise RunError(str(exc)) from None
    elapsed = time.perf_counter() - start

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.tdck"
    ckpt.write_bytes(checkpoint.save_model(model, {"train": asdict(tcfg)}))
    logf = out / "train_log.jsonl"
    logf.write_text(res.jsonl())
    s = res.smoothed()
    print(f"trained {args.steps} steps: smoothed loss {s[0]:.4f} -> {s[-1]:.4f}")
    m = RunManifest(
        stage="train",
        config_hashes={
            "scene": cond.scene_hashes,
            "rig": cond.rig_hashes,
            "model": sha256_json(model.cfg.to_dict()),
            "train": sha256_json(asdict(tcfg)),
        },
        seeds={"scene": cond.seeds, "train": args.seed},
        wall_seconds={"train": elapsed},
        extra={"mode": args.mode, "gamma": args.gamma, "steps": args.steps},
    )
    m.add_files(out, [ckpt, logf])
    m.write(out)
    return 0


def cmd_sample(args) -> int:
    from .toydiff import checkpoint
    from .toydiff.train import reconstruction_error, sample

    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    try:
        model, _ = checkpoint.load_model(Path(args.checkpoint).read_bytes())
    except FileNotFoundError:
        raise RunError(f"missing checkpoint {args.checkpoint}") from None
    except checkpoint.CheckpointError as exc:
        raise RunError(str(exc)) from None
    cond = _load_conditions(
        args.conditions, _views_arg(args.views), model.cfg.frames, model.cfg.height
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    start = time.perf_counter()
    for i, clip in enumerate(cond.clips):
        z = sample(model, clip, args.k, args.steps, args.cfg_scale, args.seed + i)
        p = out / f"clip_{i:03d}.npy"
        np.save(p, z)
        written.append(p)
    err = reconstruction_error(model, cond.clips, args.k, args.steps, args.cfg_scale, args.seed)
    ep = out / "errors.json"
    ep.write_text(json.dumps(err, indent=2, sort_keys=True) + "\n")
    written.append(ep)
    print(json.dumps(err))
    m = RunManifest(
        stage="sample",
        config_hashes={
            "scene": cond.scene_hashes,
            "model": sha256_json(model.cfg.to_dict()),
            "checkpoint": sha256_file(args.checkpoint),
        },
        seeds={"scene": cond.seeds, "sample": args.seed},
        wall_seconds={"sample": time.perf_counter() - start},
        extra={"k": args.k, "steps": args.steps, "cfg_scale": args.cfg_scale},
    )
    m.add_files(out, written)
    m.write(out)
    return 0


def cmd_ablate(args) -> int:
    from .toydiff.ablation import AblationConfig, run_ablation

    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError:
        raise UsageError(f"bad --seeds {args.seeds!r}") from None
    views = _views_arg(args.views)
    cond = _load_conditions(args.conditions, views, args.clip_frames, args.height)
    clips = cond.clips
    if args.heldout:
        held = _load_conditions(args.heldout, views, args.clip_frames, args.height)
        heldout = held.clips
    else:
        if len(clips) < 2:
            raise RunError("need >= 2 clips to hold one out; pass --heldout")
        clips, heldout = clips[:-1], clips[-1:]
    cfg = AblationConfig(
        seeds=seeds,
        base_steps=args.steps,
        adapter_steps=args.adapter_steps,
        baseline=not args.no_baseline,
    )
    mcfg = _model_cfg(cond, 0)
    report = run_ablation(clips, heldout, cfg, mcfg, progress=log.info)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    md, js = out / "report.md", out / "report.json"
    md.write_text(report.to_markdown())
    js.write_text(report.to_json() + "\n")
    print(report.to_markdown())
    m = RunManifest(
        stage="ablate",
        config_hashes={
            "scene": cond.scene_hashes,
            "rig": cond.rig_hashes,
            "model": sha256_json(mcfg.to_dict()),
            "ablation": sha256_json(report.config),
        },
        seeds={"scene": cond.seeds, "ablation": list(seeds)},
        wall_seconds={"ablate": report.wall_seconds},
        extra={"train_clips": len(clips), "heldout_clips": len(heldout)},
    )
    m.add_files(out, [md, js])
    m.write(out)
    return 0


def cmd_bench(args) -> int:
    scene = generate_scene(SceneConfig(seed=args.seed, frames=1))
    rig = default_rig()
    grid = scene.frames[0]
    v = rig.views[0]
    render_view(grid, v.intrinsics, v.extrinsics)  # JIT warm-up
    total_rays, total_s = 0, 0.0
    for _ in range(args.repeat):
        for v in rig.views:
            st = render_view(grid, v.intrinsics, v.extrinsics, args.dmax, args.planes, v.name)
            total_rays += st.depth.size
            total_s += st.render_seconds
    print(f"{total_rays} rays in {total_s:.3f}s -> {total_rays / total_s:.0f} rays/s (full trace + MPI)")
    return 0


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxcond", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    scene = sub.add_parser("scene", help="synthetic scene generation")
    scene_sub = scene.add_subparsers(dest="scene_command", required=True)
    gen = scene_sub.add_parser("gen", help="generate a temporal scene")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--name", default=None, help="scene name (default: output dir name)")
    gen.set_defaults(func=cmd_scene_gen)

    rig = sub.add_parser("rig", help="camera rig helpers")
    rig_sub = rig.add_subparsers(dest="rig_command", required=True)
    rd = rig_sub.add_parser("default", help="write the default six-camera rig")
    rd.add_argument("--out", required=True)
    rd.add_argument("--width", type=int, default=160)
    rd.add_argument("--height", type=int, default=96)
    rd.add_argument("--focal", type=float, default=100.0)
    rd.set_defaults(func=cmd_rig_default)

    pr = sub.add_parser("project", help="render condition maps for every frame and view")
    pr.add_argument("--scene", required=True)
    pr.add_argument("--rig", default=None, help="rig JSON (default: built-in six-camera rig)")
    pr.add_argument("--dmax", type=float, default=DEFAULT_DMAX)
    pr.add_argument("--planes", type=int, default=DEFAULT_PLANES)
    pr.add_argument("--views", default=None, help="comma-separated subset of view names")
    pr.add_argument("--jobs", type=int, default=1)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_project)

    def model_io(q):
        q.add_argument(
            "--conditions", required=True, nargs="+", help="one or more `project` output directories"
        )
        q.add_argument("--views", default=None, help="views to use (default: first two)")
        q.add_argument("--out", required=True)
        q.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train the toy denoiser on projected conditions")
    model_io(tr)
    tr.add_argument("--steps", type=int, default=500)
    tr.add_argument("--lr", type=float, default=0.5)
    tr.add_argument("--gamma", type=float, default=2.0)
    tr.add_argument("--mode", choices=("base", "adapter"), default="base")
    tr.add_argument("--init", default=None, help="checkpoint to continue from")
    tr.add_argument("--clip-frames", type=int, default=4)
    tr.add_argument("--height", type=int, default=24, help="latent height")
    tr.set_defaults(func=cmd_train)

    sa = sub.add_parser("sample", help="sample latent clips from a checkpoint")
    model_io(sa)
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--k", type=int, default=1)
    sa.add_argument("--steps", type=int, default=8)
    sa.add_argument("--cfg-scale", type=float, default=1.0)
    sa.set_defaults(func=cmd_sample)

    ab = sub.add_parser("ablate", help="mask-loss x adapter x condition-group ablation")
    model_io(ab)
    ab.add_argument("--heldout", default=None, nargs="+", help="`project` outputs for held-out clips")
    ab.add_argument("--seeds", default="0,1,2")
    ab.add_argument("--steps", type=int, default=500)
    ab.add_argument("--adapter-steps", type=int, default=200)
    ab.add_argument("--no-baseline", action="store_true")
    ab.add_argument("--clip-frames", type=int, default=4)
    ab.add_argument("--height", type=int, default=24)
    ab.set_defaults(func=cmd_ablate)

    be = sub.add_parser("bench", help="ray-casting throughput on a default scene")
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--repeat", type=int, default=3)
    be.add_argument("--dmax", type=float, default=DEFAULT_DMAX)
    be.add_argument("--planes", type=int, default=DEFAULT_PLANES)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("VOXCOND_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
