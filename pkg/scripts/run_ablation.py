"""Full ablation grid through the command line: scenes, projection, then ``ablate``.

    python scripts/run_ablation.py --out runs/ablation

Writes scenes/, cond/ and ablate/{report.md,report.json,manifest.json} under --out.
"""

import argparse
import json
import sys
from pathlib import Path

from voxcond.cli import main as voxcond

TRAIN_SEEDS = (11, 12, 13)
HELDOUT_SEED = 101


def run(argv):
    rc = voxcond(argv)
    if rc:
        sys.exit(rc)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--views", default="front,front_left")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--adapter-steps", type=int, default=200)
    args = p.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    cond = {}
    for seed in TRAIN_SEEDS + (HELDOUT_SEED,):
        name = f"d{seed}"
        cfg = root / f"{name}.json"
        cfg.write_text(json.dumps({"seed": seed, "frames": args.frames, "n_vehicles": 5, "n_pedestrians": 8}))
        run(["scene", "gen", "--config", str(cfg), "--out", str(root / "scenes" / name)])
        run(["project", "--scene", str(root / "scenes" / name), "--views", args.views, "--out", str(root / "cond" / name)])
        cond[seed] = str(root / "cond" / name)

    run(
        ["ablate", "--conditions", *[cond[s] for s in TRAIN_SEEDS], "--heldout", cond[HELDOUT_SEED]]
        + ["--views", args.views, "--seeds", args.seeds, "--steps", str(args.steps)]
        + ["--adapter-steps", str(args.adapter_steps), "--out", str(root / "ablate")]
    )


if __name__ == "__main__":
    main()
