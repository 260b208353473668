"""Ray-casting throughput on a generated scene with the default six-camera rig."""

import argparse
import time

from voxcond.camera import default_rig, pixel_rays
from voxcond.raycast import first_hit_batch, trace_batch
from voxcond.scenegen import SceneConfig, generate_scene


def timed(fn, repeat):
    fn()  # compile
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--dmax", type=float, default=51.2)
    p.add_argument("--planes", type=int, default=8)
    args = p.parse_args()

    grid = generate_scene(SceneConfig(seed=args.seed, frames=1)).frames[0]
    rig = default_rig()
    print(f"grid {grid.dims}, voxel {grid.voxel_size} m, {len(rig)} views")
    for v in rig.views:
        dirs = pixel_rays(v.intrinsics, v.extrinsics).reshape(-1, 3)
        o = v.extrinsics.translation
        hit_s = timed(lambda: first_hit_batch(grid, o, dirs, args.dmax), args.repeat)
        trace_s = timed(lambda: trace_batch(grid, o, dirs, args.dmax, args.planes), args.repeat)
        print(
            f"{v.name:12s} first hit {len(dirs) / hit_s:12.0f} rays/s   "
            f"full trace + MPI {len(dirs) / trace_s:12.0f} rays/s"
        )


if __name__ == "__main__":
    main()
