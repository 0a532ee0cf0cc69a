"""Generate a small paired training set: simulated insertions versus the
rigid-copy baseline over the same backgrounds and insertion plan, plus the
reproducibility manifest.

Usage: python scripts/make_blended_dataset.py --out-dir blended [--instances 25]
"""

import argparse
import math
import os

import numpy as np

from airsense.augment import AugPlan, build_datasets, synth_insert
from airsense.lidar_sim import Pose2D, ScanPattern, VoxelRegion, simulate_frame
from airsense.mesh import quadcopter_mesh
from airsense.pointio import ScanFrame, frame_records, write_columnar, write_jsonl


def synthesize_backgrounds(n, pattern, mesh, rng):
    frames = []
    while len(frames) < n:
        loc = np.array([rng.uniform(9, 15), rng.uniform(-3, 3), rng.uniform(-1, 1)])
        yaw = float(rng.uniform(-math.pi, math.pi))
        sim = simulate_frame(pattern, mesh, Pose2D(yaw, tuple(loc)), 100.0)
        if not sim.accepted:
            continue
        n_bg = int(rng.integers(200, 400))
        pts = np.column_stack([rng.uniform(5, 50, n_bg), rng.uniform(-20, 20, n_bg),
                               rng.uniform(-8, 8, n_bg)])
        bg = ScanFrame(pts, rng.uniform(0, 1, n_bg),
                       np.sort(rng.integers(0, 100_000, n_bg)).astype(np.int64),
                       0, 100_000)
        lf, _ = synth_insert(bg, sim.frame, loc, yaw)
        frames.append(lf)
    return frames


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default="blended")
    parser.add_argument("--backgrounds", type=int, default=8)
    parser.add_argument("--instances", type=int, default=25)
    parser.add_argument("--rate", type=int, default=48_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    pattern = ScanPattern(points_per_second=args.rate, seed=args.seed)
    mesh = quadcopter_mesh()
    real = synthesize_backgrounds(args.backgrounds, pattern, mesh, rng)
    plan = AugPlan(background_pool=args.backgrounds, instances=args.instances,
                   region=VoxelRegion((9.0, 16.0), (-3.0, 3.0), (-1.5, 1.5)),
                   seed=args.seed)
    pair = build_datasets(plan, real, mesh, pattern)

    os.makedirs(args.out_dir, exist_ok=True)
    for name, frames in (("sim", pair.data_sim), ("euc", pair.data_euc)):
        rows = []
        for i, lf in enumerate(frames):
            write_columnar(os.path.join(args.out_dir, f"{name}_{i:05d}.xyz"),
                           frame_records(lf.frame))
            rows.append({"frame": i, "boxes": [b.to_dict() for b in lf.boxes],
                         "labels": lf.labels, "points": len(lf.frame)})
        write_jsonl(os.path.join(args.out_dir, f"{name}_labels.jsonl"), rows)
    write_jsonl(os.path.join(args.out_dir, "manifest.jsonl"), pair.manifest)
    sizes = [row["sim_points"] for row in pair.manifest]
    print(f"wrote {len(pair.data_sim)} paired frames to {args.out_dir}/")
    print(f"simulated cluster sizes: min {min(sizes)}, median "
          f"{int(np.median(sizes))}, max {max(sizes)}")


if __name__ == "__main__":
    main()
