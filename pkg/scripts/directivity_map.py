"""Directivity response of a drone-sized target across the field of view:
per-voxel return counts for 100 ms and 200 ms windows at the 4- and
14-return thresholds, written as CSV heat maps.

Usage: python scripts/directivity_map.py --out-dir out [--rate 240000]
"""

import argparse
import os

from airsense.lidar_sim import (THRESHOLD_DENSE, THRESHOLD_SPARSE, ScanPattern,
                                VoxelRegion, directivity_analysis)
from airsense.mesh import quadcopter_mesh


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default="directivity_out")
    parser.add_argument("--rate", type=int, default=240_000,
                        help="returns per second (lower this for quick runs)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--x", type=float, nargs=2, default=(5.0, 30.0))
    parser.add_argument("--y", type=float, nargs=2, default=(-10.0, 10.0))
    parser.add_argument("--z", type=float, nargs=2, default=(-5.0, 5.0))
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    pattern = ScanPattern(points_per_second=args.rate, seed=args.seed)
    mesh = quadcopter_mesh()
    region = VoxelRegion(tuple(args.x), tuple(args.y), tuple(args.z))
    for window in (100.0, 200.0):
        grid = directivity_analysis(pattern, mesh, window, 1, region)
        for threshold in (THRESHOLD_SPARSE, THRESHOLD_DENSE):
            grid.threshold = threshold
            path = os.path.join(args.out_dir,
                                f"directivity_{int(window)}ms_thr{threshold}.csv")
            grid.to_csv(path)
            print(f"{path}: {int(grid.included().sum())}/{len(grid.centers)} "
                  f"voxels at >= {threshold} returns")


if __name__ == "__main__":
    main()
