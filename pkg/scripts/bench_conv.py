"""Sweep channel widths on the 504x504 / 5124-site fixture and compare the
dense, sparse, and submanifold engines.

Usage: python scripts/bench_conv.py [--channels 16 32 64] [--seed 0]
"""

import argparse
import time

import numpy as np

from airsense.spconv import (ActiveMask, ConvSpec, FeatureMap, KernelTensor,
                             MacCounter, compact_active_sites, scatter_conv,
                             sparse_scatter_conv, submanifold_conv)


def fixture(rng, size, sites, channels):
    flat = rng.choice(size * size, size=sites, replace=False)
    flags = np.zeros(size * size, dtype=bool)
    flags[flat] = True
    mask = ActiveMask(flags.reshape(size, size))
    values = np.zeros((size, size, channels), dtype=np.float32)
    values[mask.flags] = rng.normal(size=(sites, channels)).astype(np.float32)
    return FeatureMap(values), mask


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=504)
    parser.add_argument("--sites", type=int, default=5124)
    parser.add_argument("--channels", type=int, nargs="+", default=[16, 32, 64])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"fixture: {args.size}x{args.size}, {args.sites} active sites "
          f"({args.sites / args.size ** 2:.2%} density), 3x3 kernel")
    print(f"{'C=F':>5} {'dense s':>9} {'sparse s':>9} {'subman s':>9} "
          f"{'speedup':>8} {'mac ratio':>10}")
    for c in args.channels:
        fm, mask = fixture(rng, args.size, args.sites, c)
        sfm = compact_active_sites(mask, fm)
        kernel = KernelTensor((rng.normal(size=(c, 3, 3, c)) / (3 * np.sqrt(c)))
                              .astype(np.float32))
        sparse_scatter_conv(sfm, kernel)  # warm up
        cd, cs = MacCounter(), MacCounter()
        t0 = time.perf_counter()
        scatter_conv(fm, kernel, ConvSpec(), counter=cd)
        t_dense = time.perf_counter() - t0
        t0 = time.perf_counter()
        sparse_scatter_conv(sfm, kernel, ConvSpec(), counter=cs)
        t_sparse = time.perf_counter() - t0
        t0 = time.perf_counter()
        submanifold_conv(sfm, kernel)
        t_sub = time.perf_counter() - t0
        print(f"{c:>5} {t_dense:>9.3f} {t_sparse:>9.3f} {t_sub:>9.3f} "
              f"{t_dense / t_sparse:>7.1f}x {cs.count / cd.count:>10.4f}")


if __name__ == "__main__":
    main()
