"""Command line surface tying the modules into pipelines.

Subcommands: simulate, directivity, augment, bench-conv, detect-eval, track.
Every command is deterministic for a fixed (config, seed) pair.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from .augment import AugPlan, build_datasets
from .boxes import Box3D
from .config import Config, ConfigError, default_config, load_config
from .lidar_sim import (Pose2D, ScanPattern, VoxelRegion, directivity_analysis,
                        simulate_frame)
from .mesh import MeshError, box_mesh, icosphere, load_mesh, quadcopter_mesh
from .metrics import aggregate, classify
from .pointio import (PointFormatError, ScanFrame, frame_records,
                      read_jsonl, read_points, read_tensor, window_frames,
                      write_columnar, write_jsonl, write_las)
from .spconv import (ActiveMask, ConvSpec, FeatureMap, KernelTensor, MacCounter,
                     compact_active_sites, scatter_conv, sparse_scatter_conv,
                     submanifold_conv)
from .tracker import TrackerConfig, replay

BUILTIN_MESHES = {
    "builtin:drone": quadcopter_mesh,
    "builtin:sphere": lambda: icosphere(0.5, 2),
    "builtin:box": lambda: box_mesh((1.0, 1.0, 0.5)),
}


def _resolve_mesh(spec: str):
    if spec in BUILTIN_MESHES:
        return BUILTIN_MESHES[spec]()
    return load_mesh(spec)


def _load_cfg(args) -> Config:
    if getattr(args, "config", None):
        return load_config(args.config)
    return default_config()


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    mesh = _resolve_mesh(args.mesh)
    pattern = dataclasses.replace(cfg.scan, seed=args.seed)
    pose = Pose2D(args.yaw, (args.at[0], args.at[1], args.at[2]))
    records = []
    for k in range(args.frames):
        start = k * args.window
        sim = simulate_frame(pattern, mesh, pose, args.window, start_ms=start)
        status = "accepted" if sim.accepted else "thin"
        print(f"frame {k}: {sim.hit_count} hits from {sim.rays_cast} rays ({status})")
        records.extend(frame_records(sim.frame))
    if args.out.endswith(".las"):
        write_las(args.out, records)
    else:
        write_columnar(args.out, records)
    print(f"wrote {len(records)} points to {args.out}")
    return 0


def cmd_directivity(args) -> int:
    cfg = _load_cfg(args)
    mesh = _resolve_mesh(args.mesh)
    pattern = dataclasses.replace(cfg.scan, seed=args.seed)
    region = VoxelRegion(tuple(args.x), tuple(args.y), tuple(args.z), args.voxel)
    grid = directivity_analysis(pattern, mesh, args.window, args.threshold, region)
    grid.to_csv(args.out)
    n_inc = int(grid.included().sum())
    print(f"{n_inc}/{len(grid.centers)} voxels at threshold {args.threshold} "
          f"-> {args.out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _load_cfg(args)
    mesh = _resolve_mesh(args.mesh)
    pattern = dataclasses.replace(cfg.scan, seed=args.seed)
    plan = dataclasses.replace(cfg.augment, seed=args.seed)

    rng = np.random.default_rng(args.seed)
    real = _synthesize_real_frames(plan, pattern, mesh, rng)
    pair = build_datasets(plan, real, mesh, pattern)
    os.makedirs(args.out, exist_ok=True)
    for name, frames in (("sim", pair.data_sim), ("euc", pair.data_euc)):
        rows = []
        for i, lf in enumerate(frames):
            rows.append({"frame": i,
                         "boxes": [b.to_dict() for b in lf.boxes],
                         "labels": lf.labels,
                         "points": len(lf.frame)})
            write_columnar(f"{args.out}/{name}_{i:05d}.xyz", frame_records(lf.frame))
        write_jsonl(f"{args.out}/{name}_labels.jsonl", rows)
    write_jsonl(f"{args.out}/manifest.jsonl", pair.manifest)
    print(f"wrote {len(pair.data_sim)} paired frames to {args.out}")
    return 0


def _synthesize_real_frames(plan: AugPlan, pattern: ScanPattern, mesh, rng):
    """Stand-in for recorded flights: each background is clutter plus one
    simulated target with its label box."""
    from .augment import synth_insert

    frames = []
    k = 0
    while len(frames) < plan.background_pool:
        n_bg = int(rng.integers(300, 600))
        pts = np.column_stack([rng.uniform(5, 60, n_bg), rng.uniform(-25, 25, n_bg),
                               rng.uniform(-8, 8, n_bg)])
        t_us = np.sort(rng.integers(0, int(plan.window_ms * 1000), n_bg)).astype(np.int64)
        bg = ScanFrame(pts, rng.uniform(0, 1, n_bg), t_us, 0, int(plan.window_ms * 1000))
        loc = np.array([rng.uniform(9, 18), rng.uniform(-4, 4), rng.uniform(-2, 2)])
        yaw = float(rng.uniform(-np.pi, np.pi))
        sim = simulate_frame(pattern, mesh, Pose2D(yaw, tuple(loc - mesh.center())),
                             plan.window_ms)
        k += 1
        if k > plan.background_pool * 20:
            raise RuntimeError("could not synthesize enough admitted frames")
        if not sim.accepted:
            continue
        lf, _ = synth_insert(bg, sim.frame, loc, yaw)
        frames.append(lf)
    return frames


def cmd_bench_conv(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.features:
        values = read_tensor(args.features).astype(np.float32)
        if values.ndim != 3:
            raise ValueError(f"feature fixture must be (p, q, C), got {values.shape}")
        fm = FeatureMap(values)
        mask = ActiveMask(np.abs(values).max(axis=2) > 0)
    else:
        p = q = args.size
        flat = rng.choice(p * q, size=args.sites, replace=False)
        flags = np.zeros(p * q, dtype=bool)
        flags[flat] = True
        mask = ActiveMask(flags.reshape(p, q))
        values = np.zeros((p, q, args.channels), dtype=np.float32)
        values[mask.flags] = rng.normal(size=(args.sites, args.channels)).astype(np.float32)
        fm = FeatureMap(values)
    sfm = compact_active_sites(mask, fm)
    if args.kernel_file:
        kernel = KernelTensor(read_tensor(args.kernel_file).astype(np.float32))
        if kernel.in_channels != fm.channels:
            raise ValueError("kernel fixture channel count does not match features")
    else:
        c = fm.channels
        kernel = KernelTensor(rng.normal(size=(c, args.kernel, args.kernel, c))
                              .astype(np.float32) / (args.kernel * np.sqrt(c)))

    lines = [f"fixture.size = {fm.p}x{fm.q}", f"fixture.sites = {sfm.num_sites}",
             f"fixture.channels = {fm.channels}", f"fixture.kernel = {kernel.k}"]
    results = {}
    for name in ("dense", "sparse", "submanifold"):
        counter = MacCounter()
        t0 = time.perf_counter_ns()
        if name == "dense":
            out = scatter_conv(fm, kernel, ConvSpec(), counter=counter)
        elif name == "sparse":
            out = sparse_scatter_conv(sfm, kernel, ConvSpec(), counter=counter)
        else:
            out = submanifold_conv(sfm, kernel, counter=counter)
        dt = time.perf_counter_ns() - t0
        results[name] = (counter.count, dt)
        lines.append(f"{name}.macs = {counter.count}")
        lines.append(f"{name}.nanoseconds = {dt}")
    ratio = results["sparse"][0] / results["dense"][0]
    lines.append(f"mac.ratio = {ratio:.6f}")
    lines.append(f"speedup.dense_over_sparse = "
                 f"{results['dense'][1] / results['sparse'][1]:.3f}")
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report)
    return 0


def _boxes_by_frame(rows):
    by_frame: dict[int, list[Box3D]] = {}
    for row in rows:
        by_frame.setdefault(int(row["frame"]), []).append(Box3D.from_dict(row["box"]))
    return by_frame


def cmd_detect_eval(args) -> int:
    cfg = _load_cfg(args)
    dets = _boxes_by_frame(read_jsonl(args.detections))
    gts = _boxes_by_frame(read_jsonl(args.truth))
    frames = sorted(set(dets) | set(gts))
    counts = [classify(dets.get(k, []), gts.get(k, []),
                       args.iou if args.iou is not None else cfg.eval.iou_threshold,
                       use_bev=cfg.eval.use_bev)
              for k in frames]
    outcome = aggregate(counts)
    fmt = lambda v: "undefined" if v is None else f"{v:.4f}"
    print(f"frames = {len(frames)}")
    print(f"tp = {outcome.tp}\nfp = {outcome.fp}\nfn = {outcome.fn}")
    print(f"precision = {fmt(outcome.precision)}")
    print(f"recall = {fmt(outcome.recall)}")
    print(f"f1 = {fmt(outcome.f1)}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(outcome.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_track(args) -> int:
    cfg = _load_cfg(args)
    frames = list(window_frames(read_points(args.frames), args.window))
    dets = _boxes_by_frame(read_jsonl(args.detections))
    det_lists = [dets.get(k, []) for k in range(len(frames))]
    tc = TrackerConfig(gate_m=cfg.tracker.gate_m, separation_m=args.separation,
                       max_skips=cfg.tracker.max_skips)
    track_log, alert_log, summary = replay(frames, det_lists, tc)
    write_jsonl(args.out_tracks, track_log)
    write_jsonl(args.out_alerts, alert_log)
    print(f"frames = {len(frames)}")
    for key, val in summary.items():
        print(f"{key} = {val}")
    print(f"alerts = {len(alert_log)}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airsense",
        description="Airborne LiDAR sense-and-detect toolkit")
    parser.add_argument("--config", help="JSON configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scan a posed mesh into point frames")
    p.add_argument("--mesh", required=True,
                   help="OFF/STL path or builtin:drone|sphere|box")
    p.add_argument("--at", type=float, nargs=3, required=True,
                   metavar=("X", "Y", "Z"), help="target center, meters")
    p.add_argument("--yaw", type=float, default=0.0, help="target yaw, radians")
    p.add_argument("--window", type=float, default=100.0, help="frame window, ms")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".las or columnar text output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("directivity", help="per-voxel return-count heat map CSV")
    p.add_argument("--mesh", required=True)
    p.add_argument("--window", type=float, default=100.0)
    p.add_argument("--threshold", type=int, default=4)
    p.add_argument("--voxel", type=float, default=1.0)
    p.add_argument("--x", type=float, nargs=2, default=(5.0, 20.0))
    p.add_argument("--y", type=float, nargs=2, default=(-5.0, 5.0))
    p.add_argument("--z", type=float, nargs=2, default=(-3.0, 3.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_directivity)

    p = sub.add_parser("augment", help="paired simulated/rigid datasets + manifest")
    p.add_argument("--mesh", default="builtin:drone")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("bench-conv",
                       help="dense vs sparse vs submanifold instrumentation")
    p.add_argument("--size", type=int, default=504)
    p.add_argument("--sites", type=int, default=5124)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--features", help="columnar tensor fixture (p, q, C) "
                                      "overriding the random map")
    p.add_argument("--kernel-file", dest="kernel_file",
                   help="columnar tensor fixture (F, k, k, C)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report here as well")
    p.set_defaults(func=cmd_bench_conv)

    p = sub.add_parser("detect-eval", help="detections + ground truth -> metrics")
    p.add_argument("--detections", required=True, help="JSONL of frame/box rows")
    p.add_argument("--truth", required=True, help="JSONL of frame/box rows")
    p.add_argument("--iou", type=float, default=None,
                   help="override the IoU threshold (default 0.30)")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_detect_eval)

    p = sub.add_parser("track", help="replay frames + detections into a track log")
    p.add_argument("--frames", required=True, help="point file (.las or columnar)")
    p.add_argument("--detections", required=True, help="JSONL of frame/box rows")
    p.add_argument("--window", type=float, default=100.0)
    p.add_argument("--separation", type=float, default=15.0)
    p.add_argument("--out-tracks", required=True)
    p.add_argument("--out-alerts", required=True)
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PointFormatError, MeshError, ValueError, FileNotFoundError,
            RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
