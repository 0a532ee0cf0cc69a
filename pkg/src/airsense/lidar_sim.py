"""Digital-twin scan simulator.

Produces a seeded non-repetitive rosette scan pattern inside the sensor field
of view, poses targets by transforming rays into the mesh rest frame (the
acceleration structure is built once and never rebuilt), applies a Lambertian
return intensity, assembles time-windowed frames, and maps the directivity
response of a target swept across the field of view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .pointio import ScanFrame
from .raytrace import Bvh, RayBundle

__all__ = [
    "ScanPattern",
    "Pose2D",
    "FrameSim",
    "DirectivityGrid",
    "VoxelRegion",
    "gen_pattern",
    "transform_rays",
    "rays_to_sensor_frame",
    "lambertian",
    "simulate_frame",
    "directivity_analysis",
    "THRESHOLD_SPARSE",
    "THRESHOLD_DENSE",
    "MIN_CLUSTER_HITS",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

# named per-voxel return count presets used in coverage studies
THRESHOLD_SPARSE = 4
THRESHOLD_DENSE = 14

MIN_CLUSTER_HITS = 10


@dataclass(frozen=True)
class ScanPattern:
    """Rosette scan: a radial oscillation spun at an incommensurate rate so
    consecutive frames never repeat. The radial/angular rates are free
    parameters; the sensor constants default to the airborne unit's spec
    (240k returns per second over a 70.4 by 77.2 degree window)."""

    points_per_second: int = 240_000
    h_fov_deg: float = 70.4
    v_fov_deg: float = 77.2
    rho_rate_hz: float = 173.0
    theta_rate_hz: float = 173.0 * GOLDEN
    seed: int = 0

    def __post_init__(self):
        if self.points_per_second <= 0:
            raise ValueError("points_per_second must be positive")
        if not (0 < self.h_fov_deg < 180 and 0 < self.v_fov_deg < 180):
            raise ValueError("field of view must be in (0, 180) degrees")


def gen_pattern(spec: ScanPattern, duration_ms: float, start_ms: float = 0.0) -> RayBundle:
    """Time-stamped sensor-frame rays for one window.

    The ray count is exactly round(rate * duration). Ray i of the global
    timeline gets phase from its absolute index, so a longer window is a
    strict prefix extension of a shorter one with the same seed and start.
    """
    if duration_ms <= 0:
        raise ValueError("duration must be positive")
    rate = spec.points_per_second
    i0 = round(rate * start_ms * 1e-3)
    n = round(rate * duration_ms * 1e-3)
    idx = i0 + np.arange(n)
    t_s = idx / rate

    rng = np.random.default_rng(spec.seed)
    phase_rho, phase_theta = rng.uniform(0.0, 2.0 * math.pi, size=2)
    rho = np.sin(2.0 * math.pi * spec.rho_rate_hz * t_s + phase_rho)
    theta = 2.0 * math.pi * spec.theta_rate_hz * t_s + phase_theta
    az = np.radians(spec.h_fov_deg / 2.0) * rho * np.cos(theta)
    el = np.radians(spec.v_fov_deg / 2.0) * rho * np.sin(theta)

    dirs = np.column_stack([
        np.cos(el) * np.cos(az),
        np.cos(el) * np.sin(az),
        np.sin(el),
    ])
    t_us = np.floor(idx * (1e6 / rate)).astype(np.int64)
    return RayBundle(np.zeros((n, 3)), dirs, t_us)


@dataclass(frozen=True)
class Pose2D:
    """Target pose: yaw about z plus translation, in the sensor frame."""

    yaw: float = 0.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform_rays(bundle: RayBundle, pose: Pose2D) -> RayBundle:
    """Express sensor-frame rays in the rest frame of a posed mesh.

    Directions rotate by -yaw about z; origins shift to the mesh center and
    rotate by -yaw. Intersecting these rays against the unposed mesh is
    equivalent to intersecting the originals against the posed mesh, so the
    acceleration structure never needs a rebuild.
    """
    rot_inv = pose.rotation().T
    t = np.asarray(pose.translation, dtype=np.float64)
    dirs = bundle.directions @ rot_inv.T
    origins = (bundle.origins - t) @ rot_inv.T
    return RayBundle(origins, dirs, bundle.t_us)


def rays_to_sensor_frame(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Map mesh rest-frame points back into the sensor frame."""
    return np.asarray(points, dtype=np.float64) @ pose.rotation().T \
        + np.asarray(pose.translation, dtype=np.float64)


def lambertian(i0: float, alpha: float) -> float:
    """Return intensity of a diffuse surface: incident intensity scaled by the
    cosine of the angle between the ray and the surface normal."""
    if not 0.0 <= alpha <= math.pi / 2.0 + 1e-12:
        raise ValueError(f"incidence angle out of [0, pi/2]: {alpha}")
    return i0 * math.cos(alpha)


@dataclass
class FrameSim:
    """One simulated window: the resulting frame plus acceptance bookkeeping.
    A cluster thinner than min_hits is flagged, not discarded silently."""

    frame: ScanFrame
    hit_count: int
    accepted: bool
    rays_cast: int


def simulate_frame(pattern: ScanPattern, target: TriangleMesh | Bvh, pose: Pose2D,
                   window_ms: float = 100.0, start_ms: float = 0.0, i0: float = 1.0,
                   min_hits: int = MIN_CLUSTER_HITS) -> FrameSim:
    """Scan a posed target for one window.

    Pipeline: generate the pattern, transform rays into the mesh rest frame,
    intersect, apply the Lambertian model, and map hit points back into the
    sensor frame. The frame is accepted only when at least min_hits returns
    came back.
    """
    bvh = target if isinstance(target, Bvh) else Bvh(target)
    rays = gen_pattern(pattern, window_ms, start_ms)
    hits = bvh.intersect(transform_rays(rays, pose))
    sel = hits.hit
    points = rays_to_sensor_frame(hits.points[sel], pose)
    intensity = i0 * hits.cos_incidence[sel]
    t_start = int(round(start_ms * 1000))
    frame = ScanFrame(points, intensity, rays.t_us[sel],
                      t_start, int(round(window_ms * 1000)))
    count = int(sel.sum())
    return FrameSim(frame, count, count >= min_hits, len(rays))


@dataclass(frozen=True)
class VoxelRegion:
    """Axis-aligned block of cubic voxels; centers lie on a voxel-size grid."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    voxel_size: float = 1.0

    def centers(self) -> np.ndarray:
        axes = []
        for lo, hi in (self.x_range, self.y_range, self.z_range):
            n = max(1, int(math.floor((hi - lo) / self.voxel_size + 1e-9)))
            axes.append(lo + (np.arange(n) + 0.5) * self.voxel_size)
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def _in_fov(centers: np.ndarray, pattern: ScanPattern) -> np.ndarray:
    az = np.degrees(np.arctan2(centers[:, 1], centers[:, 0]))
    rng_xy = np.hypot(centers[:, 0], centers[:, 1])
    el = np.degrees(np.arctan2(centers[:, 2], rng_xy))
    ahead = centers[:, 0] > 0
    return ahead & (np.abs(az) <= pattern.h_fov_deg / 2.0) \
        & (np.abs(el) <= pattern.v_fov_deg / 2.0)


@dataclass
class DirectivityGrid:
    """Hit counts for a target centered in each voxel of a region."""

    centers: np.ndarray        # (n, 3)
    counts: np.ndarray         # (n,) int64
    threshold: int
    window_ms: float

    def included(self) -> np.ndarray:
        return self.counts >= self.threshold

    def included_centers(self) -> np.ndarray:
        return self.centers[self.included()]

    def to_csv(self, path):
        """Voxel centers and counts, sub-threshold voxels excluded."""
        with open(path, "w") as fh:
            fh.write("x,y,z,count\n")
            for c, n in zip(self.centers, self.counts):
                if n >= self.threshold:
                    fh.write(f"{c[0]:.3f},{c[1]:.3f},{c[2]:.3f},{int(n)}\n")


def directivity_analysis(pattern: ScanPattern, mesh: TriangleMesh, window_ms: float,
                         threshold: int, region: VoxelRegion,
                         yaw: float = 0.0) -> DirectivityGrid:
    """Hit-count map of the target swept over the voxel centers of a region.

    Only voxel centers inside the field of view are scanned; the rest stay at
    zero. One acceleration structure serves every placement since each voxel
    is just a different ray transform.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    centers = region.centers()
    counts = np.zeros(len(centers), dtype=np.int64)
    offset = mesh.center()
    bvh = Bvh(mesh)
    rays = gen_pattern(pattern, window_ms)
    for i in np.nonzero(_in_fov(centers, pattern))[0]:
        pose = Pose2D(yaw, tuple(centers[i] - offset if np.any(offset) else centers[i]))
        hits = bvh.intersect(transform_rays(rays, pose))
        counts[i] = int(hits.hit.sum())
    return DirectivityGrid(centers, counts, threshold, window_ms)
