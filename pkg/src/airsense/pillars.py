"""Pillar front-end: grid assignment, 9-feature point decoration, per-pillar
max pooling, and scattering into a dense pseudo-image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointio import ScanFrame
from .spconv import ActiveMask

__all__ = [
    "PillarGridSpec",
    "Pillar",
    "PillarAssignment",
    "PseudoImage",
    "assign_pillars",
    "decorate",
    "pillar_encode",
    "random_pillar_weights",
    "DECORATED_DIMS",
]

DECORATED_DIMS = 9  # x, y, z, r, x_c, y_c, z_c, x_p, y_p


@dataclass(frozen=True)
class PillarGridSpec:
    """Horizontal grid over the scan space. The vertical range is kept wide on
    purpose: targets appear both above and below the sensor plane."""

    x_range: tuple[float, float] = (0.0, 70.4)
    y_range: tuple[float, float] = (-40.0, 40.0)
    z_range: tuple[float, float] = (-10.0, 10.0)
    cell_size: float = 0.16
    max_points_per_pillar: int = 100
    max_pillars: int = 12_000

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        if self.max_points_per_pillar < 1 or self.max_pillars < 1:
            raise ValueError("caps must be positive")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("empty grid range")

    @property
    def nx(self) -> int:
        return int(np.floor((self.x_range[1] - self.x_range[0]) / self.cell_size + 1e-9))

    @property
    def ny(self) -> int:
        return int(np.floor((self.y_range[1] - self.y_range[0]) / self.cell_size + 1e-9))

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.x_range[0] + (ix + 0.5) * self.cell_size,
                self.y_range[0] + (iy + 0.5) * self.cell_size)


@dataclass
class Pillar:
    """All in-range returns whose (x, y) fall in one grid cell.

    points is (n, 5): x, y, z, reflectance, t_us.
    """

    ix: int
    iy: int
    center_x: float
    center_y: float
    points: np.ndarray


@dataclass
class PillarAssignment:
    pillars: list[Pillar]
    dropped_out_of_range: int = 0
    truncated_points: int = 0
    truncated_pillars: int = 0


def assign_pillars(frame: ScanFrame, spec: PillarGridSpec) -> PillarAssignment:
    """Bucket returns into pillars by floor division of (x, y).

    Out-of-range points are dropped and counted. Per-pillar membership is
    capped at max_points_per_pillar keeping the earliest timestamps; the
    pillar count is capped at max_pillars keeping the densest pillars first
    (ties resolved row-major). Truncation is reported, never silent.
    """
    if frame is None:
        raise ValueError("frame must not be None")
    n = len(frame)
    if n == 0:
        return PillarAssignment([])
    pts = np.column_stack([frame.points, frame.intensity, frame.t_us.astype(np.float64)])
    order = np.argsort(frame.t_us, kind="stable")
    pts = pts[order]

    ix = np.floor((pts[:, 0] - spec.x_range[0]) / spec.cell_size).astype(np.int64)
    iy = np.floor((pts[:, 1] - spec.y_range[0]) / spec.cell_size).astype(np.int64)
    in_range = ((ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
                & (pts[:, 2] >= spec.z_range[0]) & (pts[:, 2] <= spec.z_range[1]))
    dropped = int(n - in_range.sum())
    pts, ix, iy = pts[in_range], ix[in_range], iy[in_range]

    key = iy * spec.nx + ix
    buckets: dict[int, list[int]] = {}
    for i, k in enumerate(key):
        buckets.setdefault(int(k), []).append(i)

    truncated_points = 0
    pillars = []
    for k, idxs in buckets.items():
        if len(idxs) > spec.max_points_per_pillar:
            truncated_points += len(idxs) - spec.max_points_per_pillar
            idxs = idxs[: spec.max_points_per_pillar]  # earliest timestamps win
        cy, cx = divmod(k, spec.nx)
        center = spec.cell_center(cx, cy)
        pillars.append(Pillar(cx, cy, center[0], center[1], pts[idxs]))

    truncated_pillars = 0
    if len(pillars) > spec.max_pillars:
        truncated_pillars = len(pillars) - spec.max_pillars
        pillars.sort(key=lambda p: (-p.points.shape[0], p.iy, p.ix))
        pillars = pillars[: spec.max_pillars]
    pillars.sort(key=lambda p: (p.iy, p.ix))
    return PillarAssignment(pillars, dropped, truncated_points, truncated_pillars)


def decorate(pillar: Pillar) -> np.ndarray:
    """Expand each return to the 9 per-point features: raw coordinates and
    reflectance, offsets from the pillar's arithmetic mean, and horizontal
    offsets from the cell center."""
    if pillar.points.shape[0] == 0:
        raise ValueError("cannot decorate an empty pillar")
    xyz = pillar.points[:, 0:3]
    mean = xyz.mean(axis=0)
    out = np.empty((xyz.shape[0], DECORATED_DIMS), dtype=np.float64)
    out[:, 0:3] = xyz
    out[:, 3] = pillar.points[:, 3]
    out[:, 4:7] = xyz - mean
    out[:, 7] = xyz[:, 0] - pillar.center_x
    out[:, 8] = xyz[:, 1] - pillar.center_y
    return out


@dataclass
class PseudoImage:
    """Dense (ny, nx, F) map of pooled pillar features plus occupancy.

    Cells without a pillar are exactly zero.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 3 or self.mask.shape != self.values.shape[:2]:
            raise ValueError("pseudo-image needs (ny, nx, F) values and matching mask")
        if self.values[~self.mask].any():
            raise ValueError("non-occupied cells must be all-zero")

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def occupancy(self) -> ActiveMask:
        return ActiveMask(self.mask.copy())


def random_pillar_weights(rng: np.random.Generator, out_channels: int = 64) -> np.ndarray:
    """Untrained stand-in embedding; 64 output channels by default."""
    return rng.normal(size=(DECORATED_DIMS, out_channels)) / np.sqrt(DECORATED_DIMS)


def pillar_encode(pillars: list[Pillar], weights: np.ndarray, grid: PillarGridSpec,
                  bias: np.ndarray | None = None, relu: bool = True) -> PseudoImage:
    """Embed each decorated point with a linear map (+ ReLU), take the
    channelwise maximum over the pillar, and scatter the pooled vector to the
    pillar's cell."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != DECORATED_DIMS:
        raise ValueError(f"weights must map {DECORATED_DIMS} -> F, got shape {weights.shape}")
    f = weights.shape[1]
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64).reshape(f)
    values = np.zeros((grid.ny, grid.nx, f), dtype=np.float32)
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    for pillar in pillars:
        emb = decorate(pillar) @ weights
        if bias is not None:
            emb = emb + bias
        if relu:
            emb = np.maximum(emb, 0.0)
        values[pillar.iy, pillar.ix] = emb.max(axis=0).astype(np.float32)
        mask[pillar.iy, pillar.ix] = True
    return PseudoImage(values, mask)
