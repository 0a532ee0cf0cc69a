"""Altitude-stratified anchors, target assignment, box residual coding,
classification loss terms, and non-maximum suppression.

The scan space is cut into 1 m altitude layers, ten above and ten below the
sensor plane plus the sensor layer, 21 in total. Each layer owns one class
name (drone_0 .. drone_20) and one 1.6 x 1.6 x 1.0 m anchor box centered in
the layer, so the predicted class doubles as a coarse elevation estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D, wrap_angle
from .metrics import iou3d, iou_bev
from .pillars import PillarGridSpec

__all__ = [
    "ANCHOR_SIZE",
    "LAYER_HEIGHT",
    "NUM_LAYERS",
    "MatchThresholds",
    "AnchorLayer",
    "AnchorGrid",
    "build_anchor_layers",
    "build_anchor_grid",
    "z_residual",
    "focal_cls_term",
    "encode_box",
    "decode_box",
    "assign_targets",
    "TargetAssignment",
    "NEGATIVE",
    "IGNORED",
    "nms",
]

ANCHOR_SIZE = (1.6, 1.6, 1.0)   # length, width, height in meters
LAYER_HEIGHT = 1.0
NUM_LAYERS = 21
LAYERS_BELOW = 10

NEGATIVE = -1
IGNORED = -2


@dataclass(frozen=True)
class MatchThresholds:
    pos_iou: float = 0.4
    neg_iou: float = 0.35

    def __post_init__(self):
        if not self.pos_iou > self.neg_iou:
            raise ValueError("positive threshold must exceed negative threshold")


@dataclass(frozen=True)
class AnchorLayer:
    class_id: int
    class_name: str
    z_center: float
    size: tuple[float, float, float] = ANCHOR_SIZE


def build_anchor_layers(sensor_elevation: float = 0.0,
                        layers_below: int = LAYERS_BELOW,
                        layers_above: int = LAYERS_BELOW,
                        layer_height: float = LAYER_HEIGHT,
                        size: tuple[float, float, float] = ANCHOR_SIZE) -> list[AnchorLayer]:
    """One anchor layer per altitude band, centered mid-band.

    Layer i spans [i - layers_below, i - layers_below + 1) meters relative to
    the sensor elevation, so its center sits at (i - layers_below + 0.5).
    """
    count = layers_below + layers_above + 1
    layers = []
    for i in range(count):
        zc = sensor_elevation + (i - layers_below) * layer_height + 0.5 * layer_height
        layers.append(AnchorLayer(i, f"drone_{i}", zc, size))
    return layers


@dataclass
class AnchorGrid:
    """Anchors at every pillar cell center, replicated across all layers."""

    grid: PillarGridSpec
    layers: list[AnchorLayer]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_anchors(self) -> int:
        return self.grid.ny * self.grid.nx * self.num_layers

    def anchor_box(self, iy: int, ix: int, layer: int) -> Box3D:
        cx, cy = self.grid.cell_center(ix, iy)
        lay = self.layers[layer]
        return Box3D(cx, cy, lay.z_center, *lay.size, yaw=0.0)

    def class_of_layer(self, layer: int) -> int:
        return self.layers[layer].class_id


def build_anchor_grid(grid: PillarGridSpec, sensor_elevation: float = 0.0) -> AnchorGrid:
    return AnchorGrid(grid, build_anchor_layers(sensor_elevation))


def z_residual(gt_z: float, anchor: AnchorLayer) -> float:
    """Vertical regression target: center gap normalized by anchor height."""
    h = anchor.size[2]
    if h <= 0:
        raise ValueError("anchor height must be positive")
    return (gt_z - anchor.z_center) / h


def focal_cls_term(p: float, alpha: float = 0.25, gamma: float = 2.0,
                   with_log: bool = False) -> float:
    """Class-imbalance weighted classification term.

    The default evaluates -alpha * (1 - p)^gamma. with_log=True multiplies in
    the log-likelihood factor of the conventional focal loss instead.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    base = -alpha * (1.0 - p) ** gamma
    if not with_log:
        return base
    if p == 0.0:
        return math.inf
    return base * math.log(p)


def encode_box(box: Box3D, anchor: Box3D) -> np.ndarray:
    """Seven regression residuals of a box against its anchor: planar offsets
    normalized by the anchor footprint diagonal, vertical offset normalized by
    anchor height, log size ratios, and the yaw gap."""
    diag = math.hypot(anchor.l, anchor.w)
    return np.array([
        (box.x - anchor.x) / diag,
        (box.y - anchor.y) / diag,
        (box.z - anchor.z) / anchor.h,
        math.log(box.l / anchor.l),
        math.log(box.w / anchor.w),
        math.log(box.h / anchor.h),
        box.yaw - anchor.yaw,
    ])


def decode_box(anchor: Box3D, residuals) -> Box3D:
    """Inverse of encode_box; all-zero residuals reproduce the anchor."""
    r = np.asarray(residuals, dtype=np.float64).reshape(7)
    if not np.isfinite(r).all():
        raise ValueError("residuals must be finite")
    diag = math.hypot(anchor.l, anchor.w)
    return Box3D(
        anchor.x + r[0] * diag,
        anchor.y + r[1] * diag,
        anchor.z + r[2] * anchor.h,
        anchor.l * math.exp(r[3]),
        anchor.w * math.exp(r[4]),
        anchor.h * math.exp(r[5]),
        wrap_angle(anchor.yaw + r[6]),
    )


@dataclass
class TargetAssignment:
    """labels[iy, ix, layer] is the layer's class id where positive, NEGATIVE
    (-1) or IGNORED (-2) otherwise."""

    labels: np.ndarray
    forced_positives: list[tuple[int, int, int]] = field(default_factory=list)

    def counts(self) -> dict:
        pos = int((self.labels >= 0).sum())
        neg = int((self.labels == NEGATIVE).sum())
        ign = int((self.labels == IGNORED).sum())
        return {"positive": pos, "negative": neg, "ignored": ign}


def assign_targets(gts: list[Box3D], grid: AnchorGrid,
                   thr: MatchThresholds = MatchThresholds(),
                   use_bev: bool = False) -> TargetAssignment:
    """Label every anchor from its best overlap with the ground truth.

    Overlap >= pos_iou makes the anchor positive with its layer's class,
    overlap < neg_iou negative, anything between is ignored. Each ground
    truth box additionally forces its single best anchor positive so no
    target goes unsupervised. Anchors too far from every box to overlap are
    settled as negative without an exact IoU evaluation.
    """
    overlap = iou_bev if use_bev else iou3d
    ny, nx, nl = grid.grid.ny, grid.grid.nx, grid.num_layers
    labels = np.full((ny, nx, nl), NEGATIVE, dtype=np.int16)
    if not gts:
        return TargetAssignment(labels)

    best_iou = np.zeros(len(gts))
    best_anchor: list[tuple[int, int, int] | None] = [None] * len(gts)

    cell = grid.grid.cell_size
    for iy in range(ny):
        for ix in range(nx):
            cx, cy = grid.grid.cell_center(ix, iy)
            for il in range(nl):
                anchor = None
                best = 0.0
                for gi, gt in enumerate(gts):
                    # cheap reject: farther apart than both footprints can reach
                    reach = (math.hypot(gt.l, gt.w) + math.hypot(*ANCHOR_SIZE[:2])) / 2.0
                    if math.hypot(gt.x - cx, gt.y - cy) > reach + cell:
                        continue
                    if anchor is None:
                        anchor = grid.anchor_box(iy, ix, il)
                    v = overlap(anchor, gt)
                    best = max(best, v)
                    if v > best_iou[gi]:
                        best_iou[gi] = v
                        best_anchor[gi] = (iy, ix, il)
                if best >= thr.pos_iou:
                    labels[iy, ix, il] = grid.class_of_layer(il)
                elif best >= thr.neg_iou:
                    labels[iy, ix, il] = IGNORED

    forced = []
    for gi, gt in enumerate(gts):
        if best_anchor[gi] is None:
            # no anchor overlaps this target at all; force the nearest one
            # (distance decomposes per axis, so pick each index directly)
            ix = int(np.clip(math.floor((gt.x - grid.grid.x_range[0]) / cell), 0, nx - 1))
            iy = int(np.clip(math.floor((gt.y - grid.grid.y_range[0]) / cell), 0, ny - 1))
            il = int(np.argmin([abs(l.z_center - gt.z) for l in grid.layers]))
            best_anchor[gi] = (iy, ix, il)
        iy, ix, il = best_anchor[gi]
        labels[iy, ix, il] = grid.class_of_layer(il)
        forced.append(best_anchor[gi])
    return TargetAssignment(labels, forced)


def nms(boxes: list[Box3D], scores, iou_thr: float = 0.5,
        use_bev: bool = False) -> list[int]:
    """Greedy score-descending suppression. Returns kept indices; score ties
    fall back to the lower index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(len(boxes))
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    overlap = iou_bev if use_bev else iou3d
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(overlap(boxes[i], boxes[j]) <= iou_thr for j in kept):
            kept.append(i)
    return kept
