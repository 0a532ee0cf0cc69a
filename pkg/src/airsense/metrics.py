"""3D box overlap and detection quality metrics.

Overlap of yawed boxes is the product of the vertical extent intersection and
the footprint intersection, the latter computed by Sutherland-Hodgman polygon
clipping. A detection counts as a true positive when it overlaps a ground
truth box by at least the configured IoU (0.30 by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box3D

__all__ = [
    "EvalOutcome",
    "polygon_area",
    "clip_polygon",
    "iou3d",
    "iou_bev",
    "classify",
    "aggregate",
    "TP_IOU_THRESHOLD",
]

TP_IOU_THRESHOLD = 0.30


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a counterclockwise polygon (n, 2)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject polygon against a convex
    counterclockwise clip polygon. Returns the (possibly empty) intersection."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = (b[0] - a[0], b[1] - a[1])
        inputs = output
        output = []

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= -1e-12

        for j, cur in enumerate(inputs):
            prev = inputs[j - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    output.append(_edge_intersect(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_edge_intersect(prev, cur, a, b))
    return np.array(output).reshape(-1, 2)


def _edge_intersect(p, q, a, b):
    dpq = (q[0] - p[0], q[1] - p[1])
    dab = (b[0] - a[0], b[1] - a[1])
    denom = dpq[0] * dab[1] - dpq[1] * dab[0]
    if abs(denom) < 1e-15:
        return q
    t = ((a[0] - p[0]) * dab[1] - (a[1] - p[1]) * dab[0]) / denom
    return (p[0] + t * dpq[0], p[1] + t * dpq[1])


def _bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return polygon_area(clip_polygon(a.bev_corners(), b.bev_corners()))


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = _bev_intersection_area(a, b)
    union = a.l * a.w + b.l * b.w - inter
    return inter / union if union > 0 else 0.0


def iou3d(a: Box3D, b: Box3D) -> float:
    """Intersection volume over union volume of two yawed boxes."""
    z_lo = max(a.z - a.h / 2.0, b.z - b.h / 2.0)
    z_hi = min(a.z + a.h / 2.0, b.z + b.h / 2.0)
    dz = max(0.0, z_hi - z_lo)
    if dz == 0.0:
        return 0.0
    inter = _bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def classify(dets: list[Box3D], gts: list[Box3D], iou_thr: float = TP_IOU_THRESHOLD,
             use_bev: bool = False) -> tuple[int, int, int]:
    """Greedy best-overlap matching of one frame's boxes.

    Pairs are consumed in descending IoU order; each side matches at most
    once. Unmatched ground truth boxes are false negatives, unmatched
    detections false positives. Returns (TP, FP, FN).
    """
    overlap = iou_bev if use_bev else iou3d
    pairs = []
    for di, d in enumerate(dets):
        for gi, g in enumerate(gts):
            v = overlap(d, g)
            if v >= iou_thr:
                pairs.append((v, di, gi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_d, used_g = set(), set()
    tp = 0
    for v, di, gi in pairs:
        if di in used_d or gi in used_g:
            continue
        used_d.add(di)
        used_g.add(gi)
        tp += 1
    return tp, len(dets) - tp, len(gts) - tp


@dataclass
class EvalOutcome:
    """Aggregated counts with derived rates; a rate whose denominator is zero
    is reported as None, never as 0."""

    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def aggregate(frame_counts) -> EvalOutcome:
    """Sum per-frame (TP, FP, FN) triples, then derive precision, recall, and
    the harmonic-mean F1 score."""
    counts = list(frame_counts)
    if not counts:
        raise ValueError("need at least one frame")
    tp = sum(c[0] for c in counts)
    fp = sum(c[1] for c in counts)
    fn = sum(c[2] for c in counts)
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    return EvalOutcome(tp, fp, fn, precision, recall, f1)
