"""Oriented 3D bounding boxes (yaw about z) and point containment tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = ["Box3D", "wrap_angle", "rot_z", "points_in_box"]


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Box3D:
    """Center (x, y, z) in meters, size (l, w, h), heading yaw in (-pi, pi]."""

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got {(self.l, self.w, self.h)}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def translated(self, delta) -> "Box3D":
        d = np.asarray(delta, dtype=np.float64)
        return replace(self, x=self.x + d[0], y=self.y + d[1], z=self.z + d[2])

    def bev_corners(self) -> np.ndarray:
        """Footprint corners (4, 2) in counterclockwise order."""
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z,
                "l": self.l, "w": self.w, "h": self.h, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(d["x"], d["y"], d["z"], d["l"], d["w"], d["h"], d.get("yaw", 0.0))


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean containment mask for (n, 3) points; boundaries are inclusive."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = pts - box.center
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    lx = c * d[:, 0] - s * d[:, 1]
    ly = s * d[:, 0] + c * d[:, 1]
    return ((np.abs(lx) <= box.l / 2.0 + 1e-12)
            & (np.abs(ly) <= box.w / 2.0 + 1e-12)
            & (np.abs(d[:, 2]) <= box.h / 2.0 + 1e-12))
