"""Oriented text boxes and shared box geometry.

A box is (center, width, height, angle). ``theta`` rotates the box-local
axes into image axes (radians, y axis pointing down); it is exactly 0.0
whenever rotation support is disabled, and stays within [-pi/4, pi/4]
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_THETA = math.pi / 4


@dataclass
class TextBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0
    label: str = "text"
    score: float = 1.0
    transcript: str | None = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> np.ndarray:
        """(4, 2) array of (x, y) corners, counterclockwise in box frame."""
        u = np.array([-self.w, self.w, self.w, -self.w]) / 2.0
        v = np.array([-self.h, -self.h, self.h, self.h]) / 2.0
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.column_stack([self.cx + u * c - v * s, self.cy + u * s + v * c])

    def aabb(self) -> tuple[float, float, float, float]:
        """Axis-aligned (x0, y0, x1, y1) bounds of the (possibly rotated) box."""
        if self.theta == 0.0:
            return (self.cx - self.w / 2, self.cy - self.h / 2,
                    self.cx + self.w / 2, self.cy + self.h / 2)
        pts = self.corners()
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

    def contains_points(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Boolean mask: which (x, y) points fall inside the box (inclusive)."""
        dx, dy = xs - self.cx, ys - self.cy
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= self.w / 2) & (np.abs(v) <= self.h / 2)


def boxes_to_xyxy(boxes) -> np.ndarray:
    """(N, 4) array of axis-aligned bounds, one row per box (AABB if rotated)."""
    out = np.empty((len(boxes), 4))
    for i, b in enumerate(boxes):
        out[i] = b.aabb()
    return out
