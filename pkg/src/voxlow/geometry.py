"""Rotated-box geometry in bird's-eye view and 3D.

Boxes use ``w`` for the lateral extent and ``l`` for the extent along the
heading; ``yaw`` is counterclockwise from +x. All math is float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import kernels
from ._pykernels import clip_polygon, polygon_area

SLIVER_AREA = 1e-12


def normalize_yaw(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r < 0.0:
        r += 2.0 * math.pi
    r -= math.pi
    return math.pi if r <= -math.pi else r


@dataclass(frozen=True)
class RotatedBox2D:
    cx: float
    cy: float
    w: float
    l: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, l={self.l}")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def area(self) -> float:
        return self.w * self.l


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    z: float
    w: float
    l: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, l={self.l}, h={self.h}")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def bev(self) -> RotatedBox2D:
        return RotatedBox2D(self.cx, self.cy, self.w, self.l, self.yaw)

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.z, self.w, self.l, self.h, self.yaw]

    @classmethod
    def from_list(cls, v) -> "Box3D":
        cx, cy, z, w, l, h, yaw = (float(e) for e in v)
        return cls(cx, cy, z, w, l, h, yaw)


def corners(b: RotatedBox2D) -> list[tuple[float, float]]:
    """The four vertices in counterclockwise order."""
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    hl, hw = 0.5 * b.l, 0.5 * b.w
    out = []
    for u, v in ((-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)):
        out.append((b.cx + u * c - v * s, b.cy + u * s + v * c))
    return out


def envelope(b: RotatedBox2D) -> tuple[float, float, float, float]:
    """Axis-aligned ``(xmin, ymin, xmax, ymax)`` around the rotated box."""
    c, s = abs(math.cos(b.yaw)), abs(math.sin(b.yaw))
    ex = 0.5 * (b.l * c + b.w * s)
    ey = 0.5 * (b.l * s + b.w * c)
    return (b.cx - ex, b.cy - ey, b.cx + ex, b.cy + ey)


def aabb_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return min(1.0, inter / union)


def convex_clip(subject, clip) -> list[tuple[float, float]]:
    """Intersection of two counterclockwise convex polygons (Sutherland-Hodgman)."""
    out = clip_polygon(subject, clip)
    if len(out) < 3 or polygon_area(out) < SLIVER_AREA:
        return []
    return out


def area(poly) -> float:
    return abs(polygon_area(poly))


def _ordered(a: RotatedBox2D, b: RotatedBox2D):
    # fixed clip order makes the result exactly symmetric in (a, b)
    ka = (a.cx, a.cy, a.w, a.l, a.yaw)
    kb = (b.cx, b.cy, b.w, b.l, b.yaw)
    return (b, a) if kb < ka else (a, b)


def bev_intersection_area(a: RotatedBox2D, b: RotatedBox2D) -> float:
    a, b = _ordered(a, b)
    return kernels.convex_intersection_area(corners(a), corners(b))


def rotated_iou_bev(a: RotatedBox2D, b: RotatedBox2D) -> float:
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


def iou_3d(a: Box3D, b: Box3D) -> float:
    top = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h)
    bottom = max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    dz = top - bottom
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a.bev, b.bev) * dz
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / (a.volume + b.volume - inter))
