"""Core 3D geometry: coordinate frames, oriented boxes, rotated overlap.

Vocabulary used everywhere in this package: ``azimuth`` is the angle in the
x-y plane (atan2(y, x)), ``inclination`` the elevation above the x-y plane,
and ``yaw`` the box heading in bird's-eye view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError

# Polygon areas below this are treated as empty (sliver suppression).
AREA_EPS = 1e-12


def wrap_angle(a):
    """Wrap angle(s) to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Box3D:
    """Oriented 3D box: center, extent and yaw about the z-axis."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float
    class_id: int = 1
    instance_id: int = -1

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError("box extent must be positive")
        self.yaw = float(wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz], dtype=float)

    def bev_area(self) -> float:
        return self.l * self.w


def spherical_to_cartesian(r, azimuth, inclination) -> np.ndarray:
    """Map spherical coordinates to (x, y, z), stacked on the last axis."""
    r = np.asarray(r, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    inclination = np.asarray(inclination, dtype=float)
    cos_i = np.cos(inclination)
    return np.stack(
        [r * cos_i * np.cos(azimuth), r * cos_i * np.sin(azimuth), r * np.sin(inclination)],
        axis=-1,
    )


def cartesian_to_spherical(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`spherical_to_cartesian`.

    Returns (range, azimuth, inclination). Points on the z-axis (including
    the origin) have no azimuth and are rejected; a spinning sensor never
    samples them.
    """
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    if np.any(rho == 0.0):
        raise DegenerateInputError("point(s) on the z-axis have no defined azimuth")
    r = np.sqrt(x * x + y * y + z * z)
    return r, np.arctan2(y, x), np.arctan2(z, rho)


# Unit-cube corner signs, fixed order: x fastest, matches corner index 0..7.
_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sz in (-1.0, 1.0) for sy in (-1.0, 1.0) for sx in (-1.0, 1.0)]
)


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners of the box, shape (8, 3)."""
    half = 0.5 * np.array([box.l, box.w, box.h])
    local = _CORNER_SIGNS * half
    return local @ _rot_z(box.yaw).T + box.center


def point_in_box(points, box: Box3D, eps: float = 0.0) -> np.ndarray:
    """Membership test in the closed box volume.

    Boundary points count as inside; ``eps`` widens the test slightly for
    callers comparing against independently computed surface hits.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float)) - box.center
    local = p @ _rot_z(box.yaw)  # rotate by -yaw
    half = 0.5 * np.array([box.l, box.w, box.h]) + eps
    inside = np.all(np.abs(local) <= half, axis=-1)
    if np.asarray(points).ndim == 1:
        return bool(inside[0])
    return inside


def bev_corners(box: Box3D) -> np.ndarray:
    """BEV footprint as a counter-clockwise quadrilateral, shape (4, 2)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon (positive for CCW order)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` against convex CCW ``clip``."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        inputs = output
        output = []
        prev = inputs[-1]
        prev_side = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0])
        for cur in inputs:
            cur_side = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0])
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - cur_side)
                    output.append(prev + t * (cur - prev))
                output.append(cur)
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - cur_side)
                output.append(prev + t * (cur - prev))
            prev, prev_side = cur, cur_side
    return np.array(output) if output else np.zeros((0, 2))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_convex_polygon(bev_corners(a), bev_corners(b))
    area = abs(polygon_area(inter))
    return 0.0 if area < AREA_EPS else area


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU of the two BEV footprints."""
    inter = bev_intersection_area(a, b)
    union = a.bev_area() + b.bev_area() - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU: BEV intersection area times vertical overlap."""
    inter_area = bev_intersection_area(a, b)
    if inter_area == 0.0:
        return 0.0
    z_lo = max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h)
    z_hi = min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h)
    dz = z_hi - z_lo
    if dz <= 0.0:
        return 0.0
    inter = inter_area * dz
    union = a.l * a.w * a.h + b.l * b.w * b.h - inter
    return min(1.0, inter / union)


def _segment_distance(p1, p2, q1, q2) -> float:
    """Min distance between two 2D segments."""

    def point_seg(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            return float(np.linalg.norm(p - a))
        t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        return float(np.linalg.norm(p - (a + t * ab)))

    return min(
        point_seg(p1, q1, q2),
        point_seg(p2, q1, q2),
        point_seg(q1, p1, p2),
        point_seg(q2, p1, p2),
    )


def bev_distance(a: Box3D, b: Box3D) -> float:
    """Min distance between the two BEV rectangles (0 when they overlap)."""
    if bev_intersection_area(a, b) > 0.0:
        return 0.0
    pa, pb = bev_corners(a), bev_corners(b)
    best = math.inf
    for i in range(4):
        for j in range(4):
            d = _segment_distance(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4])
            best = min(best, d)
    return best
