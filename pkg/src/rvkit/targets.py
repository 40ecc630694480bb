"""Per-pixel training targets and the associated losses.

The semantic / center-ness planes implement the perspective centric label
assignment; the regression planes are split into a perspective branch
(lateral offset, vertical offset, log height) and a bird's-eye branch
(radial offset, log length, log width, heading cos/sin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import DegenerateInputError, ShapeMismatchError
from .geom import Box3D
from .rangeimage import RangeImage

#: Canonical regression element order used by error reports.
ELEMENT_NAMES = ("omega_x", "omega_y", "omega_z", "log_l", "log_w", "log_h", "cos_phi", "sin_phi")

# Membership slack for points produced by independent surface-hit arithmetic.
_MEMBER_EPS = 1e-9

_CLAMP = 1e-7


@dataclass
class RegressionTarget:
    """View-aligned offsets plus log extent and heading encoding."""

    omega_x: float
    omega_y: float
    omega_z: float
    log_l: float
    log_w: float
    log_h: float
    cos_phi: float
    sin_phi: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.omega_x,
                self.omega_y,
                self.omega_z,
                self.log_l,
                self.log_w,
                self.log_h,
                self.cos_phi,
                self.sin_phi,
            ]
        )


@dataclass
class LossConfig:
    lambda_s: float = 0.1
    lambda_r: float = 1.0
    tau: float = 0.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    balanced_alpha: float = 0.5
    balanced_gamma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.lambda_s < 0 or self.lambda_r < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class GaussianAssignConfig:
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class TargetMaps:
    """Per-pixel targets; masks follow the view-adaptive split."""

    semantic: np.ndarray  # (m, n) int32, 0 = background
    centerness: np.ndarray  # (m, n) in [0, 1]
    p_branch: np.ndarray  # (m, n, 3): omega_y, omega_z, log_h
    q_branch: np.ndarray  # (m, n, 5): omega_x, log_l, log_w, cos_phi, sin_phi
    box_id: np.ndarray  # (m, n) int32, -1 = none
    p_mask: np.ndarray  # foreground (centerness target > 0)
    q_mask: np.ndarray  # centric (centerness target > tau)
    valid: np.ndarray  # valid-pixel mask of the source image

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantic.shape


@dataclass
class PredictionMaps:
    """Model-output-shaped maps; per-class sigmoid scores, no softmax."""

    semantic_scores: np.ndarray  # (m, n, C), class k at channel k - 1
    centerness: np.ndarray  # (m, n)
    p_branch: np.ndarray  # (m, n, 3)
    q_branch: np.ndarray  # (m, n, 5)

    @property
    def shape(self) -> tuple[int, int]:
        return self.centerness.shape

    @property
    def num_classes(self) -> int:
        return self.semantic_scores.shape[2]


def _point_azimuth(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    if np.any((x == 0.0) & (y == 0.0)):
        raise DegenerateInputError("point(s) on the z-axis have no defined azimuth")
    return np.arctan2(y, x)


def projected_distance(points, center) -> np.ndarray | float:
    """Distance with the lateral part scaled by cos(point azimuth).

    The azimuth is taken from the point, not the center.
    """
    p = np.asarray(points, dtype=float)
    c = np.asarray(center, dtype=float)
    theta = _point_azimuth(p)
    cos2 = np.cos(theta) ** 2
    dx, dy, dz = p[..., 0] - c[0], p[..., 1] - c[1], p[..., 2] - c[2]
    d = np.sqrt(dx * dx * cos2 + dy * dy * cos2 + dz * dz)
    return float(d) if p.ndim == 1 else d


def centerness_targets(box: Box3D, members) -> np.ndarray:
    """Center-ness scores in [0, 1] for the member points of a box.

    Distances are normalized by the largest corner projected distance and the
    score is renormalized so the closest member scores exactly 1. The ratio is
    clamped with min(1, .) so the stated [0, 1] range always holds.
    """
    members = np.atleast_2d(np.asarray(members, dtype=float))
    if len(members) == 0:
        raise ValueError("member list must be non-empty")
    center = box.center
    corner_d = projected_distance(geom.box_corners(box), center)
    d_max = float(np.max(corner_d))
    d_hat = np.minimum(1.0, projected_distance(members, center) / d_max)
    denom = 1.0 - float(np.min(d_hat))
    if denom <= 0.0:
        # Every member sits at or beyond the corner envelope; only the
        # closest one(s) can claim the mandatory score of 1.
        return (d_hat == np.min(d_hat)).astype(float)
    return (1.0 - d_hat) / denom


def gaussian_targets(box: Box3D, members, cfg: GaussianAssignConfig) -> np.ndarray:
    """Gaussian assignment baseline: normalized so the max score is 1."""
    members = np.atleast_2d(np.asarray(members, dtype=float))
    if len(members) == 0:
        raise ValueError("member list must be non-empty")
    d2 = np.sum((members - box.center) ** 2, axis=-1)
    return np.exp((np.min(d2) - d2) / (2.0 * cfg.sigma**2))


def encode_regression_arrays(points, box: Box3D) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized target encoding; returns (p_branch (N,3), q_branch (N,5))."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    alpha = _point_azimuth(p)
    ca, sa = np.cos(alpha), np.sin(alpha)
    dx = box.cx - p[:, 0]
    dy = box.cy - p[:, 1]
    omega_x = ca * dx + sa * dy
    omega_y = -sa * dx + ca * dy
    omega_z = box.cz - p[:, 2]
    phi = box.yaw - alpha
    p_branch = np.stack([omega_y, omega_z, np.full_like(omega_y, math.log(box.h))], axis=-1)
    q_branch = np.stack(
        [
            omega_x,
            np.full_like(omega_x, math.log(box.l)),
            np.full_like(omega_x, math.log(box.w)),
            np.cos(phi),
            np.sin(phi),
        ],
        axis=-1,
    )
    return p_branch, q_branch


def encode_regression(point, box: Box3D) -> RegressionTarget:
    """Regression target for a single point inside (or near) a box."""
    p_branch, q_branch = encode_regression_arrays(point, box)
    return RegressionTarget(
        omega_x=float(q_branch[0, 0]),
        omega_y=float(p_branch[0, 0]),
        omega_z=float(p_branch[0, 1]),
        log_l=float(q_branch[0, 1]),
        log_w=float(q_branch[0, 2]),
        log_h=float(p_branch[0, 2]),
        cos_phi=float(q_branch[0, 3]),
        sin_phi=float(q_branch[0, 4]),
    )


def decode_boxes(points, p_branch, q_branch) -> np.ndarray:
    """Vectorized inverse of the encoding.

    Returns an (N, 7) array of (cx, cy, cz, l, w, h, yaw).
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    pb = np.atleast_2d(np.asarray(p_branch, dtype=float))
    qb = np.atleast_2d(np.asarray(q_branch, dtype=float))
    alpha = _point_azimuth(p)
    ca, sa = np.cos(alpha), np.sin(alpha)
    omega_y, omega_z, log_h = pb[:, 0], pb[:, 1], pb[:, 2]
    omega_x, log_l, log_w, cos_phi, sin_phi = (qb[:, i] for i in range(5))
    cx = p[:, 0] + ca * omega_x - sa * omega_y
    cy = p[:, 1] + sa * omega_x + ca * omega_y
    cz = p[:, 2] + omega_z
    yaw = geom.wrap_angle(np.arctan2(sin_phi, cos_phi) + alpha)
    return np.stack([cx, cy, cz, np.exp(log_l), np.exp(log_w), np.exp(log_h), yaw], axis=-1)


def decode_box(point, target: RegressionTarget, class_id: int = 1, instance_id: int = -1) -> Box3D:
    """Exact inverse of :func:`encode_regression` for a single point."""
    t = target.as_array()
    params = decode_boxes(point, t[[1, 2, 5]], t[[0, 3, 4, 6, 7]])[0]
    return Box3D(*params, class_id=class_id, instance_id=instance_id)


def build_target_maps(img: RangeImage, boxes: list[Box3D], cfg: LossConfig) -> TargetMaps:
    """Assign each valid pixel to at most one box and fill all target planes.

    A pixel inside several boxes goes to the box with the smallest projected
    distance to its center; ties break by smaller BEV area, then lower
    instance id.
    """
    m, n = img.shape
    semantic = np.zeros((m, n), dtype=np.int32)
    centerness = np.zeros((m, n), dtype=np.float64)
    p_branch = np.zeros((m, n, 3), dtype=np.float64)
    q_branch = np.zeros((m, n, 5), dtype=np.float64)
    box_id = np.full((m, n), -1, dtype=np.int32)

    ids = [b.instance_id for b in boxes]
    if len(set(ids)) != len(ids):
        raise ValueError("boxes must carry distinct instance ids")

    rows, cols = np.nonzero(img.valid)
    if len(rows):
        pts = img.points()[rows, cols]
        best_d = np.full(len(rows), np.inf)
        assigned = np.full(len(rows), -1, dtype=np.int64)  # index into boxes
        order = sorted(range(len(boxes)), key=lambda i: (boxes[i].bev_area(), boxes[i].instance_id))
        for bi in order:
            box = boxes[bi]
            inside = geom.point_in_box(pts, box, eps=_MEMBER_EPS)
            if not np.any(inside):
                continue
            d = projected_distance(pts[inside], box.center)
            sel = np.nonzero(inside)[0]
            better = d < best_d[sel]
            upd = sel[better]
            best_d[upd] = d[better]
            assigned[upd] = bi

        for bi, box in enumerate(boxes):
            mem = assigned == bi
            if not np.any(mem):
                continue
            rr, cc = rows[mem], cols[mem]
            member_pts = pts[mem]
            semantic[rr, cc] = box.class_id
            box_id[rr, cc] = box.instance_id
            centerness[rr, cc] = centerness_targets(box, member_pts)
            pb, qb = encode_regression_arrays(member_pts, box)
            p_branch[rr, cc] = pb
            q_branch[rr, cc] = qb

    p_mask = centerness > 0.0
    q_mask = centerness > cfg.tau
    return TargetMaps(
        semantic=semantic,
        centerness=centerness,
        p_branch=p_branch,
        q_branch=q_branch,
        box_id=box_id,
        p_mask=p_mask,
        q_mask=q_mask,
        valid=img.valid.copy(),
    )


def focal_loss(pred, target, alpha: float = 0.25, gamma: float = 2.0):
    """Focal loss; predictions are clamped away from 0 and 1."""
    pred = np.clip(np.asarray(pred, dtype=float), _CLAMP, 1.0 - _CLAMP)
    target = np.asarray(target, dtype=float)
    p_t = np.where(target == 1.0, pred, 1.0 - pred)
    alpha_t = np.where(target == 1.0, alpha, 1.0 - alpha)
    out = -alpha_t * (1.0 - p_t) ** gamma * np.log(p_t)
    return float(out) if out.ndim == 0 else out


def balanced_l1(residual, alpha: float = 0.5, gamma: float = 1.5):
    """Balanced L1: log-shaped near zero, linear with slope gamma outside."""
    x = np.abs(np.asarray(residual, dtype=float))
    b = math.exp(gamma / alpha) - 1.0
    small = (alpha / b) * (b * x + 1.0) * np.log1p(b * x) - alpha * x
    large = gamma * x + (gamma / b - alpha)
    out = np.where(x < 1.0, small, large)
    return float(out) if out.ndim == 0 else out


def _check_shapes(pred: PredictionMaps, tgt: TargetMaps):
    if pred.shape != tgt.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != target shape {tgt.shape}")
    if pred.p_branch.shape != tgt.p_branch.shape or pred.q_branch.shape != tgt.q_branch.shape:
        raise ShapeMismatchError("regression branch shapes differ")


def _members_per_pixel(tgt: TargetMaps) -> np.ndarray:
    """n_{i,j}: member-pixel count of the pixel's box (1 on background)."""
    counts = np.ones(tgt.shape, dtype=np.float64)
    ids, cnt = np.unique(tgt.box_id[tgt.box_id >= 0], return_counts=True)
    lookup = dict(zip(ids.tolist(), cnt.tolist()))
    fg = tgt.box_id >= 0
    if np.any(fg):
        counts[fg] = np.vectorize(lookup.__getitem__)(tgt.box_id[fg])
    return counts


def classification_loss(pred: PredictionMaps, tgt: TargetMaps, cfg: LossConfig) -> float:
    """Semantic focal loss plus the per-box-normalized center-ness term."""
    _check_shapes(pred, tgt)
    valid = tgt.valid
    total = 0.0
    for k in range(pred.num_classes):
        target_k = (tgt.semantic == k + 1).astype(float)
        loss_k = focal_loss(pred.semantic_scores[..., k], target_k, cfg.focal_alpha, cfg.focal_gamma)
        total += float(np.sum(loss_k[valid]))
    fg = valid & (tgt.centerness > 0.0)
    if np.any(fg):
        n = _members_per_pixel(tgt)
        l2 = balanced_l1(pred.centerness - tgt.centerness, cfg.balanced_alpha, cfg.balanced_gamma)
        total += float(np.sum((cfg.lambda_s / n[fg]) * l2[fg]))
    return total


def regression_loss(pred: PredictionMaps, tgt: TargetMaps, cfg: LossConfig) -> float:
    """View-adaptive regression loss: P over foreground, Q over centric pixels."""
    _check_shapes(pred, tgt)
    n = _members_per_pixel(tgt)
    total = 0.0
    p_sel = tgt.p_mask & tgt.valid
    if np.any(p_sel):
        lp = balanced_l1(pred.p_branch - tgt.p_branch, cfg.balanced_alpha, cfg.balanced_gamma)
        total += float(np.sum((cfg.lambda_r / n[p_sel])[:, None] * lp[p_sel]))
    q_sel = tgt.q_mask & tgt.valid
    if np.any(q_sel):
        lq = balanced_l1(pred.q_branch - tgt.q_branch, cfg.balanced_alpha, cfg.balanced_gamma)
        total += float(np.sum((cfg.lambda_r / n[q_sel])[:, None] * lq[q_sel]))
    return total


@dataclass
class RegressionErrorReport:
    """Mean absolute errors per element for all/centric/edge foreground pixels."""

    all: np.ndarray  # (8,) in ELEMENT_NAMES order
    centric: np.ndarray
    edge: np.ndarray
    empty: bool


def _full_residual(pred: PredictionMaps, tgt: TargetMaps) -> np.ndarray:
    """Absolute residuals stacked in ELEMENT_NAMES order, shape (m, n, 8)."""
    dp = np.abs(pred.p_branch - tgt.p_branch)
    dq = np.abs(pred.q_branch - tgt.q_branch)
    return np.stack(
        [dq[..., 0], dp[..., 0], dp[..., 1], dq[..., 1], dq[..., 2], dp[..., 2], dq[..., 3], dq[..., 4]],
        axis=-1,
    )


def regression_error_report(pred: PredictionMaps, tgt: TargetMaps, tau: float = 0.5) -> RegressionErrorReport:
    _check_shapes(pred, tgt)
    fg = tgt.valid & (tgt.centerness > 0.0)
    zeros = np.zeros(len(ELEMENT_NAMES))
    if not np.any(fg):
        return RegressionErrorReport(all=zeros, centric=zeros.copy(), edge=zeros.copy(), empty=True)
    res = _full_residual(pred, tgt)
    centric = fg & (tgt.centerness >= tau)
    edge = fg & ~centric

    def mean_over(mask):
        return res[mask].mean(axis=0) if np.any(mask) else zeros.copy()

    return RegressionErrorReport(
        all=mean_over(fg), centric=mean_over(centric), edge=mean_over(edge), empty=False
    )
