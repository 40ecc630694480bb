"""Semantic readout and instance clustering in the range view.

Instances are found by shifting foreground points laterally/vertically toward
their predicted object center line, picking high center-ness seeds via a
local-maximum filter, linking seeds under a radially down-weighted distance,
and finally assigning every remaining foreground point to the closest cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateInputError, ShapeMismatchError
from .rangeimage import RangeImage
from .targets import PredictionMaps


@dataclass
class PanopticConfig:
    tau_c: float = 0.7
    tau_s: float = 0.3
    lam: float = 0.01  # radial down-weight of the view distance
    cluster_eps: float = 0.5
    heatmap_nms_window: int = 3
    radial_offset_variant: bool = False  # (cos a, sin a) lateral axis, kept for fidelity runs

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0 and self.lam != 1.0:
            # lam = 1 is allowed for sweeps even though the nominal range is [0, 1)
            raise ValueError("lambda must lie in [0, 1]")
        if self.cluster_eps <= 0:
            raise ValueError("cluster_eps must be positive")
        if self.heatmap_nms_window % 2 == 0:
            raise ValueError("heatmap NMS window must be odd")


@dataclass
class PanopticResult:
    semantic: np.ndarray  # (m, n) int32, 0 = background
    instance: np.ndarray  # (m, n) int32, -1 = none
    clusters: list[tuple[int, list[tuple[int, int]]]] = field(default_factory=list)
    seedless_pixels: int = 0  # foreground pixels left unlabeled for lack of seeds


def semantic_segment(pred: PredictionMaps, tau_s: float = 0.3, valid=None) -> np.ndarray:
    """Per-pixel argmax class; background when every score is at or below tau_s."""
    scores = pred.semantic_scores
    best = np.argmax(scores, axis=-1)  # first (lowest class id) wins ties
    best_score = np.take_along_axis(scores, best[..., None], axis=-1)[..., 0]
    out = np.where(best_score > tau_s, best + 1, 0).astype(np.int32)
    if valid is not None:
        out[~valid] = 0
    return out


def _azimuth(points: np.ndarray) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    if np.any((x == 0.0) & (y == 0.0)):
        raise DegenerateInputError("point(s) on the z-axis have no defined azimuth")
    return np.arctan2(y, x)


def offset_points(points, omega_y, omega_z, radial_variant: bool = False) -> np.ndarray:
    """Shift points by their lateral/vertical offsets toward the center line.

    The default lateral axis (-sin a, cos a) is the exact inverse of the
    lateral-offset encoding; the radial-axis variant (cos a, sin a) is
    available for fidelity experiments.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    oy = np.asarray(omega_y, dtype=float)
    oz = np.asarray(omega_z, dtype=float)
    a = _azimuth(p)
    if radial_variant:
        ux, uy = np.cos(a), np.sin(a)
    else:
        ux, uy = -np.sin(a), np.cos(a)
    out = np.stack([p[:, 0] + ux * oy, p[:, 1] + uy * oy, p[:, 2] + oz], axis=-1)
    return out[0] if np.asarray(points).ndim == 1 else out


def heatmap_nms(plane: np.ndarray, window: int = 3, valid=None) -> np.ndarray:
    """Keep strict local maxima of a k x k neighborhood, zero elsewhere.

    Ties survive only at the lowest row-major index of the tied pair.
    """
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be odd and >= 1")
    m, n = plane.shape
    vals = np.asarray(plane, dtype=float)
    if valid is not None:
        vals = np.where(valid, vals, -np.inf)
    half = window // 2
    padded = np.full((m + 2 * half, n + 2 * half), -np.inf)
    padded[half : half + m, half : half + n] = vals
    idx = np.arange(m * n).reshape(m, n)
    survives = np.isfinite(vals)
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[half + dr : half + dr + m, half + dc : half + dc + n]
            nb_idx = idx + dr * n + dc
            loses = (nb > vals) | ((nb == vals) & (nb_idx < idx))
            survives &= ~loses
    return np.where(survives, plane, 0.0)


def view_distances(a, b, lam: float) -> np.ndarray:
    """Elementwise view distance between matched point arrays (N, 3).

    Both points are rotated into the frame whose x-axis is their mean
    azimuth; the radial difference is scaled by lam.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    alpha = 0.5 * (_azimuth(a) + _azimuth(b))
    ca, sa = np.cos(alpha), np.sin(alpha)
    dx = (ca * a[:, 0] + sa * a[:, 1]) - (ca * b[:, 0] + sa * b[:, 1])
    dy = (-sa * a[:, 0] + ca * a[:, 1]) - (-sa * b[:, 0] + ca * b[:, 1])
    dz = a[:, 2] - b[:, 2]
    return np.sqrt(lam * dx * dx + dy * dy + dz * dz)


def view_distance(p1, p2, lam: float) -> float:
    """Distance in a frame rotated to the mean azimuth, radial part scaled by lam."""
    return float(view_distances(p1, p2, lam)[0])


def view_distance_matrix(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Pairwise view distances between point sets, shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    aa = _azimuth(a)[:, None]
    ab = _azimuth(b)[None, :]
    alpha = 0.5 * (aa + ab)
    ca, sa = np.cos(alpha), np.sin(alpha)
    x1, y1 = a[:, 0, None], a[:, 1, None]
    x2, y2 = b[None, :, 0], b[None, :, 1]
    dx = (ca * x1 + sa * y1) - (ca * x2 + sa * y2)
    dy = (-sa * x1 + ca * y1) - (-sa * x2 + ca * y2)
    dz = a[:, 2, None] - b[None, :, 2]
    return np.sqrt(lam * dx * dx + dy * dy + dz * dz)


def cluster_instances(
    img: RangeImage, pred: PredictionMaps, cfg: PanopticConfig, class_id: int
) -> tuple[np.ndarray, list[list[tuple[int, int]]], int]:
    """Instance labels for one class.

    Returns (instance plane with labels 0..K-1 and -1 elsewhere, per-cluster
    seed pixel lists, count of foreground pixels left unlabeled because the
    class produced no seeds).
    """
    if pred.shape != img.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != image shape {img.shape}")
    m, n = img.shape
    instance = np.full((m, n), -1, dtype=np.int32)
    class_mask = img.valid & (pred.semantic_scores[..., class_id - 1] > cfg.tau_s)
    rows, cols = np.nonzero(class_mask)
    if len(rows) == 0:
        return instance, [], 0

    pts = img.points()[rows, cols]
    shifted = offset_points(
        pts,
        pred.p_branch[rows, cols, 0],
        pred.p_branch[rows, cols, 1],
        radial_variant=cfg.radial_offset_variant,
    )

    suppressed = heatmap_nms(pred.centerness, cfg.heatmap_nms_window, valid=class_mask)
    seed_mask = suppressed[rows, cols] > cfg.tau_c
    seed_idx = np.nonzero(seed_mask)[0]
    if len(seed_idx) == 0:
        return instance, [], len(rows)

    seed_pts = shifted[seed_idx]
    dist = view_distance_matrix(seed_pts, seed_pts, cfg.lam)
    adj = csr_matrix(dist <= cfg.cluster_eps)
    n_comp, labels = connected_components(adj, directed=False)

    # Canonical cluster order: lowest seed row-major index first.
    seed_flat = rows[seed_idx] * n + cols[seed_idx]
    order = sorted(range(n_comp), key=lambda c: int(seed_flat[labels == c].min()))
    relabel = {c: i for i, c in enumerate(order)}
    labels = np.array([relabel[c] for c in labels])

    seeds_by_cluster = [
        [(int(rows[seed_idx[j]]), int(cols[seed_idx[j]])) for j in np.nonzero(labels == k)[0]]
        for k in range(n_comp)
    ]

    d_all = view_distance_matrix(shifted, seed_pts, cfg.lam)
    best = np.full(len(rows), np.inf)
    assign = np.zeros(len(rows), dtype=np.int32)
    for k in range(n_comp):
        dk = d_all[:, labels == k].min(axis=1)
        better = dk < best
        best[better] = dk[better]
        assign[better] = k
    instance[rows, cols] = assign
    return instance, seeds_by_cluster, 0


def panoptic_segment(img: RangeImage, pred: PredictionMaps, cfg: PanopticConfig) -> PanopticResult:
    """Semantic argmax plus per-class clustering; instance ids are global."""
    semantic = semantic_segment(pred, cfg.tau_s, valid=img.valid)
    m, n = img.shape
    instance = np.full((m, n), -1, dtype=np.int32)
    clusters: list[tuple[int, list[tuple[int, int]]]] = []
    seedless = 0
    next_id = 0
    for class_id in range(1, pred.num_classes + 1):
        inst_k, seeds, missing = cluster_instances(img, pred, cfg, class_id)
        seedless += missing
        # Clustering runs on the per-class score mask; keep only pixels whose
        # argmax semantic label agrees, so planes stay mutually consistent.
        sel = (inst_k >= 0) & (semantic == class_id)
        instance[sel] = inst_k[sel] + next_id
        for k, seed_pixels in enumerate(seeds):
            clusters.append((next_id + k, seed_pixels))
        next_id += len(seeds)
    return PanopticResult(semantic=semantic, instance=instance, clusters=clusters, seedless_pixels=seedless)


def object_center_from_points(members) -> np.ndarray:
    """Mean of member coordinates; center substitute for boxless labels."""
    members = np.atleast_2d(np.asarray(members, dtype=float))
    if len(members) == 0:
        raise ValueError("member list must be non-empty")
    return members.mean(axis=0)
