"""Synthetic scenes: ray-cast LiDAR sweeps and oracle prediction maps.

This module is the verification substrate: it produces clouds with exact
per-point instance labels, and prediction maps synthesized from ground-truth
targets so inference can be exercised without any network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import panoptic
from .errors import ConstraintError
from .geom import Box3D, bev_distance, spherical_to_cartesian, wrap_angle
from .rangeimage import PointCloud, SensorSpec
from .targets import PredictionMaps, TargetMaps

_NEAR_CLIP = 1e-6


@dataclass
class ClassSpec:
    """Extent ranges (meters) for one object class."""

    l_range: tuple[float, float]
    w_range: tuple[float, float]
    h_range: tuple[float, float]


DEFAULT_CLASSES: dict[int, ClassSpec] = {
    1: ClassSpec(l_range=(3.5, 5.0), w_range=(1.6, 2.2), h_range=(1.4, 1.9)),  # vehicle-like
    2: ClassSpec(l_range=(0.5, 0.9), w_range=(0.5, 0.9), h_range=(1.5, 1.9)),  # pedestrian-like
}


@dataclass
class SceneSpec:
    seed: int = 1
    box_count: tuple[int, int] = (4, 8)
    classes: dict[int, ClassSpec] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    radius_range: tuple[float, float] = (8.0, 40.0)
    min_gap: float = 2.0
    # Separation of box centers under the clustering view distance; keeps
    # radially aligned objects from fusing under the radial down-weight.
    min_view_gap: float = 2.5
    view_gap_lambda: float = 0.01
    ground_z: float = -2.0
    noise_sigma: float = 0.0
    max_retries: int = 2000

    def __post_init__(self):
        if self.box_count[1] < self.box_count[0] or self.box_count[0] < 0:
            raise ValueError("box_count range is degenerate")
        if self.radius_range[1] <= self.radius_range[0]:
            raise ValueError("radius range is degenerate")
        if self.min_gap < 0:
            raise ValueError("min_gap must be non-negative")


@dataclass
class Scene:
    boxes: list[Box3D]
    sensor: SensorSpec
    spec: SceneSpec


def generate_scene(spec: SceneSpec, sensor: SensorSpec | None = None) -> Scene:
    """Rejection-sample non-overlapping boxes; deterministic per seed."""
    sensor = sensor or SensorSpec(rows=64, cols=1024)
    rng = np.random.default_rng(spec.seed)
    count = int(rng.integers(spec.box_count[0], spec.box_count[1] + 1))
    class_ids = sorted(spec.classes)
    boxes: list[Box3D] = []
    retries = 0
    while len(boxes) < count:
        if retries > spec.max_retries:
            raise ConstraintError(
                f"could not place {count} boxes after {spec.max_retries} retries"
            )
        class_id = class_ids[int(rng.integers(len(class_ids)))]
        cs = spec.classes[class_id]
        radius = float(rng.uniform(*spec.radius_range))
        azimuth = float(rng.uniform(-math.pi, math.pi))
        l = float(rng.uniform(*cs.l_range))
        w = float(rng.uniform(*cs.w_range))
        h = float(rng.uniform(*cs.h_range))
        yaw = float(rng.uniform(-math.pi, math.pi))
        box = Box3D(
            cx=radius * math.cos(azimuth),
            cy=radius * math.sin(azimuth),
            cz=spec.ground_z + 0.5 * h,
            l=l,
            w=w,
            h=h,
            yaw=yaw,
            class_id=class_id,
            instance_id=len(boxes),
        )
        ok = all(bev_distance(box, other) >= spec.min_gap for other in boxes) and all(
            panoptic.view_distance(box.center, other.center, spec.view_gap_lambda)
            >= spec.min_view_gap
            for other in boxes
        )
        if ok:
            boxes.append(box)
        else:
            retries += 1
    return Scene(boxes=boxes, sensor=sensor, spec=spec)


def _ray_box_hits(dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Entry distance per unit ray from the origin, inf on miss (slab test)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    d = dirs @ rot.T
    o = rot @ (-box.center)
    half = 0.5 * np.array([box.l, box.w, box.h])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # Axis-parallel rays: hit only if the origin lies inside that slab.
    parallel = np.abs(d) < 1e-12
    inside_slab = np.abs(o) <= half
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), far)
    t_enter = near.max(axis=-1)
    t_exit = far.min(axis=-1)
    hit = (t_exit >= t_enter) & (t_exit > _NEAR_CLIP)
    t = np.where(t_enter > _NEAR_CLIP, t_enter, t_exit)
    return np.where(hit, t, np.inf)


def raycast_scene(scene: Scene) -> tuple[PointCloud, np.ndarray]:
    """Cast one ray per pixel; nearest hit wins.

    Returns the cloud (one point per hitting ray, row-major pixel order) and
    per-point instance ids (-1 for ground hits).
    """
    sensor = scene.sensor
    az, incl = sensor.all_rays()
    dirs = spherical_to_cartesian(1.0, az.ravel(), incl.ravel())

    best_t = np.full(len(dirs), np.inf)
    best_id = np.full(len(dirs), -2, dtype=np.int64)

    # Infinite ground plane at ground_z.
    dz = dirs[:, 2]
    with np.errstate(divide="ignore"):
        t_ground = scene.spec.ground_z / dz
    t_ground = np.where((dz != 0.0) & (t_ground > _NEAR_CLIP), t_ground, np.inf)
    hit = t_ground < best_t
    best_t[hit] = t_ground[hit]
    best_id[hit] = -1

    for box in scene.boxes:
        t = _ray_box_hits(dirs, box)
        hit = t < best_t
        best_t[hit] = t[hit]
        best_id[hit] = box.instance_id

    keep = np.isfinite(best_t)
    t = best_t[keep]
    if scene.spec.noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([scene.spec.seed, 0xB0C5]))
        t = np.maximum(t + rng.normal(0.0, scene.spec.noise_sigma, size=t.shape), _NEAR_CLIP)
    positions = dirs[keep] * t[:, None]
    cloud = PointCloud(
        positions=positions,
        intensity=np.full(len(positions), 0.5),
        elongation=np.zeros(len(positions)),
    )
    return cloud, best_id[keep]


@dataclass
class OracleNoise:
    """Per-channel-group Gaussian noise applied to oracle predictions."""

    centerness: float = 0.0
    omega: float = 0.0
    log_dim: float = 0.0
    angle: float = 0.0

    @classmethod
    def uniform_omega(cls, sigma: float) -> "OracleNoise":
        return cls(omega=sigma)


def oracle_predictions(
    tgt: TargetMaps, noise: OracleNoise | None = None, seed: int = 0, num_classes: int = 2
) -> PredictionMaps:
    """Prediction maps built from targets: 0.95/0.05 semantics plus noise."""
    noise = noise or OracleNoise()
    m, n = tgt.shape
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0AC1E]))

    scores = np.full((m, n, num_classes), 0.05)
    for k in range(num_classes):
        scores[..., k][tgt.semantic == k + 1] = 0.95
    scores[~tgt.valid] = 0.0

    def noisy(base: np.ndarray, sigma: float) -> np.ndarray:
        out = np.array(base, dtype=float)
        if sigma > 0:
            out = out + rng.normal(0.0, sigma, size=out.shape)
        return out

    centerness = np.clip(noisy(tgt.centerness, noise.centerness), 0.0, 1.0)
    p_branch = np.stack(
        [
            noisy(tgt.p_branch[..., 0], noise.omega),
            noisy(tgt.p_branch[..., 1], noise.omega),
            noisy(tgt.p_branch[..., 2], noise.log_dim),
        ],
        axis=-1,
    )
    q_branch = np.stack(
        [
            noisy(tgt.q_branch[..., 0], noise.omega),
            noisy(tgt.q_branch[..., 1], noise.log_dim),
            noisy(tgt.q_branch[..., 2], noise.log_dim),
            noisy(tgt.q_branch[..., 3], noise.angle),
            noisy(tgt.q_branch[..., 4], noise.angle),
        ],
        axis=-1,
    )
    invalid = ~tgt.valid
    centerness[invalid] = 0.0
    p_branch[invalid] = 0.0
    q_branch[invalid] = 0.0
    return PredictionMaps(
        semantic_scores=scores, centerness=centerness, p_branch=p_branch, q_branch=q_branch
    )
