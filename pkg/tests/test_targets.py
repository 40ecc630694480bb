import math

import numpy as np
import pytest

from rvkit import geom, targets
from rvkit.geom import Box3D
from rvkit.rangeimage import PointCloud, SensorSpec, build_range_image
from rvkit.targets import (
    GaussianAssignConfig,
    LossConfig,
    PredictionMaps,
    balanced_l1,
    build_target_maps,
    centerness_targets,
    classification_loss,
    decode_box,
    decode_boxes,
    encode_regression,
    encode_regression_arrays,
    focal_loss,
    gaussian_targets,
    projected_distance,
    regression_error_report,
    regression_loss,
)

from conftest import points_inside, random_box


def centerness_oracle(box, members):
    """Scalar re-derivation of the center-ness assignment for cross-checking."""
    corners = geom.box_corners(box)
    d_max = 0.0
    for c in corners:
        theta = math.atan2(c[1], c[0])
        d = math.sqrt(
            (c[0] - box.cx) ** 2 * math.cos(theta) ** 2
            + (c[1] - box.cy) ** 2 * math.cos(theta) ** 2
            + (c[2] - box.cz) ** 2
        )
        d_max = max(d_max, d)
    d_hat = []
    for p in members:
        theta = math.atan2(p[1], p[0])
        d = math.sqrt(
            (p[0] - box.cx) ** 2 * math.cos(theta) ** 2
            + (p[1] - box.cy) ** 2 * math.cos(theta) ** 2
            + (p[2] - box.cz) ** 2
        )
        d_hat.append(min(1.0, d / d_max))
    d_min = min(d_hat)
    if 1.0 - d_min <= 0.0:
        return np.array([1.0 if d == d_min else 0.0 for d in d_hat])
    return np.array([(1.0 - d) / (1.0 - d_min) for d in d_hat])


class TestProjectedDistance:
    def test_on_axis_point(self):
        # theta = 0: the lateral scale is 1, so this is plain Euclidean.
        assert projected_distance([3.0, 0.0, 2.0], [0.0, 0.0, 0.0]) == pytest.approx(math.sqrt(13))

    def test_side_point_keeps_only_vertical(self):
        # theta = pi/2 kills both horizontal terms.
        assert projected_distance([0.0, 4.0, 1.0], [0.0, 0.0, 0.0]) == pytest.approx(1.0)

    def test_uses_point_azimuth(self):
        p = [10.0, 0.0, 0.0]
        d = projected_distance(p, [10.0, 3.0, 0.0])
        assert d == pytest.approx(3.0)  # cos(atan2(0, 10)) = 1

    def test_vectorized(self, rng):
        pts = rng.uniform(1, 40, size=(50, 3))
        c = np.array([5.0, 5.0, 0.0])
        d = projected_distance(pts, c)
        for i in range(50):
            assert d[i] == pytest.approx(projected_distance(pts[i], c))


class TestCenterness:
    def test_closest_member_scores_one(self, rng):
        for _ in range(50):
            box = random_box(rng)
            members = points_inside(rng, box, 30)
            scores = centerness_targets(box, members)
            assert np.all(scores >= 0.0) and np.all(scores <= 1.0)
            assert np.max(scores) == pytest.approx(1.0, abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(50):
            box = random_box(rng)
            members = points_inside(rng, box, 20)
            assert np.allclose(centerness_targets(box, members), centerness_oracle(box, members))

    def test_exact_renormalization(self):
        # Box tall enough that on-axis members see d proportional to |dz|.
        box = Box3D(10.0, 0.0, 0.0, 1.0, 1.0, 4.0, 0.0)
        corner_d = projected_distance(geom.box_corners(box), box.center)
        d_max = float(np.max(corner_d))
        members = np.array([[10.0, 0.0, 0.2 * d_max], [10.0, 0.0, 0.8 * d_max]])
        scores = centerness_targets(box, members)
        assert scores[0] == pytest.approx(1.0, abs=1e-12)
        assert scores[1] == pytest.approx(0.25, abs=1e-12)  # (1 - 0.8) / (1 - 0.2)

    def test_single_member(self):
        box = Box3D(5.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0)
        assert centerness_targets(box, [[5.5, 0.2, 0.1]]) == pytest.approx([1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            centerness_targets(Box3D(5, 0, 0, 1, 1, 1, 0), np.zeros((0, 3)))


class TestGaussian:
    def test_hand_values(self):
        box = Box3D(5.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0)
        sigma = 0.7
        members = [[5.0, 0.0, 0.0], [5.0, 0.0, sigma]]
        scores = gaussian_targets(box, members, GaussianAssignConfig(sigma=sigma))
        assert scores[0] == pytest.approx(1.0, abs=1e-12)
        assert scores[1] == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_max_is_one(self, rng):
        for _ in range(20):
            box = random_box(rng)
            scores = gaussian_targets(box, points_inside(rng, box, 25), GaussianAssignConfig())
            assert np.max(scores) == pytest.approx(1.0, abs=1e-12)
            assert np.all(scores > 0)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            GaussianAssignConfig(sigma=0.0)


class TestEncodeDecode:
    def test_hand_example(self):
        # Point on the x-axis: the view frame coincides with the world frame.
        box = Box3D(12.0, 1.0, 0.5, 4.0, 2.0, 1.5, 0.3)
        t = encode_regression([10.0, 0.0, 0.0], box)
        assert t.omega_x == pytest.approx(2.0, abs=1e-12)
        assert t.omega_y == pytest.approx(1.0, abs=1e-12)
        assert t.omega_z == pytest.approx(0.5, abs=1e-12)
        assert t.log_l == pytest.approx(math.log(4.0), abs=1e-12)
        assert t.log_w == pytest.approx(math.log(2.0), abs=1e-12)
        assert t.log_h == pytest.approx(math.log(1.5), abs=1e-12)
        assert t.cos_phi == pytest.approx(math.cos(0.3), abs=1e-12)
        assert t.sin_phi == pytest.approx(math.sin(0.3), abs=1e-12)

    def test_decode_inverts_encode(self, rng):
        for _ in range(200):
            box = random_box(rng)
            point = points_inside(rng, box, 1)[0]
            if math.hypot(point[0], point[1]) < 1e-3:
                continue
            back = decode_box(point, encode_regression(point, box))
            assert np.allclose(
                [back.cx, back.cy, back.cz, back.l, back.w, back.h],
                [box.cx, box.cy, box.cz, box.l, box.w, box.h],
                atol=1e-9,
            )
            assert abs(float(geom.wrap_angle(back.yaw - box.yaw))) < 1e-9

    def test_vectorized_matches_scalar(self, rng):
        box = random_box(rng)
        pts = points_inside(rng, box, 20)
        pb, qb = encode_regression_arrays(pts, box)
        for i in range(20):
            t = encode_regression(pts[i], box)
            assert np.allclose(pb[i], [t.omega_y, t.omega_z, t.log_h])
            assert np.allclose(qb[i], [t.omega_x, t.log_l, t.log_w, t.cos_phi, t.sin_phi])

    def test_decode_boxes_shape(self, rng):
        box = random_box(rng)
        pts = points_inside(rng, box, 7)
        pb, qb = encode_regression_arrays(pts, box)
        assert decode_boxes(pts, pb, qb).shape == (7, 7)


def small_scene():
    """A 4 x 64 image with two disjoint boxes and a few member pixels each."""
    spec = SensorSpec(rows=4, cols=64, inclination=(-0.2, 0.2))
    box_a = Box3D(10.0, 0.0, 0.0, 4.0, 4.0, 4.0, 0.0, class_id=1, instance_id=0)
    box_b = Box3D(0.0, 12.0, 0.0, 3.0, 3.0, 3.0, 0.0, class_id=2, instance_id=1)
    positions = []
    for row in range(4):
        for col in range(64):
            az, incl = spec.pixel_ray(row, col)
            positions.append(geom.spherical_to_cartesian(25.0, az, incl))
    positions = np.array(positions)
    # Pull the pixels whose rays pass near each box center onto the boxes.
    for i, p in enumerate(positions):
        d = p / np.linalg.norm(p)
        for box in (box_a, box_b):
            t_hit = np.dot(box.center, d)
            if t_hit > 0 and np.linalg.norm(d * t_hit - box.center) < 1.2:
                positions[i] = d * t_hit
    cloud = PointCloud(
        positions=positions,
        intensity=np.full(len(positions), 0.5),
        elongation=np.zeros(len(positions)),
    )
    img, _ = build_range_image(cloud, spec)
    return img, [box_a, box_b]


class TestBuildTargetMaps:
    def test_planes_consistent(self):
        img, boxes = small_scene()
        tgt = build_target_maps(img, boxes, LossConfig())
        for box in boxes:
            mem = tgt.box_id == box.instance_id
            assert np.any(mem), f"box {box.instance_id} got no member pixels"
            assert np.all(tgt.semantic[mem] == box.class_id)
            assert np.max(tgt.centerness[mem]) == pytest.approx(1.0, abs=1e-12)
        bg = tgt.box_id < 0
        assert np.all(tgt.semantic[bg] == 0)
        assert np.all(tgt.centerness[bg] == 0.0)
        assert np.all(tgt.q_mask <= tgt.p_mask)  # centric pixels are foreground
        assert np.array_equal(tgt.p_mask, tgt.centerness > 0.0)
        assert np.array_equal(tgt.q_mask, tgt.centerness > 0.5)

    def test_regression_planes_decode(self):
        img, boxes = small_scene()
        tgt = build_target_maps(img, boxes, LossConfig())
        pts = img.points()
        for box in boxes:
            rows, cols = np.nonzero(tgt.box_id == box.instance_id)
            params = decode_boxes(pts[rows, cols], tgt.p_branch[rows, cols], tgt.q_branch[rows, cols])
            assert np.allclose(params[:, :6], [box.cx, box.cy, box.cz, box.l, box.w, box.h], atol=1e-9)

    def test_overlap_goes_to_closer_center(self):
        spec = SensorSpec(rows=1, cols=8, inclination=(-0.01, 0.01))
        big = Box3D(10.0, 0.0, 0.0, 8.0, 8.0, 8.0, 0.0, class_id=1, instance_id=0)
        small = Box3D(8.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0, class_id=2, instance_id=1)
        p = np.array([[8.2, 0.0, 0.0]])  # inside both, nearer the small center
        cloud = PointCloud(positions=p, intensity=np.ones(1), elongation=np.zeros(1))
        img, _ = build_range_image(cloud, spec)
        tgt = build_target_maps(img, [big, small], LossConfig())
        assert tgt.box_id[img.valid][0] == 1

    def test_duplicate_instance_ids_rejected(self):
        img, boxes = small_scene()
        boxes[1].instance_id = boxes[0].instance_id
        with pytest.raises(ValueError):
            build_target_maps(img, boxes, LossConfig())


class TestLosses:
    def test_focal_hand_values(self):
        assert focal_loss(0.5, 1.0) == pytest.approx(0.25 * 0.25 * math.log(2.0), abs=1e-12)
        assert focal_loss(0.5, 0.0) == pytest.approx(0.75 * 0.25 * math.log(2.0), abs=1e-12)

    def test_focal_clamps(self):
        assert np.isfinite(focal_loss(0.0, 1.0))
        assert np.isfinite(focal_loss(1.0, 0.0))

    def test_balanced_l1_zero_and_even(self, rng):
        assert balanced_l1(0.0) == 0.0
        x = rng.uniform(-3, 3, size=100)
        assert np.allclose(balanced_l1(x), balanced_l1(-x))

    def test_balanced_l1_continuity(self):
        alpha, gamma = 0.5, 1.5
        b = math.exp(gamma / alpha) - 1.0
        small = (alpha / b) * (b + 1.0) * math.log1p(b) - alpha
        large = gamma + (gamma / b - alpha)
        assert abs(small - large) < 1e-12
        eps = 1e-9
        assert abs(balanced_l1(1.0 - eps) - balanced_l1(1.0 + eps)) < 1e-6

    def test_balanced_l1_linear_tail(self):
        alpha, gamma = 0.5, 1.5
        b = math.exp(gamma / alpha) - 1.0
        assert balanced_l1(3.0) == pytest.approx(gamma * 3.0 + gamma / b - alpha, abs=1e-12)

    def test_regression_loss_zero_at_targets(self):
        img, boxes = small_scene()
        tgt = build_target_maps(img, boxes, LossConfig())
        pred = PredictionMaps(
            semantic_scores=np.zeros(tgt.shape + (2,)),
            centerness=tgt.centerness.copy(),
            p_branch=tgt.p_branch.copy(),
            q_branch=tgt.q_branch.copy(),
        )
        assert regression_loss(pred, tgt, LossConfig()) == 0.0

    def test_classification_loss_single_pixel(self):
        semantic = np.array([[1]], dtype=np.int32)
        tgt = targets.TargetMaps(
            semantic=semantic,
            centerness=np.array([[1.0]]),
            p_branch=np.zeros((1, 1, 3)),
            q_branch=np.zeros((1, 1, 5)),
            box_id=np.array([[0]], dtype=np.int32),
            p_mask=np.array([[True]]),
            q_mask=np.array([[True]]),
            valid=np.array([[True]]),
        )
        pred = PredictionMaps(
            semantic_scores=np.array([[[0.5]]]),
            centerness=np.array([[1.0]]),
            p_branch=np.zeros((1, 1, 3)),
            q_branch=np.zeros((1, 1, 5)),
        )
        # Only the focal term contributes: the center-ness residual is zero.
        expected = 0.25 * 0.25 * math.log(2.0)
        assert classification_loss(pred, tgt, LossConfig()) == pytest.approx(expected, abs=1e-12)

    def test_member_count_normalization(self):
        img, boxes = small_scene()
        cfg = LossConfig()
        tgt = build_target_maps(img, boxes, cfg)
        pred = PredictionMaps(
            semantic_scores=np.zeros(tgt.shape + (2,)),
            centerness=np.clip(tgt.centerness + 0.1, 0, 1),
            p_branch=tgt.p_branch.copy(),
            q_branch=tgt.q_branch.copy(),
        )
        # Hand-accumulate the center-ness term with per-box 1/n weights.
        total = 0.0
        for box in boxes:
            mem = tgt.box_id == box.instance_id
            n = np.count_nonzero(mem)
            res = pred.centerness[mem] - tgt.centerness[mem]
            total += (cfg.lambda_s / n) * float(np.sum(balanced_l1(res)))
        focal_part = classification_loss(
            PredictionMaps(
                semantic_scores=np.zeros(tgt.shape + (2,)),
                centerness=tgt.centerness.copy(),
                p_branch=tgt.p_branch.copy(),
                q_branch=tgt.q_branch.copy(),
            ),
            tgt,
            cfg,
        )
        assert classification_loss(pred, tgt, cfg) == pytest.approx(focal_part + total, abs=1e-9)


class TestErrorReport:
    def test_zero_at_targets(self):
        img, boxes = small_scene()
        tgt = build_target_maps(img, boxes, LossConfig())
        pred = PredictionMaps(
            semantic_scores=np.zeros(tgt.shape + (2,)),
            centerness=tgt.centerness.copy(),
            p_branch=tgt.p_branch.copy(),
            q_branch=tgt.q_branch.copy(),
        )
        report = regression_error_report(pred, tgt)
        assert not report.empty
        assert np.allclose(report.all, 0.0)

    def test_constant_offset(self):
        img, boxes = small_scene()
        tgt = build_target_maps(img, boxes, LossConfig())
        pred = PredictionMaps(
            semantic_scores=np.zeros(tgt.shape + (2,)),
            centerness=tgt.centerness.copy(),
            p_branch=tgt.p_branch + 0.25,
            q_branch=tgt.q_branch.copy(),
        )
        report = regression_error_report(pred, tgt)
        # omega_y, omega_z, log_h live in the perspective branch.
        assert report.all[1] == pytest.approx(0.25)
        assert report.all[2] == pytest.approx(0.25)
        assert report.all[5] == pytest.approx(0.25)
        assert report.all[0] == 0.0
