import numpy as np
import pytest

from rvkit.geom import Box3D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_box(rng, class_id=1, instance_id=-1) -> Box3D:
    return Box3D(
        cx=float(rng.uniform(-40, 40)),
        cy=float(rng.uniform(-40, 40)),
        cz=float(rng.uniform(-3, 3)),
        l=float(rng.uniform(0.5, 5.0)),
        w=float(rng.uniform(0.5, 3.0)),
        h=float(rng.uniform(0.5, 3.0)),
        yaw=float(rng.uniform(-np.pi, np.pi)),
        class_id=class_id,
        instance_id=instance_id,
    )


def points_inside(rng, box: Box3D, count: int) -> np.ndarray:
    """Uniform samples in the box volume (world frame)."""
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    local = rng.uniform(-0.5, 0.5, size=(count, 3)) * np.array([box.l, box.w, box.h])
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center
