"""Static PPM rendering of range images and instance planes."""

from __future__ import annotations

import numpy as np

from .formats import atomic_write

#: Fixed instance palette; id k maps to PALETTE[k % 16].
PALETTE = np.array(
    [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 190],
        [0, 128, 128],
        [170, 110, 40],
        [255, 250, 200],
        [128, 0, 0],
        [170, 255, 195],
        [128, 128, 0],
    ],
    dtype=np.uint8,
)


def inverse_depth_rgb(range_plane: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Inverse-depth colormap: t = 1/(1+r); near is warm, far is cold.

    RGB = (255 t, 255 * 4 t (1 - t), 255 (1 - t)), rounded; invalid is black.
    """
    r = np.maximum(np.asarray(range_plane, dtype=float), 0.0)
    t = 1.0 / (1.0 + r)
    rgb = np.stack(
        [
            np.rint(255.0 * t),
            np.rint(255.0 * 4.0 * t * (1.0 - t)),
            np.rint(255.0 * (1.0 - t)),
        ],
        axis=-1,
    ).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def instance_rgb(instance_plane: np.ndarray) -> np.ndarray:
    """Palette coloring of instance ids; negative ids are black."""
    ids = np.asarray(instance_plane, dtype=np.int64)
    rgb = PALETTE[np.clip(ids, 0, None) % len(PALETTE)]
    rgb = rgb.copy()
    rgb[ids < 0] = 0
    return rgb


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 PPM."""
    m, n, _ = rgb.shape
    with atomic_write(path) as f:
        f.write(f"P6\n{n} {m}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
