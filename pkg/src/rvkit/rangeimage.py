"""Range image construction: the m x n sensor grid and pixel/ray mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import DegenerateInputError

#: Channel names every range image carries.
CHANNELS = ("range", "intensity", "elongation", "x", "y", "z", "azimuth", "inclination")

INVALID_RANGE = -1.0


@dataclass
class SensorSpec:
    """Grid of a spinning sensor: rows are beams, cols are azimuth steps.

    ``inclination`` is either a (min, max) pair for a uniform beam spacing or
    an explicit per-row table in radians. Row 0 is always the highest beam.
    """

    rows: int
    cols: int
    azimuth_span: tuple[float, float] = (-math.pi, math.pi)
    inclination: tuple[float, float] | np.ndarray = (-0.30, 0.05)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        lo, hi = self.azimuth_span
        if not hi > lo:
            raise ValueError("azimuth span must be non-empty")
        incl = np.asarray(self.inclination, dtype=float)
        if incl.shape == (2,) and not isinstance(self.inclination, np.ndarray):
            self._table = None
            if not incl[1] > incl[0]:
                raise ValueError("inclination range must be non-empty")
        else:
            if incl.shape != (self.rows,):
                raise ValueError("per-row inclination table must have one entry per row")
            diffs = np.diff(incl)
            if np.all(diffs > 0):
                incl = incl[::-1]
            elif not np.all(diffs < 0):
                raise ValueError("inclination table must be strictly monotonic")
            self._table = incl  # descending, row 0 highest

    @property
    def azimuth_step(self) -> float:
        lo, hi = self.azimuth_span
        return (hi - lo) / self.cols

    def row_inclinations(self) -> np.ndarray:
        """Beam inclinations, descending (row 0 is the highest beam)."""
        if self._table is not None:
            return self._table.copy()
        lo, hi = self.inclination
        step = (hi - lo) / self.rows
        return hi - (np.arange(self.rows) + 0.5) * step

    def inclination_edges(self) -> np.ndarray:
        """Descending bin edges, shape (rows + 1,)."""
        if self._table is None:
            lo, hi = self.inclination
            return np.linspace(hi, lo, self.rows + 1)
        t = self._table
        mids = 0.5 * (t[:-1] + t[1:])
        top = t[0] + 0.5 * (t[0] - t[1])
        bottom = t[-1] - 0.5 * (t[-2] - t[-1])
        return np.concatenate([[top], mids, [bottom]])

    def pixel_ray(self, row: int, col: int) -> tuple[float, float]:
        """Bin-center (azimuth, inclination) for a pixel."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError("pixel index out of range")
        lo, _ = self.azimuth_span
        azimuth = lo + (col + 0.5) * self.azimuth_step
        return azimuth, float(self.row_inclinations()[row])

    def all_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """(azimuth, inclination) grids of shape (rows, cols)."""
        lo, _ = self.azimuth_span
        az = lo + (np.arange(self.cols) + 0.5) * self.azimuth_step
        incl = self.row_inclinations()
        return np.broadcast_to(az, (self.rows, self.cols)).copy(), np.broadcast_to(
            incl[:, None], (self.rows, self.cols)
        ).copy()


@dataclass
class PointCloud:
    """Point positions with sensor attributes; rows/cols carry provenance."""

    positions: np.ndarray  # (N, 3)
    intensity: np.ndarray  # (N,)
    elongation: np.ndarray  # (N,)
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class RangeImage:
    """Multi-channel m x n grid; invalid pixels carry range = -1."""

    spec: SensorSpec
    channels: dict[str, np.ndarray]
    valid: np.ndarray
    source: np.ndarray = field(default=None)  # point index per pixel, -1 if none

    @property
    def shape(self) -> tuple[int, int]:
        return self.spec.rows, self.spec.cols

    def points(self) -> np.ndarray:
        """Per-pixel (x, y, z), shape (rows, cols, 3)."""
        return np.stack([self.channels["x"], self.channels["y"], self.channels["z"]], axis=-1)


def bin_points(positions: np.ndarray, spec: SensorSpec):
    """Map points to (row, col) bins; returns (row, col, keep_mask, r, az, incl)."""
    r, az, incl = geom.cartesian_to_spherical(positions)
    lo, hi = spec.azimuth_span
    col = np.floor((az - lo) / spec.azimuth_step).astype(np.int64)
    # Azimuth exactly at the upper seam wraps to bin 0.
    col[az == hi] = 0
    keep = (col >= 0) & (col < spec.cols)

    edges = spec.inclination_edges()  # descending
    row = np.searchsorted(-edges, -incl, side="right") - 1
    # The bottom edge is closed so the lowest beam keeps its boundary.
    row[incl == edges[-1]] = spec.rows - 1
    keep &= (row >= 0) & (row < spec.rows)
    return row, col, keep, r, az, incl


def build_range_image(cloud: PointCloud, spec: SensorSpec) -> tuple[RangeImage, int]:
    """Project a point cloud onto the sensor grid.

    Bin collisions resolve nearest-wins (smallest range). Points outside the
    sensor span are dropped; the drop count is returned alongside the image.
    """
    m, n = spec.rows, spec.cols
    channels = {name: np.zeros((m, n), dtype=np.float64) for name in CHANNELS}
    channels["range"].fill(INVALID_RANGE)
    valid = np.zeros((m, n), dtype=bool)
    source = np.full((m, n), -1, dtype=np.int64)
    img = RangeImage(spec=spec, channels=channels, valid=valid, source=source)

    if len(cloud) == 0:
        return img, 0

    positions = np.asarray(cloud.positions, dtype=float)
    row, col, keep, r, az, incl = bin_points(positions, spec)
    dropped = int(len(positions) - np.count_nonzero(keep))
    if dropped == len(positions):
        return img, dropped

    idx = np.nonzero(keep)[0]
    # Write farthest first so the nearest return ends up in the pixel.
    order = idx[np.argsort(-r[idx], kind="stable")]
    rr, cc = row[order], col[order]
    channels["range"][rr, cc] = r[order]
    channels["intensity"][rr, cc] = np.asarray(cloud.intensity, dtype=float)[order]
    channels["elongation"][rr, cc] = np.asarray(cloud.elongation, dtype=float)[order]
    channels["x"][rr, cc] = positions[order, 0]
    channels["y"][rr, cc] = positions[order, 1]
    channels["z"][rr, cc] = positions[order, 2]
    channels["azimuth"][rr, cc] = az[order]
    channels["inclination"][rr, cc] = incl[order]
    valid[rr, cc] = True
    source[rr, cc] = order
    return img, dropped


def range_image_to_points(img: RangeImage) -> PointCloud:
    """One point per valid pixel, with (row, col) provenance."""
    rows, cols = np.nonzero(img.valid)
    ch = img.channels
    positions = np.stack([ch["x"][rows, cols], ch["y"][rows, cols], ch["z"][rows, cols]], axis=-1)
    return PointCloud(
        positions=positions,
        intensity=ch["intensity"][rows, cols].copy(),
        elongation=ch["elongation"][rows, cols].copy(),
        rows=rows,
        cols=cols,
    )
