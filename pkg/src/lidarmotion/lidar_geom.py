"""Point clouds, the lidar sensor model and range-image projection.

Axes follow the ego frame used throughout the package: Z forward, X right,
Y up. Column 0 of a range image looks at the left edge of the horizontal field
of view, row 0 is the highest laser.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


def default_vertical_angles() -> Tuple[float, ...]:
    """Nominal HDL-64E span: 64 lasers evenly spaced from +2.0 to -24.8 degrees."""
    return tuple(float(a) for a in np.linspace(2.0, -24.8, 64))


@dataclass(frozen=True)
class SensorModel:
    n_rows: int = 64
    n_cols: int = 448
    azimuth_min: float = -40.5
    azimuth_max: float = 40.5
    vertical_angles: Tuple[float, ...] = field(default_factory=default_vertical_angles)

    def __post_init__(self):
        angles = np.asarray(self.vertical_angles, dtype=float)
        if len(angles) != self.n_rows:
            raise ValueError(f"{len(angles)} vertical angles for {self.n_rows} rows")
        if self.n_rows < 2 or self.n_cols < 1:
            raise ValueError("sensor needs at least 2 rows and 1 column")
        if not self.azimuth_min < self.azimuth_max:
            raise ValueError("azimuth_min must be below azimuth_max")
        if np.any(np.diff(angles) >= 0):
            raise ValueError("vertical angles must be strictly decreasing from row 0")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def col_pitch(self) -> float:
        """Azimuth width of one column, degrees."""
        return (self.azimuth_max - self.azimuth_min) / self.n_cols

    def row_edges(self) -> np.ndarray:
        """Elevation boundaries (degrees, decreasing), length n_rows + 1.

        Interior edges are midpoints between neighbouring lasers; the outer
        edges sit half a pitch beyond the first and last laser.
        """
        a = np.asarray(self.vertical_angles, dtype=float)
        mid = 0.5 * (a[:-1] + a[1:])
        top = a[0] + 0.5 * (a[0] - a[1])
        bottom = a[-1] - 0.5 * (a[-2] - a[-1])
        return np.concatenate([[top], mid, [bottom]])

    def row_elevations(self) -> np.ndarray:
        return np.asarray(self.vertical_angles, dtype=float)

    def col_azimuths(self) -> np.ndarray:
        """Azimuth of every column centre, degrees."""
        return self.azimuth_min + (np.arange(self.n_cols) + 0.5) * self.col_pitch

    def ray_directions(self) -> np.ndarray:
        """Unit ray through every cell centre, shape (n_rows, n_cols, 3) as (X, Y, Z)."""
        el = np.radians(self.row_elevations())[:, None]
        az = np.radians(self.col_azimuths())[None, :]
        cos_el = np.cos(el)
        return np.stack(
            np.broadcast_arrays(cos_el * np.sin(az), np.sin(el), cos_el * np.cos(az)),
            axis=-1,
        )


@dataclass
class PointCloud:
    """Lidar returns as an (N, 4) array of X, Y, Z (metres) and reflectivity."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"point array must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        refl = pts[:, 3]
        if np.any((refl < 0) | (refl > 1)):
            raise ValueError("reflectivity must lie in [0, 1]")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectivity(self) -> np.ndarray:
        return self.points[:, 3]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))


@dataclass
class RangeImage:
    range: np.ndarray
    reflectivity: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.range.shape == self.reflectivity.shape == self.valid.shape):
            raise ValueError("range, reflectivity and valid must share one shape")
        if np.any(self.range[~self.valid] != 0) or np.any(self.reflectivity[~self.valid] != 0):
            raise ValueError("invalid cells must hold zero range and reflectivity")
        if np.any(self.range[self.valid] <= 0):
            raise ValueError("valid cells need a positive range")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.range.shape

    @classmethod
    def empty(cls, shape) -> "RangeImage":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=bool))


def cell_indices(xyz: np.ndarray, sensor: SensorModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row and column of each point plus a keep mask (inside the field of view)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    elevation = np.degrees(np.arctan2(y, np.hypot(x, z)))
    azimuth = np.degrees(np.arctan2(x, z))

    edges = sensor.row_edges()
    # edges decrease; search on the negated (increasing) array
    row = np.searchsorted(-edges, -elevation, side="right") - 1
    in_rows = (elevation <= edges[0]) & (elevation > edges[-1])
    row = np.clip(row, 0, sensor.n_rows - 1)

    span = sensor.azimuth_max - sensor.azimuth_min
    col = np.floor((azimuth - sensor.azimuth_min) / span * sensor.n_cols).astype(np.int64)
    in_cols = (azimuth >= sensor.azimuth_min) & (azimuth <= sensor.azimuth_max) & (col >= 0) & (col < sensor.n_cols)
    rng = np.linalg.norm(xyz, axis=1)
    keep = in_rows & in_cols & (rng > 0)
    return row, col, keep


def project(cloud: PointCloud, sensor: SensorModel) -> RangeImage:
    """Spherical projection onto the (n_rows, n_cols) grid; the nearest return wins a cell."""
    image = RangeImage.empty(sensor.shape)
    if len(cloud) == 0:
        return image
    xyz = cloud.xyz
    row, col, keep = cell_indices(xyz, sensor)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return image
    rng = np.linalg.norm(xyz[idx], axis=1)
    cell = row[idx] * sensor.n_cols + col[idx]
    # sort by cell, then range, then original index: first entry per cell wins
    order = np.lexsort((idx, rng, cell))
    cell_sorted = cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    winners = order[first]
    flat_range = image.range.reshape(-1)
    flat_refl = image.reflectivity.reshape(-1)
    flat_valid = image.valid.reshape(-1)
    flat_range[cell[winners]] = rng[winners]
    flat_refl[cell[winners]] = cloud.reflectivity[idx[winners]]
    flat_valid[cell[winners]] = True
    return image


def unproject(image: RangeImage, sensor: SensorModel, row: int, col: int) -> Optional[np.ndarray]:
    """3D point of one cell along its centre ray, or ``None`` when the cell has no return."""
    if not (0 <= row < sensor.n_rows and 0 <= col < sensor.n_cols):
        raise IndexError(f"cell ({row}, {col}) outside {sensor.shape}")
    if not image.valid[row, col]:
        return None
    el = np.radians(sensor.vertical_angles[row])
    az = np.radians(sensor.azimuth_min + (col + 0.5) * sensor.col_pitch)
    direction = np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    return image.range[row, col] * direction


def unproject_all(image: RangeImage, sensor: SensorModel) -> np.ndarray:
    """Points of every cell, shape (n_rows, n_cols, 3); invalid cells are zero."""
    return sensor.ray_directions() * image.range[..., None]


def to_cloud(image: RangeImage, sensor: SensorModel) -> PointCloud:
    pts = unproject_all(image, sensor)[image.valid]
    return PointCloud(np.column_stack([pts, image.reflectivity[image.valid]]))
