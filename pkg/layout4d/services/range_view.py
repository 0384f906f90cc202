"""
Spherical projection to range images and back, plus BEV rasterization.

Binning:
    row = beam whose elevation band contains atan2(z, hypot(x, y)), row 0 on top
    col = floor(((1 - atan2(y, x) / pi) / 2) * cols) mod cols
Each cell's central ray sits at the middle of its elevation band and at
azimuth pi * (1 - 2 (col + 0.5) / cols).
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..models.geometry import PointCloud
from ..models.range_view import NO_RETURN, BEVGrid, BEVHistogram, RangeImage, SensorSpec

logger = logging.getLogger(__name__)


def _pixel_indices(points: np.ndarray, spec: SensorSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row, col and in-view mask for N x 3 points."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    elevation = np.arctan2(z, np.hypot(x, y))
    azimuth = np.arctan2(y, x)

    ascending = spec.row_edges()[::-1]
    in_view = (elevation >= spec.elev_min) & (elevation <= spec.elev_max)
    band = np.clip(np.searchsorted(ascending, elevation, side="right") - 1, 0, spec.rows - 1)
    rows = spec.rows - 1 - band

    cols = np.floor((1.0 - azimuth / np.pi) / 2.0 * spec.cols).astype(np.int64) % spec.cols
    return rows.astype(np.int64), cols, in_view


def zbuffer_winners(cells: np.ndarray, ranges: np.ndarray, tie_tolerance: float = 0.0) -> np.ndarray:
    """
    Index of the winning point for every occupied cell.

    The winner is the nearest point; points within ``tie_tolerance`` of the
    nearest count as tied and the lowest input index among them wins. The
    result is independent of evaluation order.
    """
    if cells.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(cells.size), ranges, cells))
    sorted_cells = cells[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    if tie_tolerance <= 0.0:
        return order[starts]

    nearest = np.repeat(ranges[order[starts]], np.diff(np.r_[starts, cells.size]))
    tied = order[ranges[order] <= nearest + tie_tolerance]
    by_index = tied[np.lexsort((tied, cells[tied]))]
    tied_cells = cells[by_index]
    firsts = np.flatnonzero(np.r_[True, tied_cells[1:] != tied_cells[:-1]])
    return by_index[firsts]


def project(cloud: PointCloud, spec: SensorSpec, tie_tolerance: float = 0.0) -> RangeImage:
    """Z-buffer a cloud into a range image; out-of-view and out-of-range points are dropped."""
    image = RangeImage.empty(spec)
    if len(cloud) == 0:
        return image

    ranges = np.linalg.norm(cloud.points, axis=1)
    rows, cols, in_view = _pixel_indices(cloud.points, spec)
    keep = in_view & (ranges >= spec.range_min) & (ranges <= spec.range_max)
    dropped = int(keep.size - np.count_nonzero(keep))
    if dropped:
        logger.debug("project dropped %d of %d points outside the sensor bounds", dropped, keep.size)

    index = np.flatnonzero(keep)
    cells = rows[index] * spec.cols + cols[index]
    winners = index[zbuffer_winners(cells, ranges[index], tie_tolerance)]
    flat = rows[winners] * spec.cols + cols[winners]

    rng = image.range.copy().reshape(-1)
    intensity = image.intensity.copy().reshape(-1)
    labels = image.labels.copy().reshape(-1)
    rng[flat] = ranges[winners]
    intensity[flat] = cloud.intensity[winners]
    labels[flat] = cloud.labels[winners]
    shape = (spec.rows, spec.cols)
    return RangeImage(spec, rng.reshape(shape), intensity.reshape(shape), labels.reshape(shape))


def ray_directions(spec: SensorSpec) -> np.ndarray:
    """rows x cols x 3 unit vectors along every cell's central ray."""
    elevation = spec.row_centers()[:, None]
    azimuth = spec.col_centers()[None, :]
    cos_e = np.cos(elevation)
    return np.stack(
        np.broadcast_arrays(cos_e * np.cos(azimuth), cos_e * np.sin(azimuth), np.sin(elevation)),
        axis=-1,
    )


def unproject(img: RangeImage) -> PointCloud:
    """One point per finite cell, row-major, on the cell's central ray."""
    mask = img.finite_mask
    directions = ray_directions(img.spec)[mask]
    points = directions * img.range[mask][:, None]
    labels = img.labels[mask] if img.labels is not None else np.zeros(points.shape[0], dtype=np.int64)
    return PointCloud(points, img.intensity[mask], labels)


def pixel_of(p, spec: SensorSpec) -> Optional[Tuple[int, int]]:
    """(row, col) of a point, or None when it is outside the vertical field of view."""
    point = np.asarray(p, dtype=np.float64).reshape(1, 3)
    rows, cols, in_view = _pixel_indices(point, spec)
    if not in_view[0]:
        return None
    return int(rows[0]), int(cols[0])


def bev_histogram(cloud: PointCloud, grid: Optional[BEVGrid] = None) -> BEVHistogram:
    """Count points per (x, y) cell, z ignored; cells are half-open [min, max)."""
    grid = grid or BEVGrid()
    counts = np.zeros((grid.bins_x, grid.bins_y), dtype=np.int64)
    if len(cloud) == 0:
        return BEVHistogram(grid, counts)

    x, y = cloud.points[:, 0], cloud.points[:, 1]
    inside = (x >= grid.x_min) & (x < grid.x_max) & (y >= grid.y_min) & (y < grid.y_max)
    ix = np.floor((x[inside] - grid.x_min) / (grid.x_max - grid.x_min) * grid.bins_x).astype(np.int64)
    iy = np.floor((y[inside] - grid.y_min) / (grid.y_max - grid.y_min) * grid.bins_y).astype(np.int64)
    np.clip(ix, 0, grid.bins_x - 1, out=ix)
    np.clip(iy, 0, grid.bins_y - 1, out=iy)
    flat = np.bincount(ix * grid.bins_y + iy, minlength=grid.bins_x * grid.bins_y)
    return BEVHistogram(grid, flat.reshape(grid.bins_x, grid.bins_y))
