"""
Sensor description, range images and BEV histograms.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config.settings import settings
from ..utils.errors import InvalidGeometryError

# In-memory marker for cells without a return. Dumps write 0 instead.
NO_RETURN = np.inf

# Stored ranges are multiples of this (m); the norm of an unprojected point snaps
# back to the range it came from.
RANGE_RESOLUTION = 2.0 ** -30


def snap_ranges(values: np.ndarray) -> np.ndarray:
    """Round ranges to the nearest multiple of RANGE_RESOLUTION; inf stays inf."""
    return np.round(np.asarray(values, dtype=np.float64) / RANGE_RESOLUTION) * RANGE_RESOLUTION


class SensorSpec(BaseModel):
    """Spinning LiDAR geometry. Angles in radians, ranges in meters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: int = Field(default=settings.SENSOR_ROWS, ge=1, description="Number of beams")
    cols: int = Field(default=settings.SENSOR_COLS, ge=2, description="Azimuth bins")
    elev_max: float = Field(default=settings.SENSOR_ELEV_MAX, description="Top edge of the vertical field of view")
    elev_min: float = Field(default=settings.SENSOR_ELEV_MIN, description="Bottom edge of the vertical field of view")
    range_min: float = Field(default=settings.SENSOR_RANGE_MIN, gt=0)
    range_max: float = Field(default=settings.SENSOR_RANGE_MAX, gt=0)
    elevations: Optional[List[float]] = Field(
        default=None, description="Optional per-row beam elevations, strictly descending (row 0 on top)"
    )

    @model_validator(mode="after")
    def check_bounds(self) -> "SensorSpec":
        if not self.elev_max > self.elev_min:
            raise ValueError("elev_max must exceed elev_min")
        if not self.range_min < self.range_max:
            raise ValueError("range_min must be below range_max")
        if self.elevations is not None:
            table = np.asarray(self.elevations, dtype=np.float64)
            if table.shape != (self.rows,):
                raise ValueError(f"elevations needs {self.rows} entries")
            if np.any(np.diff(table) >= 0):
                raise ValueError("elevations must be strictly descending")
            if table[0] > self.elev_max or table[-1] < self.elev_min:
                raise ValueError("elevations must lie inside [elev_min, elev_max]")
        return self

    @classmethod
    def from_degrees(cls, rows: int, cols: int, elev_max_deg: float, elev_min_deg: float, **kwargs) -> "SensorSpec":
        return cls(rows=rows, cols=cols, elev_max=math.radians(elev_max_deg), elev_min=math.radians(elev_min_deg), **kwargs)

    def row_edges(self) -> np.ndarray:
        """rows + 1 elevation edges, descending from elev_max to elev_min."""
        if self.elevations is None:
            return np.linspace(self.elev_max, self.elev_min, self.rows + 1)
        table = np.asarray(self.elevations, dtype=np.float64)
        return np.concatenate(([self.elev_max], (table[:-1] + table[1:]) / 2.0, [self.elev_min]))

    def row_centers(self) -> np.ndarray:
        if self.elevations is not None:
            return np.asarray(self.elevations, dtype=np.float64)
        edges = self.row_edges()
        return (edges[:-1] + edges[1:]) / 2.0

    def col_centers(self) -> np.ndarray:
        """Azimuth of each column's central ray."""
        return math.pi * (1.0 - 2.0 * (np.arange(self.cols) + 0.5) / self.cols)


class BEVGrid(BaseModel):
    """Axis-aligned top-down raster, meters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x_min: float = -settings.BEV_EXTENT
    x_max: float = settings.BEV_EXTENT
    y_min: float = -settings.BEV_EXTENT
    y_max: float = settings.BEV_EXTENT
    bins_x: int = Field(default=settings.BEV_BINS, ge=1)
    bins_y: int = Field(default=settings.BEV_BINS, ge=1)

    @model_validator(mode="after")
    def check_extent(self) -> "BEVGrid":
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid extent must be non-empty")
        return self


@dataclass(frozen=True, eq=False)
class RangeImage:
    """rows x cols range (NO_RETURN where empty), intensity and object-id channels."""

    spec: SensorSpec
    range: np.ndarray
    intensity: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (self.spec.rows, self.spec.cols)
        rng = np.array(self.range, dtype=np.float64)
        intensity = np.array(self.intensity, dtype=np.float64)
        if rng.shape != shape or intensity.shape != shape:
            raise InvalidGeometryError(f"range image channels must be {shape}")
        finite = np.isfinite(rng)
        if np.any(np.isnan(rng)):
            raise InvalidGeometryError("range image holds NaN cells")
        if np.any(finite & ((rng < self.spec.range_min) | (rng > self.spec.range_max))):
            raise InvalidGeometryError("finite range outside [range_min, range_max]")
        rng = np.where(finite, np.clip(snap_ranges(rng), self.spec.range_min, self.spec.range_max), rng)
        labels = None
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != shape:
                raise InvalidGeometryError(f"label channel must be {shape}")
            labels.setflags(write=False)
        for array in (rng, intensity):
            array.setflags(write=False)
        object.__setattr__(self, "range", rng)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, spec: SensorSpec) -> "RangeImage":
        shape = (spec.rows, spec.cols)
        return cls(spec, np.full(shape, NO_RETURN), np.zeros(shape), np.zeros(shape, dtype=np.int64))

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.range)

    @property
    def finite_count(self) -> int:
        return int(np.count_nonzero(self.finite_mask))


@dataclass(frozen=True, eq=False)
class BEVHistogram:
    """Point counts per (x, y) cell; counts has shape (bins_x, bins_y)."""

    grid: BEVGrid
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())
