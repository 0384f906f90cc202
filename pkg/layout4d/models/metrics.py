"""
Metric containers, evaluation configuration and the report schema.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..config.settings import settings
from .range_view import BEVGrid
from .registration import IcpParams


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    """Mean and (symmetric, PSD) covariance of a feature distribution."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class TransformError(NamedTuple):
    """Mean registration error over a sequence."""

    translation: float
    rotation_deg: float


class MmdEstimate(NamedTuple):
    value: float
    raw: float
    bandwidth: float


def _finite_non_negative(value: Optional[float]) -> Optional[float]:
    if value is not None and (not math.isfinite(value) or value < 0):
        raise ValueError(f"metric value {value} must be finite and non-negative")
    return value


class SceneMetrics(BaseModel):
    frd: float
    fpd: float
    jsd_bev: float
    mmd_bev: float
    mmd_range: float
    mmd_points: float

    @field_validator("*")
    @classmethod
    def check_value(cls, value: float) -> float:
        return _finite_non_negative(value)


class ObjectMetrics(BaseModel):
    fpd: float
    p_mmd: float
    jsd: float
    mmd: float

    @field_validator("*")
    @classmethod
    def check_value(cls, value: float) -> float:
        return _finite_non_negative(value)


class TtceEntry(BaseModel):
    translation: float = Field(..., description="Mean translation error (m)")
    rotation_deg: float = Field(..., description="Mean rotation error (deg)")

    @field_validator("*")
    @classmethod
    def check_value(cls, value: float) -> float:
        return _finite_non_negative(value)


class TemporalMetrics(BaseModel):
    ttce: Dict[int, TtceEntry] = Field(default_factory=dict, description="Keyed by frame interval")
    ctc: Dict[int, float] = Field(default_factory=dict, description="Keyed by frame interval (m^2)")

    @field_validator("ctc")
    @classmethod
    def check_ctc(cls, value: Dict[int, float]) -> Dict[int, float]:
        for v in value.values():
            _finite_non_negative(v)
        return value


class FdcSummary(BaseModel):
    """Detector confidence on generated foregrounds, from an external detector."""

    per_category: Dict[str, float] = Field(default_factory=dict)
    boxes_per_frame: float = 0.0
    frames: int = 0


class MetricReport(BaseModel):
    """Results of an evaluation run, schema-versioned."""

    schema_version: str = settings.SCHEMA_VERSION
    scene: Optional[SceneMetrics] = None
    object: Optional[ObjectMetrics] = None
    temporal: Optional[TemporalMetrics] = None
    fdc: Optional[FdcSummary] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)


class EvalConfig(BaseModel):
    """Evaluation knobs; every field is echoed into report metadata."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    bev_grid: BEVGrid = Field(default_factory=BEVGrid, description="Grid for aggregated BEV JSD")
    mmd_bev_grid: BEVGrid = Field(
        default_factory=lambda: BEVGrid(bins_x=100, bins_y=100), description="Grid for per-sample BEV MMD features"
    )
    range_bins: int = Field(default=64, ge=2)
    radial_bins: int = Field(default=64, ge=2)
    bandwidth: Optional[float] = Field(default=None, gt=0, description="Gaussian kernel sigma; median heuristic when unset")
    object_grid: int = Field(default=8, ge=1, description="Canonical occupancy resolution for object JSD/MMD")
    ttce_intervals: Tuple[int, ...] = (3, 4)
    ctc_intervals: Tuple[int, ...] = (1, 2, 3, 4)
    radial_max: float = Field(default=settings.SENSOR_RANGE_MAX, gt=0, description="Upper edge of the radial point histogram (m)")
    icp: IcpParams = Field(default_factory=lambda: IcpParams(voxel_size=max(0.0, settings.ICP_VOXEL_SIZE)))
    feature_providers: Dict[str, str] = Field(
        default_factory=lambda: {"range": "range-view-baseline", "points": "points-baseline", "object": "canonical-occupancy"}
    )

    @field_validator("ttce_intervals", "ctc_intervals")
    @classmethod
    def check_intervals(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(k < 0 for k in value):
            raise ValueError("frame intervals must be non-negative")
        return value

    @property
    def max_interval(self) -> int:
        return max(self.ttce_intervals + self.ctc_intervals, default=0)
