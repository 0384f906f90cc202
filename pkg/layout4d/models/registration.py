"""
Registration parameters and results.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field

from .geometry import RigidTransform


class IcpParams(BaseModel):
    """Point-to-point ICP settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: int = Field(default=50, ge=1)
    convergence_eps: float = Field(default=1e-6, gt=0, description="Stop when an iteration improves RMS by less (m)")
    max_correspondence_dist: float = Field(default=2.0, gt=0, description="Correspondence gate (m)")
    min_correspondence_dist: float = Field(
        default=0.1, gt=0, description="The gate halves stage by stage down to this distance (m)"
    )
    surface_neighbors: int = Field(
        default=12, ge=0, description="Neighbours fitted per local surface patch, 0 matches raw samples only"
    )
    surface_refinements: int = Field(
        default=30, ge=1, description="Kabsch re-solves against the matched surface patches per iteration"
    )
    initial_translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_quaternion: Tuple[float, float, float, float] = Field(
        default=(1.0, 0.0, 0.0, 0.0), description="Initial rotation (w, x, y, z)"
    )
    voxel_size: float = Field(default=0.0, ge=0, description="Voxel downsampling before registration, 0 disables")

    @property
    def initial(self) -> RigidTransform:
        return RigidTransform.from_quaternion(self.initial_quaternion, self.initial_translation)


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """``transform`` maps source points into the target frame."""

    transform: RigidTransform
    rms_residual: float
    iterations: int
    converged: bool
    correspondences: int = 0
    # (rms before update, rms after update) per iteration, same correspondence set
    history: List[Tuple[float, float]] = field(default_factory=list)
    # "surface" when pairs were matched against fitted planes, "point" for raw samples
    matching: str = "point"
