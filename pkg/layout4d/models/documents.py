"""
JSON document schemas for layouts, pose lists, dataset manifests and runs.

Documents accept unknown keys and keep them, so files written by newer
versions survive a read/write cycle.
"""

from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config.settings import settings
from .layout import SceneGraph
from .range_view import SensorSpec

Vector3 = Tuple[float, float, float]
Quaternion = Tuple[float, float, float, float]

DEFAULT_FIELDS = ("x", "y", "z", "intensity", "ring")
KITTI_FIELDS = ("x", "y", "z", "intensity")
KNOWN_FIELDS = {"x", "y", "z", "intensity", "ring", "object_id", "pad"}


class BoxDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: Vector3
    dims: Vector3
    yaw: float = 0.0


class ObjectDocument(BaseModel):
    model_config = ConfigDict(extra="allow")

    label: str
    box: BoxDocument
    trajectory: List[Vector3] = Field(..., description="Per-step (dx, dy, dyaw)")
    shape: List[Vector3] = Field(default_factory=list, description="Canonical points, box frame")


class LayoutPoseDocument(BaseModel):
    """
    One ego pose of a layout.

    ``quaternion`` is (w, x, y, z). A full ``rotation`` matrix is accepted
    instead of, or next to, the quaternion and wins when both are given;
    writers add it only when the quaternion alone would not reproduce the
    stored rotation bit for bit.
    """

    model_config = ConfigDict(extra="forbid")

    t: Optional[float] = None
    translation: Vector3
    quaternion: Optional[Quaternion] = Field(default=None, description="Rotation (w, x, y, z)")
    rotation: Optional[Tuple[Vector3, Vector3, Vector3]] = Field(default=None, description="Row-major 3x3 rotation")

    @model_validator(mode="after")
    def check_rotation(self) -> "LayoutPoseDocument":
        if self.quaternion is None and self.rotation is None:
            raise ValueError("pose needs a quaternion or a rotation matrix")
        return self


class LayoutDocument(BaseModel):
    model_config = ConfigDict(extra="allow")

    schema_version: str
    horizon: int = Field(..., ge=0)
    dt: float = Field(..., gt=0)
    objects: List[ObjectDocument] = Field(default_factory=list)
    ego_trajectory: List[LayoutPoseDocument]
    graph: SceneGraph

    @field_validator("schema_version")
    @classmethod
    def check_version(cls, value: str) -> str:
        if value.split(".")[0] != settings.SCHEMA_VERSION.split(".")[0]:
            raise ValueError(f"unsupported schema version {value!r}, expected {settings.SCHEMA_VERSION}")
        return value

    @model_validator(mode="after")
    def check_pose_times(self) -> "LayoutDocument":
        times = [pose.t for pose in self.ego_trajectory if pose.t is not None]
        for k in range(1, len(times)):
            if not times[k] > times[k - 1]:
                raise ValueError(f"ego pose times do not increase at {times[k]}")
        return self


class PoseRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: float
    translation: Vector3
    quaternion: Quaternion = Field(..., description="Rotation (w, x, y, z)")


class FrameRecord(BaseModel):
    model_config = ConfigDict(extra="allow")

    cloud_path: str
    pose: PoseRecord
    timestamp: float


class DatasetManifest(BaseModel):
    """Frames of one dataset, paths relative to the manifest file."""

    model_config = ConfigDict(extra="allow")

    schema_version: str = settings.SCHEMA_VERSION
    spec: SensorSpec = Field(default_factory=SensorSpec)
    fields: Tuple[str, ...] = Field(default=DEFAULT_FIELDS, description="Binary record layout of every cloud")
    layout_path: Optional[str] = None
    frames: List[FrameRecord] = Field(default_factory=list)

    @field_validator("fields")
    @classmethod
    def check_fields(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = set(value) - KNOWN_FIELDS
        if unknown:
            raise ValueError(f"unknown cloud fields {sorted(unknown)}")
        if not {"x", "y", "z"} <= set(value):
            raise ValueError("cloud fields must include x, y and z")
        return value

    @model_validator(mode="after")
    def check_timestamps(self) -> "DatasetManifest":
        for k in range(1, len(self.frames)):
            if not self.frames[k].timestamp > self.frames[k - 1].timestamp:
                raise ValueError(f"frame {k} timestamp does not increase")
        return self


class RunConfig(BaseModel):
    """Parameters of one command-line run, echoed into its outputs."""

    model_config = ConfigDict(extra="forbid")

    command: str
    seed: Optional[int] = None
    threads: Optional[int] = None
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input paths by role")
    outputs: Dict[str, str] = Field(default_factory=dict, description="Output paths by role")
    params: Dict[str, Any] = Field(default_factory=dict)


class InsertArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    object: ObjectDocument


class DeleteArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int


class TranslateArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int
    dx: float = 0.0
    dy: float = 0.0
    dyaw: float = 0.0


class RetrajectArgs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int
    trajectory: List[Vector3]


EDIT_ARGS = {
    "insert": InsertArgs,
    "delete": DeleteArgs,
    "translate": TranslateArgs,
    "retraject": RetrajectArgs,
}
