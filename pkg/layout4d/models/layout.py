"""
4D layout: per-object layout tuples, the ego-centric scene graph and the
validity rules applied to both.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config.settings import settings
from ..utils.errors import InvalidGeometryError
from .geometry import BoundingBox3D, RigidTransform

Relation = Literal["front", "behind", "left", "right", "near", "far"]
MotionState = Literal["static", "moving"]

EGO_NODE = 0


class GraphNode(BaseModel):
    """Ego (id 0) or layout object k (id k, 1-based)."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    label: str = Field(..., description="Semantic category, 'ego' for the ego vehicle")
    motion: MotionState = "static"


class GraphEdge(BaseModel):
    """Directed relation: ``source`` is ``relation`` of ``target``."""

    model_config = ConfigDict(frozen=True)

    source: int
    target: int
    relation: Relation


class SceneGraph(BaseModel):
    """Ego-centric scene graph."""

    model_config = ConfigDict(frozen=True)

    nodes: List[GraphNode] = Field(default_factory=list)
    edges: List[GraphEdge] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_structure(self) -> "SceneGraph":
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        if sum(1 for node in self.nodes if node.label == "ego") != 1 or EGO_NODE not in ids:
            raise ValueError("graph needs exactly one ego node with id 0")
        known = set(ids)
        for edge in self.edges:
            if edge.source not in known or edge.target not in known:
                raise ValueError(f"edge {edge.source}->{edge.target} references a missing node")
            if edge.source == edge.target:
                raise ValueError(f"self edge on node {edge.source}")
        return self

    @classmethod
    def ego_only(cls) -> "SceneGraph":
        return cls(nodes=[GraphNode(id=EGO_NODE, label="ego")])


@dataclass(frozen=True, eq=False)
class LayoutTuple:
    """
    One object: frame-0 box, per-step planar offsets and canonical shape.

    ``trajectory`` is T x 3 rows of (dx, dy, dyaw); row i moves the object
    from step i to step i + 1 in its own heading frame. ``shape`` holds M
    points in the box's local frame.
    """

    label: str
    box: BoundingBox3D
    trajectory: np.ndarray
    shape: np.ndarray
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        trajectory = np.array(self.trajectory, dtype=np.float64).reshape(-1, 3)
        shape = np.array(self.shape, dtype=np.float64).reshape(-1, 3)
        if not (np.all(np.isfinite(trajectory)) and np.all(np.isfinite(shape))):
            raise InvalidGeometryError(f"{self.label}: non-finite trajectory or shape")
        trajectory.setflags(write=False)
        shape.setflags(write=False)
        object.__setattr__(self, "trajectory", trajectory)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extra", dict(self.extra))

    @property
    def horizon(self) -> int:
        return self.trajectory.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayoutTuple):
            return NotImplemented
        return (
            self.label == other.label
            and self.box == other.box
            and np.array_equal(self.trajectory, other.trajectory)
            and np.array_equal(self.shape, other.shape)
            and dict(self.extra) == dict(other.extra)
        )


@dataclass(frozen=True, eq=False)
class SceneLayout:
    """Objects, ego trajectory (horizon + 1 world poses) and scene graph."""

    objects: Tuple[LayoutTuple, ...]
    ego_trajectory: Tuple[RigidTransform, ...]
    graph: SceneGraph
    horizon: int = settings.LAYOUT_HORIZON
    dt: float = settings.LAYOUT_DT
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        objects = tuple(self.objects)
        ego = tuple(self.ego_trajectory)
        if self.horizon < 0 or self.dt <= 0:
            raise InvalidGeometryError("horizon must be >= 0 and dt > 0")
        if len(ego) != self.horizon + 1:
            raise InvalidGeometryError(f"ego trajectory needs {self.horizon + 1} poses, got {len(ego)}")
        for k, obj in enumerate(objects, start=1):
            if obj.horizon != self.horizon:
                raise InvalidGeometryError(f"object {k} trajectory has {obj.horizon} steps, horizon is {self.horizon}")
        if len(self.graph.nodes) != len(objects) + 1:
            raise InvalidGeometryError(
                f"graph has {len(self.graph.nodes)} nodes for {len(objects)} objects plus ego"
            )
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "ego_trajectory", ego)
        object.__setattr__(self, "extra", dict(self.extra))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneLayout):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.dt == other.dt
            and self.objects == other.objects
            and self.ego_trajectory == other.ego_trajectory
            and self.graph == other.graph
            and dict(self.extra) == dict(other.extra)
        )


class ValidityRules(BaseModel):
    """Plausibility gates applied by validate_layout."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    extent: float = Field(default=100.0, gt=0, description="Boxes must stay within |x|, |y| <= extent (m)")
    overlap_max: float = Field(default=0.05, ge=0, le=1, description="Maximum horizontal IoU between two boxes")
    speed_max: Dict[str, float] = Field(
        default_factory=lambda: {
            "car": 25.0,
            "truck": 25.0,
            "bus": 25.0,
            "pedestrian": 3.0,
            "cyclist": 10.0,
        },
        description="Per-label speed cap (m/s)",
    )
    default_speed_max: float = Field(default=25.0, gt=0)
    yawrate_max: float = Field(default=1.5, gt=0, description="Maximum |dyaw| / dt (rad/s)")
    shape_tolerance: float = Field(default=0.05, ge=0, description="Relative slack on shape bounds")
    check_graph: bool = Field(default=True, description="Report graph edges contradicted by geometry")

    def speed_cap(self, label: str) -> float:
        return self.speed_max.get(label, self.default_speed_max)


ViolationKind = Literal["extent", "overlap", "speed", "yaw_rate", "shape", "graph"]


class Violation(BaseModel):
    """A single failed check."""

    kind: ViolationKind
    object_index: Optional[int] = Field(None, description="0-based index into layout.objects")
    step: Optional[int] = None
    value: Optional[float] = None
    limit: Optional[float] = None
    message: str


class ValidityReport(BaseModel):
    """Outcome of validate_layout."""

    violations: List[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def for_object(self, index: int) -> List[Violation]:
        return [v for v in self.violations if v.object_index == index]

    def kinds(self) -> set:
        return {v.kind for v in self.violations}


class GraphViolation(BaseModel):
    """A graph edge not supported by the layout geometry."""

    edge: GraphEdge
    observed: List[Relation] = Field(default_factory=list, description="Relations derived for the same node pair")
    message: str
