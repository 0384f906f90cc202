"""
Per-frame containers for warped and simulated sequences.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .geometry import PointCloud, RigidTransform
from .layout import SceneLayout
from .range_view import RangeImage, SensorSpec


@dataclass(frozen=True, eq=False)
class FrameState:
    """An ego-frame cloud with object ids, the ego pose it was captured at, and its step."""

    cloud: PointCloud
    ego_pose: RigidTransform
    step: int

    def __post_init__(self):
        if self.cloud.object_id is None:
            object.__setattr__(self, "cloud", self.cloud.with_labels(self.cloud.labels))
        if self.step < 0:
            raise ValueError("step must be non-negative")


@dataclass(frozen=True, eq=False)
class SimulatedFrame:
    """One raycast frame: range image, its labelled cloud and the ego pose."""

    image: RangeImage
    cloud: PointCloud
    ego_pose: RigidTransform


@dataclass(frozen=True, eq=False)
class DatasetSample:
    """One evaluation item: ego-frame cloud, its range image and capture pose."""

    cloud: PointCloud
    image: RangeImage
    ego_pose: RigidTransform
    timestamp: float = 0.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered samples sharing one sensor, optionally backed by a layout."""

    samples: Tuple[DatasetSample, ...]
    spec: SensorSpec
    layout: Optional[SceneLayout] = None
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def clouds(self) -> List[PointCloud]:
        return [sample.cloud for sample in self.samples]

    @property
    def poses(self) -> List[RigidTransform]:
        return [sample.ego_pose for sample in self.samples]
