"""
Immutable array containers shared by every service.

Rotations are stored as 3x3 matrices; quaternions (w, x, y, z) only appear at
I/O boundaries.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ..utils.errors import InvalidGeometryError

ORTHONORMAL_TOLERANCE = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]; in-range angles are returned unchanged."""
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = math.pi - (math.pi - angle) % (2.0 * math.pi)
    return wrapped + 2.0 * math.pi if wrapped <= -math.pi else wrapped


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about +z."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element: p' = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidGeometryError("rigid transform has non-finite entries")
        error = np.linalg.norm(rotation @ rotation.T - np.eye(3))
        if error > ORTHONORMAL_TOLERANCE or np.linalg.det(rotation) <= 0:
            raise InvalidGeometryError(f"rotation is not a proper orthonormal matrix (error {error:.3e})")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(yaw_matrix(yaw), translation)

    @classmethod
    def from_translation(cls, translation: Sequence[float]) -> "RigidTransform":
        return cls(np.eye(3), translation)

    @classmethod
    def from_quaternion(cls, quaternion: Sequence[float], translation: Sequence[float]) -> "RigidTransform":
        """Build from a unit quaternion in (w, x, y, z) order."""
        w, x, y, z = (float(v) for v in quaternion)
        norm = math.sqrt(w * w + x * x + y * y + z * z)
        if norm == 0.0:
            raise InvalidGeometryError("zero quaternion")
        rotation = Rotation.from_quat([x / norm, y / norm, z / norm, w / norm]).as_matrix()
        return cls(rotation, translation)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def to_quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        quaternion = np.array([w, x, y, z])
        return -quaternion if w < 0 else quaternion

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @property
    def yaw(self) -> float:
        """Heading of the rotated x axis in the xy plane."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class BoundingBox3D:
    """Yaw-only oriented box; dims are (length, width, height) along local x, y, z."""

    center: np.ndarray
    dims: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(3)
        dims = np.array(self.dims, dtype=np.float64).reshape(3)
        yaw = float(self.yaw)
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(dims)) and math.isfinite(yaw)):
            raise InvalidGeometryError("bounding box has non-finite fields")
        if np.any(dims <= 0):
            raise InvalidGeometryError(f"bounding box dims must be positive, got {dims.tolist()}")
        object.__setattr__(self, "center", _frozen(center))
        object.__setattr__(self, "dims", _frozen(dims))
        object.__setattr__(self, "yaw", wrap_angle(yaw))

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def pose(self) -> RigidTransform:
        """Transform from the box's local frame to its parent frame."""
        return RigidTransform.from_yaw(self.yaw, self.center)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoundingBox3D):
            return NotImplemented
        return bool(
            np.array_equal(self.center, other.center)
            and np.array_equal(self.dims, other.dims)
            and self.yaw == other.yaw
        )


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered points with intensity in [0, 1] and optional object ids (0 = background)."""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    object_id: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise InvalidGeometryError("point cloud has non-finite coordinates")
        n = points.shape[0]
        if self.intensity is None:
            intensity = np.zeros(n)
        else:
            intensity = np.array(self.intensity, dtype=np.float64).reshape(-1)
        if intensity.shape[0] != n:
            raise InvalidGeometryError(f"intensity has {intensity.shape[0]} values for {n} points")
        if n and (np.any(~np.isfinite(intensity)) or intensity.min() < 0.0 or intensity.max() > 1.0):
            raise InvalidGeometryError("intensity outside [0, 1]")
        object_id = None
        if self.object_id is not None:
            object_id = np.array(self.object_id, dtype=np.int64).reshape(-1)
            if object_id.shape[0] != n:
                raise InvalidGeometryError(f"object_id has {object_id.shape[0]} labels for {n} points")
            object_id = _frozen(object_id)
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "intensity", _frozen(intensity))
        object.__setattr__(self, "object_id", object_id)

    @classmethod
    def empty(cls, labelled: bool = False) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64) if labelled else None)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def labels(self) -> np.ndarray:
        """Object ids, all background when unset."""
        if self.object_id is None:
            return np.zeros(len(self), dtype=np.int64)
        return self.object_id

    def select(self, mask: np.ndarray) -> "PointCloud":
        object_id = None if self.object_id is None else self.object_id[mask]
        return PointCloud(self.points[mask], self.intensity[mask], object_id)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.intensity, self.object_id)

    def with_labels(self, object_id: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, self.intensity, object_id)

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return PointCloud.empty()
        labelled = any(c.object_id is not None for c in clouds)
        return PointCloud(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.intensity for c in clouds]),
            np.concatenate([c.labels for c in clouds]) if labelled else None,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self.object_id is None) != (other.object_id is None):
            return False
        return bool(
            np.array_equal(self.points, other.points)
            and np.array_equal(self.intensity, other.intensity)
            and (self.object_id is None or np.array_equal(self.object_id, other.object_id))
        )
