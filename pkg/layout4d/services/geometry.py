"""
SE(3) algebra, oriented boxes and point containment.
"""

import math

import numpy as np

from ..models.geometry import BoundingBox3D, PointCloud, RigidTransform, wrap_angle
from ..utils.errors import InvalidGeometryError

# Boundary slack for containment, in meters.
CONTAINMENT_EPS = 1e-9

# Corner order: bottom face (z = -h/2) then top face, each counter-clockwise
# seen from above starting at the front-left corner (+x, +y).
CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=np.float64,
)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rotation_t = t.rotation.T
    return RigidTransform(rotation_t, -(rotation_t @ t.translation))


def transform_points(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Apply ``t`` to an N x 3 array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ t.rotation.T + t.translation


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map positions by R p + t; intensity and object ids are carried over."""
    return cloud.with_points(transform_points(t, cloud.points))


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    cos_angle = (np.trace(rotation) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, cos_angle))))


def yaw_of(t: RigidTransform) -> float:
    """Heading of a transform in (-pi, pi]; pitch and roll are ignored."""
    return wrap_angle(t.yaw)


def box_corners(box: BoundingBox3D) -> np.ndarray:
    """The 8 corners in CORNER_SIGNS order, parent frame."""
    return transform_points(box.pose, CORNER_SIGNS * (box.dims / 2.0))


def box_local(box: BoundingBox3D, points: np.ndarray) -> np.ndarray:
    """Express parent-frame points in the box's local frame."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = points - box.center
    return np.column_stack((c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]))


def points_in_box(box: BoundingBox3D, points: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside the box, boundary inclusive."""
    local = box_local(box, points)
    return np.all(np.abs(local) <= box.dims / 2.0 + CONTAINMENT_EPS, axis=1)


def box_contains(box: BoundingBox3D, p) -> bool:
    return bool(points_in_box(box, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def box_footprint(box: BoundingBox3D) -> np.ndarray:
    """Counter-clockwise 4 x 2 polygon of the box seen from above."""
    return box_corners(box)[:4, :2]


def transform_box(t: RigidTransform, box: BoundingBox3D) -> BoundingBox3D:
    """Re-express a box under a yaw-only transform."""
    if abs(t.rotation[2, 2] - 1.0) > 1e-9:
        raise InvalidGeometryError("boxes only admit rotations about the z axis")
    center = t.rotation @ box.center + t.translation
    return BoundingBox3D(center, box.dims, wrap_angle(box.yaw + t.yaw))
