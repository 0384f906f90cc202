"""
Shared fixtures: small sensors, hand-built layouts and registration clutter.
"""

import math
import os

import numpy as np
import pytest

from layout4d.models.geometry import BoundingBox3D, PointCloud, RigidTransform
from layout4d.models.layout import LayoutTuple, SceneLayout
from layout4d.models.range_view import SensorSpec
from layout4d.services.layout import graph_from_objects

FULL_ACCEPTANCE = bool(os.getenv("LAYOUT4D_FULL_ACCEPTANCE"))

full_acceptance = pytest.mark.skipif(
    not FULL_ACCEPTANCE, reason="set LAYOUT4D_FULL_ACCEPTANCE=1 for acceptance-scale runs"
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return SensorSpec(rows=16, cols=256)


def box_surface(rng, dims, count):
    """Uniform samples on a box surface, box frame."""
    dims = np.asarray(dims, dtype=np.float64)
    areas = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]])
    faces = rng.choice(6, size=count, p=np.repeat(areas, 2) / (2.0 * areas.sum()))
    samples = rng.uniform(-0.5, 0.5, size=(count, 3)) * dims
    axis = faces // 2
    samples[np.arange(count), axis] = np.where(faces % 2 == 0, 1.0, -1.0) * dims[axis] / 2.0
    return samples


def make_object(label="car", center=(10.0, 0.0, -1.0), dims=(4.5, 1.9, 1.6), yaw=0.0,
                step=(0.0, 0.0, 0.0), horizon=8, shape_points=64, seed=0):
    """Object moving by the same (dx, dy, dyaw) every step."""
    shape = box_surface(np.random.default_rng(seed), dims, shape_points)
    trajectory = np.tile(np.asarray(step, dtype=np.float64), (horizon, 1))
    return LayoutTuple(label, BoundingBox3D(center, dims, yaw), trajectory, shape)


def make_layout(objects=(), ego_speed=0.0, horizon=8, dt=0.5, extra=None):
    """Ego moving along +x at ``ego_speed`` m/s; graph derived from geometry."""
    ego = tuple(RigidTransform.from_translation((ego_speed * dt * t, 0.0, 0.0)) for t in range(horizon + 1))
    return SceneLayout(
        objects=tuple(objects),
        ego_trajectory=ego,
        graph=graph_from_objects(objects, ego[0]),
        horizon=horizon,
        dt=dt,
        extra=extra or {},
    )


def clutter_points(rng, per_cluster=30):
    """
    Compact point clusters on two rings of eight (6 m and 12 m) plus one at the origin.

    Clusters are far apart compared with their size, so nearest neighbours
    stay inside the right cluster for yaw errors up to 10 degrees plus
    half a meter of translation.
    """
    centers = [np.array([0.0, 0.0, 1.0])]
    for radius, phase in ((6.0, 0.1), (12.0, 0.1 + math.pi / 8)):
        for k in range(8):
            angle = math.pi * k / 4 + phase
            centers.append(np.array([radius * math.cos(angle), radius * math.sin(angle), rng.uniform(-1.0, 2.0)]))
    clusters = [c + rng.uniform(-0.25, 0.25, size=(per_cluster, 3)) for c in centers]
    return np.vstack(clusters)


@pytest.fixture
def clutter(rng):
    return PointCloud(clutter_points(rng))


@pytest.fixture
def two_car_layout():
    """Two parked cars either side of a static ego."""
    return make_layout([
        make_object("car", center=(12.0, 4.0, -1.0), seed=1),
        make_object("car", center=(-15.0, -5.0, -1.0), seed=2),
    ])


def parked_layout(ego_speed=0.0):
    """Five parked vehicles 6-15 m around the ego at assorted headings."""
    return make_layout([
        make_object("car", center=(8.0, 5.0, -1.0), yaw=0.4, seed=1),
        make_object("truck", center=(-10.0, -6.0, -0.2), dims=(8.0, 2.5, 3.2), yaw=-0.7, seed=2),
        make_object("bus", center=(3.0, -12.0, -0.1), dims=(11.0, 2.9, 3.4), yaw=1.2, seed=3),
        make_object("car", center=(-7.0, 9.0, -1.0), yaw=2.3, seed=4),
        make_object("car", center=(13.0, -3.0, -1.0), yaw=-1.9, seed=5),
    ], ego_speed=ego_speed)
