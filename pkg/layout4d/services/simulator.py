"""
Procedural worlds and an analytic spinning-beam raycaster.

Worlds are a ground plane plus one cuboid per layout object. Every range is
an exact ray-plane or ray-box intersection, so scans serve as ground truth.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import settings
from ..models.geometry import BoundingBox3D, PointCloud, RigidTransform
from ..models.layout import LayoutTuple, SceneLayout, ValidityRules
from ..models.range_view import NO_RETURN, RangeImage, SensorSpec
from ..models.sequence import SimulatedFrame
from ..utils.errors import ConfigError, ValidityError
from ..utils.helpers import parallel_map
from .layout import graph_from_objects, bev_iou, boxes_over_horizon, box_at_step, validate_layout
from .range_view import ray_directions, unproject

logger = logging.getLogger(__name__)

GROUND_INTENSITY = 0.1
ACTOR_INTENSITY = 0.6

# Nominal (length, width, height) per category, meters.
CATEGORY_DIMS = {
    "car": (4.5, 1.9, 1.6),
    "pedestrian": (0.7, 0.7, 1.75),
    "truck": (8.0, 2.5, 3.2),
    "bus": (11.0, 2.9, 3.4),
    "cyclist": (1.8, 0.7, 1.6),
}
CATEGORIES = tuple(CATEGORY_DIMS)

EGO_KEEP_OUT = (6.0, 3.0, 2.0)

# Ego speed range (m/s); four steps of travel stay inside the default ICP gate.
EGO_SPEED_RANGE = (0.2, 0.8)
# Leading objects of every random layout are parked vehicles within PARKED_SPREAD (m).
PARKED_VEHICLES = 2
PARKED_SPREAD = 20.0
VEHICLES = ("car", "truck", "bus")
PLACEMENT_ATTEMPTS = 50


@dataclass(frozen=True, eq=False)
class World:
    """Ground plane at ``ground_z`` and cuboid actors backed by layout tuples."""

    ground_z: float
    actors: Tuple[LayoutTuple, ...]
    extent: float
    layout: SceneLayout

    def boxes_at(self, t: int) -> List[BoundingBox3D]:
        return [box_at_step(actor, t) for actor in self.actors]


def make_world(layout: SceneLayout, ground_z: float = settings.GROUND_Z,
               rules: Optional[ValidityRules] = None) -> World:
    """One cuboid per object; invalid layouts are rejected with their violations."""
    rules = rules or ValidityRules()
    report = validate_layout(layout, rules)
    if not report.ok:
        raise ValidityError("layout fails validity checks", report.violations)
    return World(ground_z=ground_z, actors=layout.objects, extent=rules.extent, layout=layout)


def _ray_box(origin: np.ndarray, directions: np.ndarray, box: BoundingBox3D) -> np.ndarray:
    """Distance along each ray to the box surface, inf on a miss or when the origin is inside."""
    rotation = box.pose.rotation
    o = rotation.T @ (origin - box.center)
    d = directions @ rotation
    half = box.dims / 2.0

    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    parallel = d == 0.0
    inside = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    near = lo.max(axis=1)
    far = hi.min(axis=1)
    return np.where((near <= far) & (near > 0.0), near, np.inf)


def raycast(world: World, ego_pose: RigidTransform, spec: Optional[SensorSpec] = None, t: int = 0,
            noise_sigma: float = 0.0, seed: int = 0) -> RangeImage:
    """Cast every cell's central ray from the ego origin against the world at step ``t``."""
    spec = spec or SensorSpec()
    directions = ray_directions(spec).reshape(-1, 3) @ ego_pose.rotation.T
    origin = ego_pose.translation

    with np.errstate(divide="ignore", invalid="ignore"):
        ground = (world.ground_z - origin[2]) / directions[:, 2]
    best = np.where((directions[:, 2] != 0.0) & (ground > 0.0), ground, np.inf)
    labels = np.zeros(best.shape[0], dtype=np.int64)

    for k, box in enumerate(world.boxes_at(t), start=1):
        hit = _ray_box(origin, directions, box)
        closer = hit < best
        best[closer] = hit[closer]
        labels[closer] = k

    if noise_sigma > 0.0:
        rng = np.random.default_rng([seed, t])
        best = best + rng.normal(0.0, noise_sigma, best.shape[0])

    valid = np.isfinite(best) & (best >= spec.range_min) & (best <= spec.range_max)
    shape = (spec.rows, spec.cols)
    return RangeImage(
        spec,
        np.where(valid, best, NO_RETURN).reshape(shape),
        np.where(valid, np.where(labels > 0, ACTOR_INTENSITY, GROUND_INTENSITY), 0.0).reshape(shape),
        np.where(valid, labels, 0).reshape(shape),
    )


def simulate_sequence(world: World, ego_traj: Sequence[RigidTransform], spec: Optional[SensorSpec] = None,
                      T: Optional[int] = None, noise_sigma: float = 0.0, seed: int = 0,
                      threads: Optional[int] = None) -> List[SimulatedFrame]:
    """Raycast steps 0..T; object ids come from the hit actor."""
    spec = spec or SensorSpec()
    T = len(ego_traj) - 1 if T is None else T
    if len(ego_traj) != T + 1:
        raise ConfigError(f"{T + 1} ego poses needed, got {len(ego_traj)}")
    if T > world.layout.horizon:
        raise ConfigError(f"{T} steps exceed the layout horizon {world.layout.horizon}")

    def frame(t: int) -> SimulatedFrame:
        image = raycast(world, ego_traj[t], spec, t, noise_sigma, seed)
        return SimulatedFrame(image=image, cloud=unproject(image), ego_pose=ego_traj[t])

    return parallel_map(frame, list(range(T + 1)), threads)


def _surface_samples(rng: np.random.Generator, dims: np.ndarray, count: int) -> np.ndarray:
    """Uniform samples on the box surface, local frame."""
    if count <= 0:
        return np.zeros((0, 3))
    areas = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]])
    face_weights = np.repeat(areas, 2) / (2.0 * areas.sum())
    faces = rng.choice(6, size=count, p=face_weights)
    samples = rng.uniform(-0.5, 0.5, size=(count, 3)) * dims
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    samples[np.arange(count), axis] = sign * dims[axis] / 2.0
    return samples


def _fits(boxes: List[BoundingBox3D], placed: List[List[BoundingBox3D]],
          keep_out: List[BoundingBox3D], extent: float) -> bool:
    for box in boxes:
        if np.max(np.abs(box.center[:2])) + math.hypot(box.dims[0], box.dims[1]) / 2.0 > extent:
            return False
    for track in placed + [keep_out]:
        if any(bev_iou(a, b) > 0.0 for a, b in zip(boxes, track)):
            return False
    return True


def random_layout(seed: int, rules: Optional[ValidityRules] = None, horizon: int = settings.LAYOUT_HORIZON,
                  dt: float = settings.LAYOUT_DT, ground_z: float = settings.GROUND_Z,
                  shape_points: int = settings.SHAPE_POINTS, max_objects: int = 12) -> SceneLayout:
    """
    Deterministic valid layout for ``seed``.

    Places 1..max_objects non-overlapping actors that keep clear of the ego
    path, move below their speed caps and stay inside the rules' extent.
    The first two are parked vehicles near the ego, which creeps forward
    along +x. Raises ConfigError when no actor fits the extent.
    """
    rules = rules or ValidityRules()
    rng = np.random.default_rng(seed)

    ego_speed = rng.uniform(*EGO_SPEED_RANGE)
    ego_traj = tuple(RigidTransform.from_translation((ego_speed * dt * t, 0.0, 0.0)) for t in range(horizon + 1))
    keep_out = [
        BoundingBox3D((pose.translation[0], 0.0, ground_z + EGO_KEEP_OUT[2] / 2.0), EGO_KEEP_OUT, 0.0)
        for pose in ego_traj
    ]
    spread = min(40.0, 0.5 * rules.extent)
    target = int(rng.integers(1, max_objects + 1))

    objects: List[LayoutTuple] = []
    tracks: List[List[BoundingBox3D]] = []
    attempts = 0
    parked = min(target, PARKED_VEHICLES)
    while len(objects) < target and attempts < PLACEMENT_ATTEMPTS * max_objects:
        attempts += 1
        leading = len(objects) < parked
        pool = VEHICLES if leading else CATEGORIES
        label = pool[int(rng.integers(len(pool)))]
        dims = np.asarray(CATEGORY_DIMS[label]) * rng.uniform(0.9, 1.1, size=3)
        reach = min(spread, PARKED_SPREAD) if leading else spread
        xy = rng.uniform(-reach, reach, size=2)
        yaw = rng.uniform(-math.pi, math.pi)
        moving = not leading and rng.random() < 0.6
        speed = rng.uniform(0.3, 0.6) * rules.speed_cap(label) if moving else 0.0
        yaw_rate = rng.uniform(-0.3, 0.3) * rules.yawrate_max if moving else 0.0
        trajectory = np.tile([speed * dt, 0.0, yaw_rate * dt], (horizon, 1))
        shape = _surface_samples(rng, dims, shape_points)

        box = BoundingBox3D((xy[0], xy[1], ground_z + dims[2] / 2.0), dims, yaw)
        candidate = LayoutTuple(label, box, trajectory, shape)
        boxes = boxes_over_horizon(candidate)
        if _fits(boxes, tracks, keep_out, rules.extent):
            objects.append(candidate)
            tracks.append(boxes)

    logger.debug("seed %d placed %d/%d objects in %d attempts", seed, len(objects), target, attempts)
    if not objects:
        raise ConfigError(f"seed {seed}: no object fits inside extent {rules.extent} m clear of the ego path")
    return SceneLayout(
        objects=tuple(objects),
        ego_trajectory=ego_traj,
        graph=graph_from_objects(objects, ego_traj[0]),
        horizon=horizon,
        dt=dt,
    )
