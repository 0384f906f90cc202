"""
Geometric priors for the next frame.

Background points follow the ego motion, object points follow their layout
trajectories, and visibility is settled by the range-view z-buffer.
"""

import logging
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..models.geometry import BoundingBox3D, PointCloud, RigidTransform
from ..models.layout import SceneLayout
from ..models.range_view import RangeImage, SensorSpec
from ..models.sequence import FrameState
from ..utils.errors import ConfigError
from .geometry import apply, compose, invert, transform_points
from .layout import box_at_step
from .range_view import project, unproject

logger = logging.getLogger(__name__)

# Range ties closer than this resolve to the earlier prior.
FUSE_TIE_TOLERANCE = 1e-6

WarpMode = Literal["step", "anchor", "fused"]


def warp_background(frame: FrameState, ego_next: RigidTransform) -> PointCloud:
    """Background points (object_id 0) re-expressed in the ego frame at ``ego_next``."""
    background = frame.cloud.select(frame.cloud.labels == 0)
    return apply(compose(invert(ego_next), frame.ego_pose), background)


def object_motion(box_t: BoundingBox3D, box_next: BoundingBox3D) -> RigidTransform:
    """Rigid motion carrying box_t's frame onto box_next's frame."""
    return compose(box_next.pose, invert(box_t.pose))


def warp_object(points: PointCloud, box_t: BoundingBox3D, box_next: BoundingBox3D) -> PointCloud:
    """Move an object's points (same frame as the boxes) rigidly with its box."""
    return apply(object_motion(box_t, box_next), points)


def warp_points(cloud: PointCloud, ego_from: RigidTransform, ego_to: RigidTransform,
                layout: SceneLayout, step_from: int, step_to: int) -> PointCloud:
    """
    Warp every point of an ego-frame cloud from ``step_from`` to ``step_to``.

    Point order, intensity and object ids are preserved and nothing is culled,
    so chained warps can be compared point for point.
    """
    labels = cloud.labels
    to_next = invert(ego_to)
    out = transform_points(compose(to_next, ego_from), cloud.points)
    for k in np.unique(labels[labels > 0]):
        if k > len(layout.objects):
            raise ConfigError(f"object id {k} has no layout object")
        obj = layout.objects[k - 1]
        motion = object_motion(box_at_step(obj, step_from), box_at_step(obj, step_to))
        chain = compose(to_next, compose(motion, ego_from))
        mask = labels == k
        out[mask] = transform_points(chain, cloud.points[mask])
    return cloud.with_points(out)


def _check_step(layout: SceneLayout, t: int) -> None:
    if t < 0 or t > layout.horizon:
        raise ConfigError(f"step {t} outside [0, {layout.horizon}]")


def step_prior(frame: FrameState, layout: SceneLayout, t_next: int) -> PointCloud:
    """Un-culled warp of ``frame`` one step ahead."""
    if frame.step + 1 != t_next:
        raise ConfigError(f"frame at step {frame.step} cannot be warped to step {t_next}")
    _check_step(layout, t_next)
    return warp_points(frame.cloud, frame.ego_pose, layout.ego_trajectory[t_next], layout, frame.step, t_next)


def synthesize_next(frame: FrameState, layout: SceneLayout, t_next: int,
                    spec: Optional[SensorSpec] = None) -> Tuple[FrameState, RangeImage]:
    """Warp one step ahead and keep only the points that survive the z-buffer."""
    spec = spec or SensorSpec()
    image = project(step_prior(frame, layout, t_next), spec)
    state = FrameState(unproject(image), layout.ego_trajectory[t_next], t_next)
    return state, image


def anchor_warp(frame0: FrameState, layout: SceneLayout, t: int) -> PointCloud:
    """Direct warp of frame 0 to step ``t``; no culling."""
    if frame0.step != 0:
        raise ConfigError(f"anchor frame must be step 0, got {frame0.step}")
    _check_step(layout, t)
    if t == 0:
        return frame0.cloud
    return warp_points(frame0.cloud, frame0.ego_pose, layout.ego_trajectory[t], layout, 0, t)


def fuse(priors: Sequence[PointCloud], spec: Optional[SensorSpec] = None) -> RangeImage:
    """Z-buffer the union of priors; on near-ties the earlier prior in the list wins."""
    spec = spec or SensorSpec()
    return project(PointCloud.concatenate(list(priors)), spec, tie_tolerance=FUSE_TIE_TOLERANCE)


def generate_sequence(frame0: FrameState, layout: SceneLayout, mode: WarpMode = "fused",
                      spec: Optional[SensorSpec] = None, steps: Optional[int] = None) -> List[FrameState]:
    """
    Roll frame 0 forward.

    ``step`` chains synthesize_next, ``anchor`` warps frame 0 directly to each
    step, and ``fused`` z-buffers the step prior of the previous fused frame
    together with the anchor prior.
    """
    spec = spec or SensorSpec()
    steps = layout.horizon if steps is None else steps
    if steps < 0 or steps > layout.horizon:
        raise ConfigError(f"cannot roll {steps} steps over a horizon of {layout.horizon}")
    if mode not in ("step", "anchor", "fused"):
        raise ConfigError(f"unknown warp mode {mode!r}")

    frames = [frame0]
    for t in range(1, steps + 1):
        previous = frames[-1]
        if mode == "step":
            state, _ = synthesize_next(previous, layout, t, spec)
        elif mode == "anchor":
            image = project(anchor_warp(frame0, layout, t), spec)
            state = FrameState(unproject(image), layout.ego_trajectory[t], t)
        else:
            image = fuse([step_prior(previous, layout, t), anchor_warp(frame0, layout, t)], spec)
            state = FrameState(unproject(image), layout.ego_trajectory[t], t)
        logger.debug("%s prior at step %d holds %d points", mode, t, len(state.cloud))
        frames.append(state)
    return frames
