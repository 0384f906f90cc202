"""
Layout service: trajectory stepping, scene-graph derivation, validity checks,
editing and point-to-object assignment.
"""

import logging
import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from shapely.geometry import Polygon

from ..models.documents import EDIT_ARGS, ObjectDocument
from ..models.geometry import BoundingBox3D, PointCloud, RigidTransform
from ..models.layout import (
    EGO_NODE,
    GraphEdge,
    GraphNode,
    GraphViolation,
    LayoutTuple,
    SceneGraph,
    SceneLayout,
    ValidityReport,
    ValidityRules,
    Violation,
)
from ..utils.errors import ConfigError, InvalidGeometryError, SchemaError, ValidityError
from .geometry import box_footprint, box_corners, invert, points_in_box, transform_points

logger = logging.getLogger(__name__)

NEAR_THRESHOLD = 10.0
MOVING_THRESHOLD = 0.5


def box_at_step(obj: LayoutTuple, t: int) -> BoundingBox3D:
    """
    Box after applying trajectory rows 0..t-1.

    Each (dx, dy) is expressed in the heading reached so far, then the heading
    advances by dyaw. Dims never change.
    """
    if t < 0 or t > obj.horizon:
        raise ConfigError(f"step {t} outside [0, {obj.horizon}]")
    if t == 0:
        return obj.box
    cx, cy, cz = (float(v) for v in obj.box.center)
    yaw = obj.box.yaw
    for dx, dy, dyaw in obj.trajectory[:t]:
        c, s = math.cos(yaw), math.sin(yaw)
        cx += c * dx - s * dy
        cy += s * dx + c * dy
        yaw += dyaw
    return BoundingBox3D((cx, cy, cz), obj.box.dims, yaw)


def boxes_over_horizon(obj: LayoutTuple) -> List[BoundingBox3D]:
    """Boxes at steps 0..horizon."""
    boxes = [obj.box]
    cx, cy, cz = (float(v) for v in obj.box.center)
    yaw = obj.box.yaw
    for dx, dy, dyaw in obj.trajectory:
        c, s = math.cos(yaw), math.sin(yaw)
        cx += c * dx - s * dy
        cy += s * dx + c * dy
        yaw += dyaw
        boxes.append(BoundingBox3D((cx, cy, cz), obj.box.dims, yaw))
    return boxes


def net_displacement(obj: LayoutTuple) -> float:
    """Planar distance between the box centres at step 0 and at the horizon."""
    end = box_at_step(obj, obj.horizon).center
    return float(np.hypot(end[0] - obj.box.center[0], end[1] - obj.box.center[1]))


def graph_from_objects(objects: Sequence[LayoutTuple], ego0: RigidTransform) -> SceneGraph:
    nodes = [GraphNode(id=EGO_NODE, label="ego", motion="static")]
    edges: List[GraphEdge] = []
    to_ego = invert(ego0)
    for k, obj in enumerate(objects, start=1):
        moving = net_displacement(obj) > MOVING_THRESHOLD
        nodes.append(GraphNode(id=k, label=obj.label, motion="moving" if moving else "static"))
        x, y, _ = transform_points(to_ego, obj.box.center)[0]
        if x > 0:
            edges.append(GraphEdge(source=k, target=EGO_NODE, relation="front"))
        elif x < 0:
            edges.append(GraphEdge(source=k, target=EGO_NODE, relation="behind"))
        if y > 0:
            edges.append(GraphEdge(source=k, target=EGO_NODE, relation="left"))
        elif y < 0:
            edges.append(GraphEdge(source=k, target=EGO_NODE, relation="right"))
        relation = "near" if math.hypot(x, y) < NEAR_THRESHOLD else "far"
        edges.append(GraphEdge(source=k, target=EGO_NODE, relation=relation))
    return SceneGraph(nodes=nodes, edges=edges)


def derive_graph(layout: SceneLayout) -> SceneGraph:
    """Relations from frame-0 geometry in the ego frame; only object-to-ego edges are derived."""
    return graph_from_objects(layout.objects, layout.ego_trajectory[0])


def check_graph_consistency(graph: SceneGraph, layout: SceneLayout) -> List[GraphViolation]:
    """Edges of ``graph`` that the layout geometry does not support."""
    derived = derive_graph(layout)
    supported: Set[Tuple[int, int, str]] = {(e.source, e.target, e.relation) for e in derived.edges}
    observed: Dict[Tuple[int, int], List[str]] = {}
    for edge in derived.edges:
        observed.setdefault((edge.source, edge.target), []).append(edge.relation)

    violations = []
    for edge in graph.edges:
        if (edge.source, edge.target, edge.relation) in supported:
            continue
        seen = observed.get((edge.source, edge.target), [])
        violations.append(
            GraphViolation(
                edge=edge,
                observed=seen,
                message=f"edge {edge.source}->{edge.target} claims {edge.relation!r}, geometry gives {seen or 'nothing'}",
            )
        )
    return violations


def bev_iou(a: BoundingBox3D, b: BoundingBox3D) -> float:
    """Intersection over union of the two footprints seen from above."""
    reach = (math.hypot(a.dims[0], a.dims[1]) + math.hypot(b.dims[0], b.dims[1])) / 2.0
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > reach:
        return 0.0
    pa, pb = Polygon(box_footprint(a)), Polygon(box_footprint(b))
    inter = pa.intersection(pb).area
    if inter <= 0.0:
        return 0.0
    return float(inter / (pa.area + pb.area - inter))


def _object_violations(index: int, obj: LayoutTuple, boxes: List[BoundingBox3D], dt: float,
                       rules: ValidityRules) -> List[Violation]:
    violations = []
    reach = max(float(np.max(np.abs(box_corners(box)[:, :2]))) for box in boxes)
    if reach > rules.extent:
        violations.append(Violation(
            kind="extent", object_index=index, value=reach, limit=rules.extent,
            message=f"object {index} ({obj.label}) reaches {reach:.2f} m, extent is {rules.extent:.2f} m",
        ))

    if obj.horizon:
        speeds = np.hypot(obj.trajectory[:, 0], obj.trajectory[:, 1]) / dt
        worst = int(np.argmax(speeds))
        cap = rules.speed_cap(obj.label)
        if speeds[worst] > cap:
            violations.append(Violation(
                kind="speed", object_index=index, step=worst + 1, value=float(speeds[worst]), limit=cap,
                message=f"object {index} ({obj.label}) moves at {speeds[worst]:.2f} m/s, cap is {cap:.2f} m/s",
            ))
        yaw_rates = np.abs(obj.trajectory[:, 2]) / dt
        worst = int(np.argmax(yaw_rates))
        if yaw_rates[worst] > rules.yawrate_max:
            violations.append(Violation(
                kind="yaw_rate", object_index=index, step=worst + 1, value=float(yaw_rates[worst]),
                limit=rules.yawrate_max,
                message=f"object {index} ({obj.label}) turns at {yaw_rates[worst]:.2f} rad/s",
            ))

    if obj.shape.shape[0]:
        bound = obj.box.dims / 2.0 * (1.0 + rules.shape_tolerance)
        outside = int(np.count_nonzero(np.any(np.abs(obj.shape) > bound, axis=1)))
        if outside:
            violations.append(Violation(
                kind="shape", object_index=index, value=float(outside), limit=0.0,
                message=f"object {index} ({obj.label}) has {outside} shape points outside its box",
            ))
    return violations


def validate_layout(layout: SceneLayout, rules: Optional[ValidityRules] = None) -> ValidityReport:
    """Run every plausibility gate and collect violations; never raises."""
    rules = rules or ValidityRules()
    tracks = [boxes_over_horizon(obj) for obj in layout.objects]

    violations: List[Violation] = []
    for index, (obj, boxes) in enumerate(zip(layout.objects, tracks)):
        violations.extend(_object_violations(index, obj, boxes, layout.dt, rules))

    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            ious = [bev_iou(a, b) for a, b in zip(tracks[i], tracks[j])]
            step = int(np.argmax(ious))
            if ious[step] > rules.overlap_max:
                for index, other in ((i, j), (j, i)):
                    violations.append(Violation(
                        kind="overlap", object_index=index, step=step, value=ious[step], limit=rules.overlap_max,
                        message=f"object {index} overlaps object {other} (IoU {ious[step]:.3f}) at step {step}",
                    ))

    if rules.check_graph:
        for gv in check_graph_consistency(layout.graph, layout):
            source = gv.edge.source
            violations.append(Violation(
                kind="graph", object_index=source - 1 if source > 0 else None, message=gv.message,
            ))
    return ValidityReport(violations=violations)


def _rebuild(layout: SceneLayout, objects: Sequence[LayoutTuple], rules: Optional[ValidityRules]) -> SceneLayout:
    candidate = SceneLayout(
        objects=tuple(objects),
        ego_trajectory=layout.ego_trajectory,
        graph=graph_from_objects(objects, layout.ego_trajectory[0]),
        horizon=layout.horizon,
        dt=layout.dt,
        extra=layout.extra,
    )
    report = validate_layout(candidate, rules)
    if not report.ok:
        logger.info("edit rejected with %d violations", len(report.violations))
        raise ValidityError("edited layout fails validity checks", report.violations)
    return candidate


def _check_index(layout: SceneLayout, index: int) -> None:
    if not 0 <= index < len(layout.objects):
        raise ConfigError(f"object index {index} outside [0, {len(layout.objects)})")


def edit_insert(layout: SceneLayout, obj: LayoutTuple, rules: Optional[ValidityRules] = None) -> SceneLayout:
    """Append ``obj``; it becomes index len(layout.objects)."""
    return _rebuild(layout, layout.objects + (obj,), rules)


def edit_delete(layout: SceneLayout, index: int, rules: Optional[ValidityRules] = None) -> SceneLayout:
    _check_index(layout, index)
    return _rebuild(layout, layout.objects[:index] + layout.objects[index + 1:], rules)


def edit_translate(layout: SceneLayout, index: int, dx: float, dy: float, dyaw: float,
                   rules: Optional[ValidityRules] = None) -> SceneLayout:
    """Drag an object's frame-0 box; its trajectory moves with it."""
    _check_index(layout, index)
    obj = layout.objects[index]
    if dx == 0 and dy == 0 and dyaw == 0:
        moved = obj
    else:
        box = BoundingBox3D(obj.box.center + np.array([dx, dy, 0.0]), obj.box.dims, obj.box.yaw + dyaw)
        moved = LayoutTuple(obj.label, box, obj.trajectory, obj.shape, obj.extra)
    objects = list(layout.objects)
    objects[index] = moved
    return _rebuild(layout, objects, rules)


def edit_retraject(layout: SceneLayout, index: int, trajectory, rules: Optional[ValidityRules] = None) -> SceneLayout:
    _check_index(layout, index)
    trajectory = np.asarray(trajectory, dtype=np.float64).reshape(-1, 3)
    if trajectory.shape[0] != layout.horizon:
        raise ConfigError(f"trajectory needs {layout.horizon} steps, got {trajectory.shape[0]}")
    obj = layout.objects[index]
    objects = list(layout.objects)
    objects[index] = LayoutTuple(obj.label, obj.box, trajectory, obj.shape, obj.extra)
    return _rebuild(layout, objects, rules)


def foreground_mask(cloud: PointCloud, layout: SceneLayout, step: int) -> PointCloud:
    """
    Label points of an ego-frame cloud captured at ``step``.

    object_id is k (1-based) for points inside object k's box at that step and
    0 elsewhere; nested boxes resolve to the smallest volume, then the lowest k.
    """
    if step < 0 or step > layout.horizon:
        raise ConfigError(f"step {step} outside [0, {layout.horizon}]")
    labels = np.zeros(len(cloud), dtype=np.int64)
    if len(cloud) == 0 or not layout.objects:
        return cloud.with_labels(labels)

    world = transform_points(layout.ego_trajectory[step], cloud.points)
    boxes = [(k, box_at_step(obj, step)) for k, obj in enumerate(layout.objects, start=1)]
    for k, box in sorted(boxes, key=lambda item: (-item[1].volume, -item[0])):
        labels[points_in_box(box, world)] = k
    return cloud.with_labels(labels)


def object_from_document(entry: ObjectDocument) -> LayoutTuple:
    box = BoundingBox3D(entry.box.center, entry.box.dims, entry.box.yaw)
    return LayoutTuple(entry.label, box, entry.trajectory, entry.shape, dict(entry.model_extra or {}))


def apply_edit(layout: SceneLayout, op: str, args: Mapping[str, Any],
               rules: Optional[ValidityRules] = None) -> SceneLayout:
    """Dispatch a named edit with JSON arguments; malformed arguments raise SchemaError."""
    if op not in EDIT_ARGS:
        raise ConfigError(f"unknown edit op {op!r}; expected one of {sorted(EDIT_ARGS)}")
    try:
        parsed = EDIT_ARGS[op].model_validate(args)
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise SchemaError(first["msg"], "/args/" + "/".join(str(p) for p in first["loc"])) from e

    if op == "insert":
        try:
            obj = object_from_document(parsed.object)
        except InvalidGeometryError as e:
            raise SchemaError(str(e), "/args/object") from e
        return edit_insert(layout, obj, rules)
    if op == "delete":
        return edit_delete(layout, parsed.index, rules)
    if op == "translate":
        return edit_translate(layout, parsed.index, parsed.dx, parsed.dy, parsed.dyaw, rules)
    return edit_retraject(layout, parsed.index, parsed.trajectory, rules)
