"""
Readers and writers: binary point clouds, range image dumps, layout / pose /
manifest JSON and metric reports.

Binary data is little-endian float32. JSON floats are written with repr, the
shortest string that reads back to the same double.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from ..config.settings import settings
from ..models.documents import (
    DEFAULT_FIELDS,
    KNOWN_FIELDS,
    DatasetManifest,
    FrameRecord,
    LayoutDocument,
    LayoutPoseDocument,
    PoseRecord,
)
from ..models.geometry import PointCloud, RigidTransform
from ..models.layout import SceneLayout
from ..models.metrics import MetricReport
from ..models.range_view import NO_RETURN, RangeImage, SensorSpec
from ..models.sequence import Dataset, DatasetSample
from ..utils.errors import ConfigError, DataError, InvalidGeometryError, SchemaError
from ..utils.helpers import parallel_map
from .layout import object_from_document
from .range_view import project

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
M = TypeVar("M", bound=BaseModel)

FLOAT32 = np.dtype("<f4")
UINT32 = np.dtype("<u4")
QUATERNION_NORM_BAND = (0.99, 1.01)

# Reported in CSV summaries next to raw values.
REPORT_SCALES = {"mmd": 1e4, "jsd": 1e2}


def _pointer(loc: Sequence[Any]) -> str:
    return "/" + "/".join(str(part) for part in loc) if loc else ""


def _read_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def _write_json(payload: Any, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=False)
        handle.write("\n")


def parse_document(model: Type[M], payload: Any, source: str = "") -> M:
    """Validate a decoded JSON payload; the first failure becomes a SchemaError with its JSON pointer."""
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        pointer = _pointer(first["loc"])
        prefix = f"{source}: " if source else ""
        raise SchemaError(f"{prefix}{first['msg']} ({e.error_count()} error(s))", pointer) from e


def load_document(model: Type[M], path: PathLike) -> M:
    return parse_document(model, _read_json(path), str(path))


# Point clouds

def _check_fields(fields: Sequence[str]) -> Tuple[str, ...]:
    fields = tuple(fields)
    unknown = set(fields) - KNOWN_FIELDS
    if unknown or not {"x", "y", "z"} <= set(fields):
        raise ConfigError(f"invalid cloud field layout {list(fields)}")
    return fields


def read_cloud_bin(path: PathLike, fields: Sequence[str] = DEFAULT_FIELDS) -> PointCloud:
    """
    Read packed float32 records.

    Intensity is divided by 255 when any value exceeds 1, so a file holding
    raw 0-255 intensities does not write back byte for byte; files written
    here (intensity in [0, 1]) do. An ``object_id`` field becomes the
    cloud's labels; ring and pad fields are ignored.
    """
    fields = _check_fields(fields)
    raw = Path(path).read_bytes()
    record = len(fields) * FLOAT32.itemsize
    if len(raw) % record:
        whole = len(raw) // record
        raise DataError(
            f"{path}: {len(raw)} bytes is not a multiple of the {record}-byte record; "
            f"{len(raw) - whole * record} trailing bytes at offset {whole * record}",
            index=whole,
        )
    values = np.frombuffer(raw, dtype=FLOAT32).reshape(-1, len(fields)).astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise DataError(f"{path}: non-finite value in record {bad[0]} (offset {bad[0] * record})", index=int(bad[0]))

    column = {name: values[:, k] for k, name in enumerate(fields)}
    points = np.column_stack([column["x"], column["y"], column["z"]])
    intensity = column.get("intensity")
    if intensity is not None and intensity.size:
        if intensity.min() < 0:
            raise DataError(f"{path}: negative intensity", index=int(np.argmin(intensity)))
        if intensity.max() > 1.0:
            intensity = intensity / 255.0
        if intensity.max() > 1.0:
            raise DataError(f"{path}: intensity above 255", index=int(np.argmax(intensity)))
    object_id = column["object_id"].astype(np.int64) if "object_id" in column else None
    try:
        return PointCloud(points, intensity, object_id)
    except InvalidGeometryError as e:
        raise DataError(f"{path}: {e}") from e


def write_cloud_bin(cloud: PointCloud, path: PathLike, fields: Sequence[str] = DEFAULT_FIELDS) -> None:
    """Inverse of read_cloud_bin; ring and pad are written as 0."""
    fields = _check_fields(fields)
    sources = {
        "x": cloud.points[:, 0],
        "y": cloud.points[:, 1],
        "z": cloud.points[:, 2],
        "intensity": cloud.intensity,
        "object_id": cloud.labels,
    }
    records = np.zeros((len(cloud), len(fields)), dtype=FLOAT32)
    for k, name in enumerate(fields):
        if name in sources:
            records[:, k] = sources[name]
    Path(path).write_bytes(records.tobytes())


# Range images

def write_range_image(img: RangeImage, path: PathLike) -> None:
    """uint32 rows, cols, then float32 range (0 = no return) and intensity, row-major."""
    header = np.array([img.spec.rows, img.spec.cols], dtype=UINT32)
    rng = np.where(img.finite_mask, img.range, 0.0).astype(FLOAT32)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(rng.tobytes())
        handle.write(img.intensity.astype(FLOAT32).tobytes())


def read_range_image(path: PathLike, spec: Optional[SensorSpec] = None) -> RangeImage:
    raw = Path(path).read_bytes()
    if len(raw) < 2 * UINT32.itemsize:
        raise DataError(f"{path}: {len(raw)} bytes is too short for the 8-byte header")
    rows, cols = (int(v) for v in np.frombuffer(raw[:8], dtype=UINT32))
    expected = 8 + 2 * rows * cols * FLOAT32.itemsize
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}")
    spec = spec or SensorSpec(rows=rows, cols=cols)
    if (spec.rows, spec.cols) != (rows, cols):
        raise ConfigError(f"{path}: image is {rows}x{cols}, sensor is {spec.rows}x{spec.cols}")
    body = np.frombuffer(raw[8:], dtype=FLOAT32).astype(np.float64).reshape(2, rows, cols)
    rng = np.where(body[0] > 0, body[0], NO_RETURN)
    try:
        return RangeImage(spec, rng, body[1])
    except InvalidGeometryError as e:
        raise DataError(f"{path}: {e}") from e


# Layouts

def layout_pose_entry(t: float, pose: RigidTransform) -> Dict[str, Any]:
    """``{t, translation, quaternion}``, plus the matrix when the quaternion does not rebuild it exactly."""
    entry = pose_record(t, pose)
    rebuilt = RigidTransform.from_quaternion(entry["quaternion"], pose.translation)
    if not np.array_equal(rebuilt.rotation, pose.rotation):
        entry["rotation"] = pose.rotation.tolist()
    return entry


def layout_pose_from_document(pose: LayoutPoseDocument, index: int, source: str = "") -> RigidTransform:
    pointer = f"/ego_trajectory/{index}"
    prefix = f"{source}: " if source else ""
    if pose.rotation is not None:
        try:
            return RigidTransform(pose.rotation, pose.translation)
        except InvalidGeometryError as e:
            raise SchemaError(f"{prefix}ego pose {index}: {e}", f"{pointer}/rotation") from e
    norm = float(np.linalg.norm(pose.quaternion))
    low, high = QUATERNION_NORM_BAND
    if not low <= norm <= high:
        raise SchemaError(
            f"{prefix}ego pose {index}: quaternion norm {norm:.4f} outside [{low}, {high}]", f"{pointer}/quaternion"
        )
    return RigidTransform.from_quaternion(pose.quaternion, pose.translation)


def layout_to_document(layout: SceneLayout) -> Dict[str, Any]:
    objects = []
    for obj in layout.objects:
        entry = {
            "label": obj.label,
            "box": {"center": obj.box.center.tolist(), "dims": obj.box.dims.tolist(), "yaw": obj.box.yaw},
            "trajectory": obj.trajectory.tolist(),
            "shape": obj.shape.tolist(),
        }
        entry.update(obj.extra)
        objects.append(entry)
    document = {
        "schema_version": settings.SCHEMA_VERSION,
        "horizon": layout.horizon,
        "dt": layout.dt,
        "objects": objects,
        "ego_trajectory": [layout_pose_entry(k * layout.dt, pose) for k, pose in enumerate(layout.ego_trajectory)],
        "graph": layout.graph.model_dump(mode="json"),
    }
    document.update({k: v for k, v in layout.extra.items() if k not in document})
    return document


def layout_from_document(document: LayoutDocument, source: str = "") -> SceneLayout:
    objects = []
    for k, entry in enumerate(document.objects):
        try:
            objects.append(object_from_document(entry))
        except InvalidGeometryError as e:
            raise SchemaError(f"{source}: {e}" if source else str(e), f"/objects/{k}") from e
    ego = tuple(layout_pose_from_document(pose, k, source) for k, pose in enumerate(document.ego_trajectory))
    try:
        return SceneLayout(
            objects=tuple(objects),
            ego_trajectory=ego,
            graph=document.graph,
            horizon=document.horizon,
            dt=document.dt,
            extra=dict(document.model_extra or {}),
        )
    except InvalidGeometryError as e:
        raise SchemaError(f"{source}: {e}" if source else str(e), "") from e


def read_layout(path: PathLike) -> SceneLayout:
    return layout_from_document(load_document(LayoutDocument, path), str(path))


def write_layout(layout: SceneLayout, path: PathLike) -> None:
    _write_json(layout_to_document(layout), path)


# Poses

def pose_record(t: float, pose: RigidTransform) -> Dict[str, Any]:
    return {"t": t, "translation": pose.translation.tolist(), "quaternion": pose.to_quaternion().tolist()}


def pose_from_record(record: PoseRecord, index: int = 0) -> RigidTransform:
    norm = float(np.linalg.norm(record.quaternion))
    low, high = QUATERNION_NORM_BAND
    if not low <= norm <= high:
        raise DataError(f"pose {index}: quaternion norm {norm:.4f} outside [{low}, {high}]", index=index)
    return RigidTransform.from_quaternion(record.quaternion, record.translation)


def read_pose_records(path: PathLike) -> List[Tuple[float, RigidTransform]]:
    payload = _read_json(path)
    if not isinstance(payload, list):
        raise SchemaError(f"{path}: expected a JSON array of pose records")
    out: List[Tuple[float, RigidTransform]] = []
    for k, item in enumerate(payload):
        try:
            record = PoseRecord.model_validate(item)
        except ValidationError as e:
            raise SchemaError(f"{path}: {e.errors()[0]['msg']}", _pointer((k,) + tuple(e.errors()[0]["loc"]))) from e
        if out and not record.t > out[-1][0]:
            raise DataError(f"{path}: pose {k} time {record.t} does not increase", index=k)
        out.append((record.t, pose_from_record(record, k)))
    return out


def read_poses(path: PathLike) -> List[RigidTransform]:
    return [pose for _, pose in read_pose_records(path)]


def write_poses(poses: Sequence[RigidTransform], path: PathLike, times: Optional[Sequence[float]] = None) -> None:
    times = list(range(len(poses))) if times is None else list(times)
    if len(times) != len(poses):
        raise ConfigError(f"{len(times)} times for {len(poses)} poses")
    _write_json([pose_record(t, pose) for t, pose in zip(times, poses)], path)


# Manifests and datasets

def read_manifest(path: PathLike) -> DatasetManifest:
    manifest = load_document(DatasetManifest, path)
    base = Path(path).parent
    for k, frame in enumerate(manifest.frames):
        if not (base / frame.cloud_path).is_file():
            raise DataError(f"{path}: frame {k} cloud {frame.cloud_path} not found", index=k)
    if manifest.layout_path and not (base / manifest.layout_path).is_file():
        raise ConfigError(f"{path}: layout {manifest.layout_path} not found")
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    _write_json(manifest.model_dump(mode="json", exclude_none=True), path)


def frame_record(cloud_path: str, pose: RigidTransform, timestamp: float) -> FrameRecord:
    return FrameRecord(cloud_path=cloud_path, pose=PoseRecord.model_validate(pose_record(timestamp, pose)), timestamp=timestamp)


def load_dataset(path: PathLike, threads: Optional[int] = None) -> Dataset:
    """Read a manifest and all its clouds; range images are re-projected with the manifest's sensor."""
    manifest = read_manifest(path)
    base = Path(path).parent

    def sample(item: Tuple[int, FrameRecord]) -> DatasetSample:
        k, frame = item
        try:
            cloud = read_cloud_bin(base / frame.cloud_path, manifest.fields)
        except DataError as e:
            raise DataError(f"frame {k}: {e}", index=k) from e
        return DatasetSample(
            cloud=cloud,
            image=project(cloud, manifest.spec),
            ego_pose=pose_from_record(frame.pose, k),
            timestamp=frame.timestamp,
        )

    samples = parallel_map(sample, list(enumerate(manifest.frames)), threads)
    layout = read_layout(base / manifest.layout_path) if manifest.layout_path else None
    return Dataset(samples=tuple(samples), spec=manifest.spec, layout=layout, source=str(path))


# Reports

def write_report_json(report: MetricReport, path: PathLike) -> None:
    _write_json(report.model_dump(mode="json", exclude_none=True), path)


def report_rows(report: MetricReport) -> List[Dict[str, Any]]:
    """Flat (level, metric, value, scaled) rows; MMD scaled by 1e4 and JSD by 1e2."""
    rows: List[Dict[str, Any]] = []

    def add(level: str, metric: str, value: float) -> None:
        scale = next((s for family, s in REPORT_SCALES.items() if metric.startswith(family)), 1.0)
        rows.append({"level": level, "metric": metric, "value": value, "scaled": value * scale, "scale": scale})

    for level, section in (("scene", report.scene), ("object", report.object)):
        if section is not None:
            for metric, value in section.model_dump().items():
                add(level, metric, value)
    if report.temporal is not None:
        for k, entry in sorted(report.temporal.ttce.items()):
            add("temporal", f"ttce_translation@{k}", entry.translation)
            add("temporal", f"ttce_rotation_deg@{k}", entry.rotation_deg)
        for k, value in sorted(report.temporal.ctc.items()):
            add("temporal", f"ctc@{k}", value)
    return rows


def write_report_csv(report: MetricReport, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=["level", "metric", "value", "scaled", "scale"])
        writer.writeheader()
        writer.writerows(report_rows(report))
