"""
Evaluation service: scene-, object- and sequence-level metric suites over
datasets, assembled into a MetricReport.
"""

import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from ..config.settings import settings
from ..models.geometry import PointCloud, RigidTransform
from ..models.metrics import EvalConfig, MetricReport, ObjectMetrics, SceneMetrics, TemporalMetrics, TtceEntry
from ..models.range_view import BEVHistogram
from ..models.sequence import Dataset, DatasetSample
from ..utils.errors import ConfigError, DataError, EmptyInputError, TooFewFramesError
from ..utils.helpers import parallel_map
from .geometry import invert, transform_box
from .layout import box_at_step
from .metrics import (
    canonical_occupancy,
    crop_object,
    ctc,
    fit_gaussian,
    frechet,
    get_feature_provider,
    jsd,
    mmd_cd,
    mmd_gaussian_details,
    radial_histogram,
    range_histogram,
    ttce,
)
from .range_view import bev_histogram

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

LEVELS = ("scene", "object", "temporal")


def _indexed(fn: Callable[[T], R], label: str) -> Callable[[Tuple[int, T]], R]:
    """Re-raise data errors with the item index attached."""

    def wrapped(item: Tuple[int, T]) -> R:
        index, value = item
        try:
            return fn(value)
        except DataError as e:
            if e.index is not None:
                raise
            raise type(e)(f"{label} item {index}: {e}", index=index) from e

    return wrapped


class EvaluationService:
    """Service for computing evaluation suites."""

    def __init__(self, threads: Optional[int] = None):
        self.threads = threads

    def _map(self, fn: Callable[[T], R], items: Sequence[T], label: str) -> List[R]:
        return parallel_map(_indexed(fn, label), list(enumerate(items)), self.threads)

    def _vectors(self, fn: Callable[[T], np.ndarray], items: Sequence[T], label: str) -> np.ndarray:
        return np.vstack(self._map(fn, items, label))

    def scene_details(self, gen: Sequence[DatasetSample], ref: Sequence[DatasetSample],
                      config: Optional[EvalConfig] = None) -> Tuple[SceneMetrics, Dict[str, Any]]:
        """Scene metrics plus pre-clamp MMD values and bandwidths."""
        config = config or EvalConfig()
        if not gen or not ref:
            raise EmptyInputError("scene evaluation needs non-empty generated and reference datasets")
        if gen[0].image.spec != ref[0].image.spec:
            raise ConfigError("generated and reference datasets use different sensor specs")

        range_provider = get_feature_provider(config.feature_providers["range"])
        point_provider = get_feature_provider(config.feature_providers["points"])
        frd = frechet(
            fit_gaussian(self._vectors(lambda s: range_provider(s.cloud, s.image), gen, "gen")),
            fit_gaussian(self._vectors(lambda s: range_provider(s.cloud, s.image), ref, "ref")),
        )
        fpd = frechet(
            fit_gaussian(self._vectors(lambda s: point_provider(s.cloud, s.image), gen, "gen")),
            fit_gaussian(self._vectors(lambda s: point_provider(s.cloud, s.image), ref, "ref")),
        )

        def aggregate(samples: Sequence[DatasetSample], label: str) -> BEVHistogram:
            counts = self._map(lambda s: bev_histogram(s.cloud, config.bev_grid).counts, samples, label)
            return BEVHistogram(config.bev_grid, np.sum(counts, axis=0))

        jsd_bev = jsd(aggregate(gen, "gen"), aggregate(ref, "ref"))

        def bev_vector(sample: DatasetSample) -> np.ndarray:
            counts = bev_histogram(sample.cloud, config.mmd_bev_grid).counts.reshape(-1).astype(np.float64)
            total = counts.sum()
            return counts / total if total > 0 else counts

        features = {
            "mmd_bev": bev_vector,
            "mmd_range": lambda s: range_histogram(s.image, config.range_bins),
            "mmd_points": lambda s: radial_histogram(s.cloud, config.radial_bins, config.radial_max),
        }
        estimates = {
            name: mmd_gaussian_details(self._vectors(fn, gen, "gen"), self._vectors(fn, ref, "ref"), config.bandwidth)
            for name, fn in features.items()
        }

        metrics = SceneMetrics(
            frd=frd,
            fpd=fpd,
            jsd_bev=jsd_bev,
            **{name: estimate.value for name, estimate in estimates.items()},
        )
        details = {
            "samples": {"gen": len(gen), "ref": len(ref)},
            "providers": {"frd": range_provider.name, "fpd": point_provider.name},
            "mmd": {name: {"raw": e.raw, "bandwidth": e.bandwidth} for name, e in estimates.items()},
        }
        return metrics, details

    def eval_scene(self, gen: Sequence[DatasetSample], ref: Sequence[DatasetSample],
                   config: Optional[EvalConfig] = None) -> SceneMetrics:
        return self.scene_details(gen, ref, config)[0]

    def object_details(self, gen: Sequence[PointCloud], ref: Sequence[PointCloud],
                       config: Optional[EvalConfig] = None) -> Tuple[ObjectMetrics, Dict[str, Any]]:
        """
        Object metrics over box-cropped, unit-normalized point sets.

        fpd uses the object feature provider, p_mmd is MMD-CD, and jsd / mmd
        compare canonical occupancy histograms (aggregated / per object).
        """
        config = config or EvalConfig()
        if not gen or not ref:
            raise EmptyInputError("object evaluation needs non-empty generated and reference sets")
        empty = [f"gen[{i}]" for i, obj in enumerate(gen) if len(obj) == 0]
        empty += [f"ref[{i}]" for i, obj in enumerate(ref) if len(obj) == 0]
        if empty:
            raise EmptyInputError(f"objects without points: {', '.join(empty)}")

        provider = get_feature_provider(config.feature_providers["object"])
        fpd = frechet(
            fit_gaussian(self._vectors(lambda o: provider(o, None), gen, "gen")),
            fit_gaussian(self._vectors(lambda o: provider(o, None), ref, "ref")),
        )
        p_mmd = mmd_cd(gen, ref, self.threads)

        occupancy_gen = self._vectors(lambda o: canonical_occupancy(o, config.object_grid), gen, "gen")
        occupancy_ref = self._vectors(lambda o: canonical_occupancy(o, config.object_grid), ref, "ref")
        divergence = jsd(occupancy_gen.sum(axis=0), occupancy_ref.sum(axis=0))
        estimate = mmd_gaussian_details(occupancy_gen, occupancy_ref, config.bandwidth)

        metrics = ObjectMetrics(fpd=fpd, p_mmd=p_mmd, jsd=divergence, mmd=estimate.value)
        details = {
            "samples": {"gen": len(gen), "ref": len(ref)},
            "providers": {"fpd": provider.name},
            "mmd": {"raw": estimate.raw, "bandwidth": estimate.bandwidth},
        }
        return metrics, details

    def eval_object(self, gen: Sequence[PointCloud], ref: Sequence[PointCloud],
                    config: Optional[EvalConfig] = None) -> ObjectMetrics:
        return self.object_details(gen, ref, config)[0]

    def eval_temporal(self, frames: Sequence[PointCloud], gt_poses: Sequence[RigidTransform],
                      config: Optional[EvalConfig] = None) -> TemporalMetrics:
        config = config or EvalConfig()
        needed = config.max_interval + 1
        if len(frames) < needed:
            raise TooFewFramesError(f"intervals up to {config.max_interval} need {needed} frames, got {len(frames)}")

        errors = {k: ttce(frames, gt_poses, k, config.icp, self.threads) for k in config.ttce_intervals}
        return TemporalMetrics(
            ttce={k: TtceEntry(translation=e.translation, rotation_deg=e.rotation_deg) for k, e in errors.items()},
            ctc={k: ctc(frames, k, self.threads) for k in config.ctc_intervals},
        )

    def collect_objects(self, dataset: Dataset, min_points: int = 1) -> List[PointCloud]:
        """Crop every layout object out of every frame, canonicalized; frame t uses layout step t."""
        if dataset.layout is None:
            raise ConfigError(f"{dataset.source or 'dataset'} has no layout to crop objects with")
        layout = dataset.layout
        if len(dataset) > layout.horizon + 1:
            raise ConfigError(f"{len(dataset)} frames exceed the layout horizon {layout.horizon}")

        def crops(item: Tuple[int, DatasetSample]) -> List[PointCloud]:
            t, sample = item
            to_ego = invert(sample.ego_pose)
            out = []
            for obj in layout.objects:
                crop = crop_object(sample.cloud, transform_box(to_ego, box_at_step(obj, t)))
                if len(crop) >= min_points:
                    out.append(crop)
            return out

        objects = [crop for frame in parallel_map(crops, list(enumerate(dataset.samples)), self.threads) for crop in frame]
        if not objects:
            raise EmptyInputError(f"{dataset.source or 'dataset'} holds no object points")
        return objects

    def evaluate(self, level: str, gen: Dataset, ref: Optional[Dataset] = None,
                 config: Optional[EvalConfig] = None) -> MetricReport:
        """
        Run one level, or ``all``, and collect results with a config echo.

        Temporal metrics use the reference poses as ground truth when a
        reference is given, otherwise the generated dataset's own poses.
        """
        config = config or EvalConfig()
        levels = LEVELS if level == "all" else (level,)
        if any(name not in LEVELS for name in levels):
            raise ConfigError(f"unknown evaluation level {level!r}")
        if ref is None and any(name in ("scene", "object") for name in levels):
            raise ConfigError(f"level {level!r} needs a reference dataset")

        report = MetricReport()
        metadata: Dict[str, Any] = {
            "version": settings.APP_VERSION,
            "level": level,
            "config": config.model_dump(mode="json"),
        }
        if "scene" in levels:
            report.scene, metadata["scene"] = self.scene_details(gen.samples, ref.samples, config)
        if "object" in levels:
            report.object, metadata["object"] = self.object_details(
                self.collect_objects(gen), self.collect_objects(ref), config
            )
        if "temporal" in levels:
            poses = (ref if ref is not None else gen).poses
            if len(poses) != len(gen):
                raise ConfigError(f"{len(gen)} generated frames but {len(poses)} ground-truth poses")
            report.temporal = self.eval_temporal(gen.clouds, poses, config)
            metadata["temporal"] = {"frames": len(gen)}
        report.metadata = metadata
        logger.info("evaluated %s on %d generated samples", level, len(gen))
        return report


# Global service instance
evaluation_service = EvaluationService()
