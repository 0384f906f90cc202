"""
Generation metrics: point-set distances, temporal consistency, histogram
divergences, kernel two-sample statistics and Frechet distances over
pluggable features.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np
from scipy import linalg, stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from ..models.geometry import BoundingBox3D, PointCloud, RigidTransform
from ..models.metrics import FdcSummary, GaussianSummary, MmdEstimate, TransformError
from ..models.range_view import BEVHistogram, RangeImage
from ..models.registration import IcpParams
from ..utils.errors import (
    ConfigError,
    DataError,
    DimensionMismatchError,
    EmptyInputError,
    InsufficientSamplesError,
    RegistrationError,
    TooFewFramesError,
)
from ..utils.helpers import ordered_mean, parallel_map
from .geometry import box_local, compose, invert, points_in_box, rotation_angle
from .registration import icp

logger = logging.getLogger(__name__)

COVARIANCE_FLOOR = 1e-10
FDC_CATEGORIES = ("car", "pedestrian", "truck", "bus")

CloudLike = Union[PointCloud, np.ndarray]


def _points(cloud: CloudLike) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


# Point-set distances

def chamfer(a: CloudLike, b: CloudLike) -> float:
    """Mean squared nearest-neighbour distance from a to b plus from b to a (m^2)."""
    pa, pb = _points(a), _points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise EmptyInputError("chamfer needs two non-empty clouds")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float(np.mean(d_ab * d_ab) + np.mean(d_ba * d_ba))


def _check_interval(frames: Sequence, interval: int) -> None:
    if interval < 0:
        raise ConfigError(f"frame interval must be non-negative, got {interval}")
    if len(frames) < interval + 1:
        raise TooFewFramesError(f"interval {interval} needs at least {interval + 1} frames, got {len(frames)}")


def ctc(frames: Sequence[CloudLike], interval: int, threads: Optional[int] = None) -> float:
    """Mean chamfer between frames ``interval`` apart."""
    _check_interval(frames, interval)
    pairs = list(range(len(frames) - interval))

    def pair(t: int) -> float:
        try:
            return chamfer(frames[t], frames[t + interval])
        except DataError as e:
            raise type(e)(f"frame {t}: {e}", index=t) from e

    return ordered_mean(parallel_map(pair, pairs, threads))


def ttce(frames: Sequence[PointCloud], gt_ego: Sequence[RigidTransform], interval: int,
         params: Optional[IcpParams] = None, threads: Optional[int] = None) -> TransformError:
    """
    Mean translation (m) and rotation (deg) error of ICP-recovered relative
    ego motion against ground truth at a frame interval.
    """
    if len(frames) != len(gt_ego):
        raise DimensionMismatchError(f"{len(frames)} frames but {len(gt_ego)} poses")
    _check_interval(frames, interval)
    if interval == 0:
        return TransformError(0.0, 0.0)
    params = params or IcpParams()

    def error(t: int) -> Tuple[float, float]:
        try:
            predicted = icp(frames[t + interval], frames[t], params).transform
        except RegistrationError as e:
            raise type(e)(f"frame {t}: {e}", index=t) from e
        truth = compose(invert(gt_ego[t]), gt_ego[t + interval])
        delta = compose(invert(truth), predicted)
        return float(np.linalg.norm(delta.translation)), math.degrees(rotation_angle(delta.rotation))

    errors = parallel_map(error, list(range(len(frames) - interval)), threads)
    return TransformError(
        translation=ordered_mean(e[0] for e in errors),
        rotation_deg=ordered_mean(e[1] for e in errors),
    )


# Histogram divergences

def jsd(p: Union[BEVHistogram, np.ndarray], q: Union[BEVHistogram, np.ndarray]) -> float:
    """Base-2 Jensen-Shannon divergence between two histograms, in [0, 1]."""
    p = np.asarray(p.counts if isinstance(p, BEVHistogram) else p, dtype=np.float64).reshape(-1)
    q = np.asarray(q.counts if isinstance(q, BEVHistogram) else q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"histograms have {p.size} and {q.size} bins")
    if np.any(p < 0) or np.any(q < 0):
        raise DataError("histogram counts must be non-negative")
    if p.sum() <= 0 or q.sum() <= 0:
        raise EmptyInputError("histogram has zero mass")
    p = p / p.sum()
    q = q / q.sum()
    m = (p + q) / 2.0
    value = 0.5 * stats.entropy(p, m, base=2) + 0.5 * stats.entropy(q, m, base=2)
    return float(min(1.0, max(0.0, value)))


# Kernel two-sample statistics

def _samples(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.shape[0] < 2:
        raise InsufficientSamplesError(f"{name} needs at least 2 samples, got {array.shape[0]}")
    return array


def median_bandwidth(xs: np.ndarray, ys: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples, 1.0 when degenerate."""
    pooled = np.vstack([xs, ys])
    distances = pdist(pooled)
    distances = distances[distances > 0]
    if distances.size == 0:
        return 1.0
    return float(np.median(distances))


def mmd_gaussian_details(xs, ys, bandwidth: Optional[float] = None) -> MmdEstimate:
    """Unbiased MMD^2 with k(a, b) = exp(-|a - b|^2 / 2 sigma^2); keeps the pre-clamp value."""
    xs = _samples(xs, "xs")
    ys = _samples(ys, "ys")
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatchError(f"samples have dimension {xs.shape[1]} and {ys.shape[1]}")
    if bandwidth is not None and bandwidth <= 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    sigma = bandwidth if bandwidth is not None else median_bandwidth(xs, ys)
    gamma = 1.0 / (2.0 * sigma * sigma)

    n, m = xs.shape[0], ys.shape[0]
    k_xx = np.exp(-gamma * cdist(xs, xs, "sqeuclidean"))
    k_yy = np.exp(-gamma * cdist(ys, ys, "sqeuclidean"))
    k_xy = np.exp(-gamma * cdist(xs, ys, "sqeuclidean"))
    raw = (
        (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
        + (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
        - 2.0 * k_xy.mean()
    )
    raw = float(raw)
    if raw < 0.0:
        logger.debug("mmd estimate %.3e clamped to 0", raw)
    return MmdEstimate(value=max(0.0, raw), raw=raw, bandwidth=sigma)


def mmd_gaussian(xs, ys, bandwidth: Optional[float] = None) -> float:
    return mmd_gaussian_details(xs, ys, bandwidth).value


def mmd_cd(gen_objects: Sequence[CloudLike], ref_objects: Sequence[CloudLike],
           threads: Optional[int] = None) -> float:
    """For every reference object, chamfer to its closest generated object; averaged."""
    if not gen_objects or not ref_objects:
        raise EmptyInputError("mmd_cd needs non-empty generated and reference sets")
    empty = [i for i, obj in enumerate(ref_objects) if _points(obj).shape[0] == 0]
    empty += [len(ref_objects) + i for i, obj in enumerate(gen_objects) if _points(obj).shape[0] == 0]
    if empty:
        raise EmptyInputError(f"empty objects at indices {empty}", index=empty[0])

    def closest(ref: CloudLike) -> float:
        return min(chamfer(ref, gen) for gen in gen_objects)

    return ordered_mean(parallel_map(closest, list(ref_objects), threads))


# Frechet distance

def fit_gaussian(features) -> GaussianSummary:
    """Sample mean and n-1 covariance, eigenvalues floored at COVARIANCE_FLOOR."""
    features = _samples(features, "fit_gaussian")
    mean = features.mean(axis=0)
    cov = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2.0
    eigenvalues, eigenvectors = linalg.eigh(cov)
    if eigenvalues.min() < COVARIANCE_FLOOR:
        eigenvalues = np.maximum(eigenvalues, COVARIANCE_FLOOR)
        cov = (eigenvectors * eigenvalues) @ eigenvectors.T
        cov = (cov + cov.T) / 2.0
    return GaussianSummary(mean=mean, cov=cov)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = linalg.eigh((matrix + matrix.T) / 2.0)
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def frechet(a: GaussianSummary, b: GaussianSummary) -> float:
    """
    |mu_a - mu_b|^2 + Tr(A + B - 2 (A^1/2 B A^1/2)^1/2).

    The cross term equals the nuclear norm of B^1/2 A^1/2, which avoids a
    second square root and stays exact at a == b.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"gaussians have dimension {a.dim} and {b.dim}")
    diff = a.mean - b.mean
    cross = float(np.sum(linalg.svdvals(_psd_sqrt(b.cov) @ _psd_sqrt(a.cov))))
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(0.0, value)


# Feature providers

def _log2_bins(values: np.ndarray, bins: int = 32, offset: int = 8) -> np.ndarray:
    """Bin k holds values in [2^(k-offset), 2^(k-offset+1)); doubling moves one bin up."""
    _, exponent = np.frexp(values)
    return np.clip(exponent - 1 + offset, 0, bins - 1)


def _normalized_counts(index: np.ndarray, bins: int, total: int) -> np.ndarray:
    if total == 0:
        return np.zeros(bins)
    return np.bincount(index, minlength=bins)[:bins] / total


def extract_features_baseline(cloud: PointCloud, img: Optional[RangeImage] = None) -> np.ndarray:
    """
    64-d handcrafted descriptor of a scan.

    32 log2-range bins, 16 height bins over [-4, 4) m, per-quadrant point
    fraction and mean planar distance / 100, then point count / 1000,
    mean and std range / 100, finite-cell fraction, intensity mean and std,
    mean and std height.
    """
    points = cloud.points
    n = points.shape[0]
    ranges = np.linalg.norm(points, axis=1)

    log_range = _normalized_counts(_log2_bins(ranges), 32, n)

    height, _ = np.histogram(points[:, 2], bins=16, range=(-4.0, 4.0))
    height = height / n if n else np.zeros(16)

    quadrant = (points[:, 0] < 0).astype(np.int64) + 2 * (points[:, 1] < 0).astype(np.int64)
    planar = np.hypot(points[:, 0], points[:, 1])
    fractions = _normalized_counts(quadrant, 4, n)
    distances = np.zeros(4)
    for q in range(4):
        inside = quadrant == q
        if np.any(inside):
            distances[q] = planar[inside].mean() / 100.0

    finite_fraction = 0.0
    if img is not None:
        finite_fraction = img.finite_count / img.range.size
    scalars = np.zeros(8)
    scalars[0] = n / 1000.0
    scalars[3] = finite_fraction
    if n:
        scalars[1] = ranges.mean() / 100.0
        scalars[2] = ranges.std() / 100.0
        scalars[4] = cloud.intensity.mean()
        scalars[5] = cloud.intensity.std()
        scalars[6] = points[:, 2].mean()
        scalars[7] = points[:, 2].std()
    return np.concatenate([log_range, height, fractions, distances, scalars])


def canonical_occupancy(points: CloudLike, grid: int) -> np.ndarray:
    """Normalized grid^3 occupancy of unit-normalized box-frame points."""
    pts = _points(points)
    counts, _ = np.histogramdd(pts, bins=(grid, grid, grid), range=((-0.5, 0.5),) * 3)
    counts = counts.reshape(-1)
    total = counts.sum()
    return counts / total if total > 0 else counts


def range_histogram(img: RangeImage, bins: int) -> np.ndarray:
    """Normalized histogram of finite ranges over [range_min, range_max]."""
    values = img.range[img.finite_mask]
    counts, _ = np.histogram(values, bins=bins, range=(img.spec.range_min, img.spec.range_max))
    return counts / values.size if values.size else counts.astype(np.float64)


def radial_histogram(cloud: PointCloud, bins: int, radial_max: float) -> np.ndarray:
    """Normalized histogram of point distances from the sensor over [0, radial_max]."""
    distances = np.linalg.norm(cloud.points, axis=1)
    counts, _ = np.histogram(distances, bins=bins, range=(0.0, radial_max))
    return counts / distances.size if distances.size else counts.astype(np.float64)


class FeatureProvider(ABC):
    """Maps a scan or an object to a fixed-length vector; deterministic."""

    name: str = ""
    dim: int = 0

    @abstractmethod
    def extract(self, cloud: Optional[PointCloud], image: Optional[RangeImage]) -> np.ndarray:
        """Feature vector for one item."""

    def __call__(self, cloud: Optional[PointCloud] = None, image: Optional[RangeImage] = None) -> np.ndarray:
        vector = np.asarray(self.extract(cloud, image), dtype=np.float64).reshape(-1)
        if vector.shape[0] != self.dim:
            raise DimensionMismatchError(f"{self.name} produced {vector.shape[0]} features, expected {self.dim}")
        return vector


class BaselineFeatureProvider(FeatureProvider):
    name = "points-baseline"
    dim = 64

    def extract(self, cloud, image):
        return extract_features_baseline(cloud, image)


class RangeViewFeatureProvider(FeatureProvider):
    """Log-range histogram of finite cells plus per-band coverage and mean range."""

    name = "range-view-baseline"
    dim = 48
    bands = 8

    def extract(self, cloud, image):
        finite = image.finite_mask
        values = image.range[finite]
        log_range = _normalized_counts(_log2_bins(values), 32, values.size)

        coverage = np.zeros(self.bands)
        mean_range = np.zeros(self.bands)
        for b, rows in enumerate(np.array_split(np.arange(image.spec.rows), self.bands)):
            if rows.size == 0:
                continue
            band = finite[rows]
            coverage[b] = band.mean()
            if band.any():
                mean_range[b] = image.range[rows][band].mean() / 100.0
        return np.concatenate([log_range, coverage, mean_range])


class CanonicalOccupancyProvider(FeatureProvider):
    """Occupancy of box-frame object points on a coarse 4 x 4 x 4 grid."""

    name = "canonical-occupancy"
    grid = 4
    dim = grid ** 3

    def extract(self, cloud, image):
        return canonical_occupancy(cloud, self.grid)


FEATURE_PROVIDERS: Dict[str, Type[FeatureProvider]] = {
    provider.name: provider
    for provider in (BaselineFeatureProvider, RangeViewFeatureProvider, CanonicalOccupancyProvider)
}


def get_feature_provider(name: str) -> FeatureProvider:
    try:
        return FEATURE_PROVIDERS[name]()
    except KeyError:
        raise ConfigError(f"unknown feature provider {name!r}; known: {sorted(FEATURE_PROVIDERS)}") from None


# Objects

def crop_object(cloud: PointCloud, box: BoundingBox3D) -> PointCloud:
    """Points inside ``box``, in the box frame and divided by its dims."""
    inside = points_in_box(box, cloud.points)
    local = box_local(box, cloud.points[inside]) / box.dims
    return PointCloud(local, cloud.intensity[inside])


def fdc_summary(detections: Sequence[Sequence[Tuple[str, float]]]) -> FdcSummary:
    """
    Summarize an external detector's output on generated frames.

    ``detections`` holds one list of (label, confidence) per frame.
    """
    scores: Dict[str, List[float]] = {label: [] for label in FDC_CATEGORIES}
    boxes = 0
    for frame, boxes_in_frame in enumerate(detections):
        for label, confidence in boxes_in_frame:
            if not 0.0 <= confidence <= 1.0:
                raise DataError(f"frame {frame}: confidence {confidence} outside [0, 1]", index=frame)
            scores.setdefault(label, []).append(float(confidence))
            boxes += 1
    frames = len(detections)
    return FdcSummary(
        per_category={label: ordered_mean(values) for label, values in scores.items()},
        boxes_per_frame=boxes / frames if frames else 0.0,
        frames=frames,
    )
