"""
Rigid registration: exact nearest-neighbour index, closed-form Kabsch solve
and point-to-point ICP.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..models.geometry import PointCloud, RigidTransform
from ..models.registration import IcpParams, RegistrationResult
from ..utils.errors import DegenerateConfigurationError, EmptyInputError, NoCorrespondenceError
from .geometry import compose, transform_points

logger = logging.getLogger(__name__)

# Smallest over middle covariance eigenvalue of a planar patch.
PLANARITY = 0.05
# Spread (m^2) a patch needs along its second axis; below it the patch is a
# straight line. A single scan ring on flat ground still clears it.
MIN_PATCH_SPREAD = 1e-8
# Share of planar patches both clouds need before pairs are matched against surfaces.
SURFACE_MIN_FRACTION = 0.3
# A coarse stage hands over once an iteration gains less than this share of its gate.
STAGE_TOLERANCE = 0.01


class NearestNeighborIndex:
    """Exact k-d tree over a cloud's points; read-only after construction."""

    def __init__(self, target: PointCloud):
        points = target.points if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
        if points.shape[0] == 0:
            raise EmptyInputError("cannot index an empty cloud")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: np.ndarray, max_distance: float = np.inf) -> Tuple[np.ndarray, np.ndarray]:
        """
        Distance and index of the nearest indexed point for each query.

        Queries with nothing inside ``max_distance`` get distance inf and
        index len(self).
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        distances, indices = self._tree.query(queries, k=1, distance_upper_bound=max_distance)
        return distances, indices

    def surface_patches(self, neighbors: int) -> Tuple[np.ndarray, np.ndarray]:
        """Patch normal and planarity flag for every indexed point."""
        return local_patches(self.points, neighbors, self._tree)


def nearest_neighbor_index(target: PointCloud) -> NearestNeighborIndex:
    return NearestNeighborIndex(target)


def local_patches(points: np.ndarray, neighbors: int,
                  tree: Optional[cKDTree] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unit normal of the plane fitted through each point's ``neighbors``
    nearest points, and whether that patch is planar.

    Scan lines (no spread across the line) and corners (spread off the
    plane) both fail the planarity test. Normals are unsigned.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    count = points.shape[0]
    if neighbors < 3 or count < neighbors:
        return np.zeros((count, 3)), np.zeros(count, dtype=bool)
    tree = tree if tree is not None else cKDTree(points)
    _, indices = tree.query(points, k=neighbors)
    patches = points[indices]
    centered = patches - patches.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", centered, centered) / neighbors
    values, vectors = np.linalg.eigh(covariance)
    planar = (values[:, 1] >= MIN_PATCH_SPREAD) & (values[:, 0] <= PLANARITY * values[:, 1])
    return vectors[:, :, 0], planar


def kabsch(src_pts: np.ndarray, dst_pts: np.ndarray) -> RigidTransform:
    """
    Least-squares rigid transform with R @ s + t ~= d for paired rows.

    SVD of the cross-covariance with a determinant correction, so reflections
    are never returned.
    """
    src = np.asarray(src_pts, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise DegenerateConfigurationError(f"paired sets differ in size: {src.shape[0]} vs {dst.shape[0]}")
    if src.shape[0] < 3:
        raise DegenerateConfigurationError(f"need at least 3 pairs, got {src.shape[0]}")

    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    a = src - src_mean
    b = dst - dst_mean
    spread = np.linalg.svd(a, compute_uv=False)
    if spread[1] <= 1e-12 * max(spread[0], 1.0):
        raise DegenerateConfigurationError("source points are collinear or coincident")

    u, _, vt = np.linalg.svd(a.T @ b)
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T)) or 1.0])
    rotation = vt.T @ correction @ u.T
    return RigidTransform(rotation, dst_mean - rotation @ src_mean)


def voxel_downsample(cloud: PointCloud, size: float) -> PointCloud:
    """Centroid of every occupied voxel, ordered by voxel key."""
    if size <= 0 or len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, cloud.points)
    intensity = np.bincount(inverse, weights=cloud.intensity, minlength=counts.size) / counts
    return PointCloud(sums / counts[:, None], np.clip(intensity, 0.0, 1.0))


def correspondence_gates(params: IcpParams) -> List[float]:
    """Gate per stage: halving from max_correspondence_dist, never below min_correspondence_dist."""
    gates = [params.max_correspondence_dist]
    while gates[-1] / 2.0 >= params.min_correspondence_dist:
        gates.append(gates[-1] / 2.0)
    return gates


def _rms(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residuals * residuals)))


def _rigid_step(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Kabsch update, or the mean shift when the pairs cannot fix a rotation."""
    if src.shape[0] >= 3:
        try:
            return kabsch(src, dst)
        except DegenerateConfigurationError:
            pass
    return RigidTransform.from_translation((dst - src).mean(axis=0))


def _settle_on_points(points: np.ndarray, anchors: np.ndarray):
    before = np.linalg.norm(anchors - points, axis=1)
    update = _rigid_step(points, anchors)
    after = np.linalg.norm(transform_points(update, points) - anchors, axis=1)
    if _rms(after) > _rms(before):
        # Rounding noise at the optimum; keep the current estimate.
        return RigidTransform.identity(), before, before
    return update, before, after


def _settle_on_planes(points: np.ndarray, anchors: np.ndarray, normals: np.ndarray,
                      refinements: int, tolerance: float):
    """
    Rigid update pulling ``points`` onto the planes through ``anchors``.

    Each pass projects the moved points onto their planes and solves Kabsch
    against the projections, so the plane residual never grows from one pass
    to the next. Returns the update and the absolute plane offsets before and
    after it.
    """
    def offsets(p: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", p - anchors, normals)

    start = offsets(points)
    update = RigidTransform.identity()
    moved, current = points, start
    for _ in range(refinements):
        step = _rigid_step(moved, moved - normals * current[:, None])
        candidate = transform_points(step, moved)
        residual = offsets(candidate)
        gain = _rms(current) - _rms(residual)
        if gain < 0.0:
            break
        update, moved, current = compose(step, update), candidate, residual
        if gain < tolerance:
            break
    return update, np.abs(start), np.abs(current)


def icp(source: PointCloud, target: PointCloud, params: Optional[IcpParams] = None,
        index: Optional[NearestNeighborIndex] = None) -> RegistrationResult:
    """
    Align ``source`` to ``target``.

    When most points of both clouds sit on planar patches, as in LiDAR scans
    of ground and box faces, every planar source point is paired with the
    closest point of the plane fitted around its nearest target sample and
    the Kabsch solve is repeated against those points until it settles.
    Other clouds pair raw nearest samples with one Kabsch solve per iteration.
    Either way the RMS over an iteration's correspondence set never increases.

    The gate starts at ``max_correspondence_dist`` and halves each time a
    stage settles, so points on independently moving objects drop out before
    the final stage. Stops once the final stage, or a stage whose pairs all
    fit the final gate, improves the RMS by less than ``convergence_eps``.
    """
    params = params or IcpParams()
    if len(source) == 0 or len(target) == 0:
        raise EmptyInputError("icp needs non-empty source and target")
    if params.voxel_size > 0:
        source = voxel_downsample(source, params.voxel_size)
        target = voxel_downsample(target, params.voxel_size)
        index = None
    index = index or nearest_neighbor_index(target)

    points = source.points
    patches = None
    if params.surface_neighbors:
        normals, planar = index.surface_patches(params.surface_neighbors)
        _, source_planar = local_patches(points, params.surface_neighbors)
        if min(planar.mean(), source_planar.mean()) >= SURFACE_MIN_FRACTION:
            patches = (np.vstack((normals, np.zeros((1, 3)))), np.append(planar, False))
            points = points[source_planar]
    matching = "point" if patches is None else "surface"

    gates = correspondence_gates(params)
    stage = 0
    transform = params.initial
    history = []
    converged = False
    rms = float("inf")
    matched = 0
    for iteration in range(1, params.max_iterations + 1):
        gate = gates[stage]
        moved = transform_points(transform, points)
        distances, indices = index.query(moved, params.max_correspondence_dist)
        if patches is None:
            residuals = distances
        else:
            # Misses carry index len(index), which maps onto the padded non-planar row.
            safe = np.minimum(indices, len(index))
            normals = patches[0][safe]
            anchors = index.points[np.minimum(safe, len(index) - 1)]
            residuals = np.abs(np.einsum("ij,ij->i", moved - anchors, normals))
            residuals[~(patches[1][safe] & np.isfinite(distances))] = np.inf
        keep = np.flatnonzero(residuals <= gate)
        matched = int(keep.size)
        if matched == 0:
            if stage == 0:
                raise NoCorrespondenceError(f"no correspondences within {gate} m at iteration {iteration}")
            logger.debug("icp lost every pair at the %.3f m gate, keeping the estimate", gate)
            break

        paired_src = moved[keep]
        paired_dst = index.points[indices[keep]]
        if patches is None:
            update, before, after = _settle_on_points(paired_src, paired_dst)
        else:
            update, before, after = _settle_on_planes(
                paired_src, paired_dst, normals[keep], params.surface_refinements, params.convergence_eps
            )
        transform = compose(update, transform)
        rms_before, rms = _rms(before), _rms(after)
        history.append((rms_before, rms))

        gain = rms_before - rms
        last = stage == len(gates) - 1
        if gain < (params.convergence_eps if last else max(params.convergence_eps, STAGE_TOLERANCE * gate)):
            if gain < params.convergence_eps and (last or float(after.max()) <= gates[-1]):
                converged = True
                break
            stage = min(stage + 1, len(gates) - 1)

    if not converged:
        logger.info("icp stopped after %d iterations without converging (rms %.6f)", len(history), rms)
    return RegistrationResult(
        transform=transform,
        rms_residual=rms,
        iterations=len(history),
        converged=converged,
        correspondences=matched,
        history=history,
        matching=matching,
    )
