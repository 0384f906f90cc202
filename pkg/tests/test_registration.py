import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from layout4d.models.geometry import PointCloud, RigidTransform
from layout4d.models.range_view import SensorSpec
from layout4d.models.registration import IcpParams
from layout4d.services.geometry import compose, invert, rotation_angle, transform_points
from layout4d.services.range_view import unproject
from layout4d.services.registration import (
    NearestNeighborIndex,
    correspondence_gates,
    icp,
    kabsch,
    local_patches,
    nearest_neighbor_index,
    voxel_downsample,
)
from layout4d.services.simulator import make_world, random_layout, raycast
from layout4d.utils.errors import DegenerateConfigurationError, EmptyInputError, NoCorrespondenceError

from conftest import full_acceptance, parked_layout

TIGHT = IcpParams(max_correspondence_dist=5.0, convergence_eps=1e-12, max_iterations=200)


def small_motion(rng):
    yaw = math.radians(rng.uniform(-10.0, 10.0))
    return RigidTransform.from_yaw(yaw, rng.uniform(-0.5, 0.5, 3))


def errors(estimate, truth):
    delta = compose(invert(truth), estimate)
    return float(np.linalg.norm(delta.translation)), math.degrees(rotation_angle(delta.rotation))


@pytest.fixture(scope="module")
def parked_scan():
    world = make_world(parked_layout())
    return unproject(raycast(world, RigidTransform.identity(), SensorSpec()))


def test_kabsch_recovers_exact_transform(rng):
    src = rng.normal(size=(100, 3)) * 5.0
    truth = RigidTransform.from_quaternion(rng.normal(size=4), rng.normal(size=3))
    estimate = kabsch(src, transform_points(truth, src))
    assert estimate.allclose(truth, atol=1e-9)


def test_kabsch_never_reflects(rng):
    src = rng.normal(size=(50, 3))
    mirrored = src * np.array([-1.0, 1.0, 1.0])
    estimate = kabsch(src, mirrored)
    assert np.linalg.det(estimate.rotation) == pytest.approx(1.0)


def test_kabsch_rejects_degenerate_sets():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        kabsch(line, line)
    with pytest.raises(DegenerateConfigurationError):
        kabsch(np.eye(3)[:2], np.eye(3)[:2])


def test_index_matches_brute_force(rng):
    target = rng.uniform(-10.0, 10.0, size=(500, 3))
    queries = rng.uniform(-12.0, 12.0, size=(200, 3))
    distances, indices = NearestNeighborIndex(PointCloud(target)).query(queries)
    brute = cdist(queries, target)
    np.testing.assert_array_equal(indices, brute.argmin(axis=1))
    np.testing.assert_allclose(distances, brute.min(axis=1), atol=1e-12)


def test_index_gate_marks_misses():
    index = NearestNeighborIndex(PointCloud([[0.0, 0.0, 0.0]]))
    distances, indices = index.query([[5.0, 0.0, 0.0]], max_distance=1.0)
    assert math.isinf(distances[0])
    assert indices[0] == len(index)


def test_index_rejects_empty_cloud():
    with pytest.raises(EmptyInputError):
        NearestNeighborIndex(PointCloud.empty())
    with pytest.raises(EmptyInputError):
        nearest_neighbor_index(PointCloud.empty())


def test_icp_on_identical_clouds(clutter):
    result = icp(clutter, clutter)
    assert result.transform.allclose(RigidTransform.identity(), atol=1e-12)
    assert result.rms_residual < 1e-12
    assert result.converged
    assert result.iterations == 1


def test_icp_recovers_small_motions(rng, clutter):
    for _ in range(10):
        truth = small_motion(rng)
        source = PointCloud(transform_points(invert(truth), clutter.points))
        result = icp(source, clutter, TIGHT)
        delta = result.transform.translation - truth.translation
        assert np.linalg.norm(delta) < 1e-3
        assert math.degrees(rotation_angle(result.transform.rotation @ truth.rotation.T)) < 0.05
        assert result.converged


def test_icp_residual_never_increases_within_an_iteration(rng, clutter):
    truth = small_motion(rng)
    source = PointCloud(transform_points(invert(truth), clutter.points))
    result = icp(source, clutter, TIGHT)
    assert result.history
    assert all(after <= before for before, after in result.history)
    assert result.iterations == len(result.history)


def test_icp_uses_initial_guess(rng, clutter):
    truth = RigidTransform.from_translation((1.5, 0.0, 0.0))
    source = PointCloud(transform_points(invert(truth), clutter.points))
    params = TIGHT.model_copy(update={"initial_translation": (1.5, 0.0, 0.0)})
    result = icp(source, clutter, params)
    assert result.iterations == 1
    assert result.transform.allclose(truth, atol=1e-12)


def test_icp_translation_only_below_three_matches():
    source = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    target = PointCloud([[0.1, 0.0, 0.0], [1.1, 0.0, 0.0]])
    result = icp(source, target)
    np.testing.assert_allclose(result.transform.translation, (0.1, 0.0, 0.0), atol=1e-12)
    np.testing.assert_array_equal(result.transform.rotation, np.eye(3))


def test_icp_without_correspondences(clutter):
    far = PointCloud(clutter.points + 100.0)
    with pytest.raises(NoCorrespondenceError):
        icp(far, clutter)


def test_icp_rejects_empty_input(clutter):
    with pytest.raises(EmptyInputError):
        icp(PointCloud.empty(), clutter)


def test_icp_reports_non_convergence(rng, clutter):
    truth = small_motion(rng)
    source = PointCloud(transform_points(invert(truth), clutter.points))
    params = TIGHT.model_copy(update={"max_iterations": 1})
    result = icp(source, clutter, params)
    assert result.iterations == 1
    assert not result.converged


def test_voxel_downsample_centroids():
    cloud = PointCloud([[0.01, 0.01, 0.01], [0.03, 0.03, 0.03], [0.5, 0.0, 0.0]], [0.2, 0.4, 1.0])
    down = voxel_downsample(cloud, 0.1)
    np.testing.assert_allclose(down.points, [[0.02, 0.02, 0.02], [0.5, 0.0, 0.0]])
    np.testing.assert_allclose(down.intensity, [0.3, 1.0])
    assert voxel_downsample(cloud, 0.0) is cloud


def test_icp_translation_only_for_collinear_matches():
    line = np.outer(np.arange(20.0) * 0.2, [1.0, 2.0, 3.0])
    shift = np.array([0.1, 0.0, 0.0])
    result = icp(PointCloud(line), PointCloud(line + shift))
    np.testing.assert_allclose(result.transform.translation, shift, atol=1e-9)
    np.testing.assert_array_equal(result.transform.rotation, np.eye(3))
    assert result.matching == "point"
    assert result.converged


def test_icp_is_conjugation_invariant(rng, clutter):
    truth = small_motion(rng)
    frame = RigidTransform.from_quaternion((0.9, 0.1, -0.2, 0.3), (3.0, -2.0, 1.0))
    source = transform_points(invert(truth), clutter.points)
    plain = icp(PointCloud(source), clutter, TIGHT).transform
    moved = icp(
        PointCloud(transform_points(frame, source)), PointCloud(transform_points(frame, clutter.points)), TIGHT
    ).transform
    expected = compose(frame, compose(plain, invert(frame)))
    translation, rotation = errors(moved, expected)
    assert translation < 1e-6
    assert math.radians(rotation) < 1e-6


# Surface matching

def test_correspondence_gates_halve_to_the_floor():
    assert correspondence_gates(IcpParams()) == [2.0, 1.0, 0.5, 0.25, 0.125]
    assert correspondence_gates(IcpParams(max_correspondence_dist=0.3, min_correspondence_dist=0.5)) == [0.3]
    assert correspondence_gates(TIGHT)[-1] == pytest.approx(0.15625)


def test_local_patches_flag_planes_not_lines(rng):
    plane = np.column_stack([rng.uniform(-1.0, 1.0, size=(200, 2)), np.full(200, -1.8)])
    normals, planar = local_patches(plane, 12)
    assert planar.all()
    np.testing.assert_allclose(np.abs(normals[:, 2]), 1.0, atol=1e-9)

    line = np.outer(np.linspace(0.0, 5.0, 50), [1.0, 2.0, 3.0])
    assert not local_patches(line, 12)[1].any()
    assert local_patches(rng.uniform(-1.0, 1.0, size=(200, 3)), 12)[1].mean() < 0.1
    assert not local_patches(plane[:5], 12)[1].any()


def test_icp_matches_surfaces_on_scans(parked_scan):
    truth = RigidTransform.from_yaw(math.radians(5.0), (0.2, 0.0, 0.0))
    target = PointCloud(transform_points(truth, parked_scan.points))
    result = icp(parked_scan, target, IcpParams(max_iterations=100))
    assert result.matching == "surface"
    translation, rotation = errors(result.transform, truth)
    assert translation < 0.01
    assert rotation < 0.1
    assert all(after <= before for before, after in result.history)


def test_icp_on_a_random_layout_scan():
    world = make_world(random_layout(4))
    scan = unproject(raycast(world, RigidTransform.identity(), SensorSpec()))
    truth = RigidTransform.from_yaw(math.radians(5.0), (0.2, 0.0, 0.0))
    result = icp(scan, PointCloud(transform_points(truth, scan.points)), IcpParams(max_iterations=100))
    translation, rotation = errors(result.transform, truth)
    assert translation < 0.01
    assert rotation < 0.1


def test_icp_recovers_motions_on_scans(rng, parked_scan):
    params = IcpParams(max_iterations=100)
    for _ in range(3):
        truth = small_motion(rng)
        target = PointCloud(transform_points(truth, parked_scan.points))
        translation, rotation = errors(icp(parked_scan, target, params).transform, truth)
        assert translation < 0.01
        assert rotation < 0.1


def test_icp_point_matching_when_surfaces_are_disabled(parked_scan):
    params = IcpParams(surface_neighbors=0)
    assert icp(parked_scan, parked_scan, params).matching == "point"


@full_acceptance
def test_icp_recovers_many_motions_on_scans(rng, parked_scan):
    params = IcpParams(max_iterations=100)
    for _ in range(200):
        truth = small_motion(rng)
        target = PointCloud(transform_points(truth, parked_scan.points))
        result = icp(parked_scan, target, params)
        translation, rotation = errors(result.transform, truth)
        assert translation < 0.01
        assert rotation < 0.1
        assert all(after <= before for before, after in result.history)
