import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from layout4d.models.geometry import BoundingBox3D, PointCloud, RigidTransform
from layout4d.models.metrics import GaussianSummary
from layout4d.models.range_view import BEVGrid, SensorSpec
from layout4d.models.registration import IcpParams
from layout4d.services.geometry import compose, invert, transform_box, transform_points
from layout4d.services.metrics import (
    FEATURE_PROVIDERS,
    COVARIANCE_FLOOR,
    canonical_occupancy,
    chamfer,
    crop_object,
    ctc,
    extract_features_baseline,
    fdc_summary,
    fit_gaussian,
    frechet,
    get_feature_provider,
    jsd,
    mmd_cd,
    mmd_gaussian,
    mmd_gaussian_details,
    ttce,
)
from layout4d.services.range_view import bev_histogram, project
from layout4d.services.simulator import make_world, random_layout, simulate_sequence
from layout4d.utils.errors import (
    ConfigError,
    DataError,
    DimensionMismatchError,
    EmptyInputError,
    InsufficientSamplesError,
    TooFewFramesError,
)

from conftest import full_acceptance, parked_layout

EXACT_ICP = IcpParams(max_correspondence_dist=3.0, convergence_eps=1e-12, max_iterations=200)


def brute_chamfer(a, b):
    d = cdist(a, b, "sqeuclidean")
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def sequence(world_points, poses):
    """Ego-frame observations of a static world from each pose."""
    return [PointCloud(transform_points(invert(p), world_points)) for p in poses]


# Chamfer and CTC

def test_chamfer_simple_values():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    assert chamfer(a, a) == 0.0
    assert chamfer(a, b) == pytest.approx(2.0)


def test_chamfer_matches_brute_force(rng):
    a = rng.normal(size=(500, 3))
    b = rng.normal(size=(300, 3)) + 0.5
    assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-12)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)


def test_chamfer_scales_quadratically(rng):
    a = rng.normal(size=(200, 3))
    b = rng.normal(size=(200, 3))
    assert chamfer(3.0 * a, 3.0 * b) == pytest.approx(9.0 * chamfer(a, b), rel=1e-12)


def test_chamfer_rejects_empty_clouds():
    with pytest.raises(EmptyInputError):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


def test_ctc_static_sequence_is_zero(clutter):
    assert ctc([clutter] * 5, 1) == 0.0
    assert ctc([clutter] * 5, 0) == 0.0


def test_ctc_grows_with_displacement(rng):
    cloud = rng.uniform(-10.0, 10.0, size=(300, 3))
    frames = [cloud + [0.5 * t, 0.0, 0.0] for t in range(6)]
    one, two = ctc(frames, 1), ctc(frames, 2)
    assert 0.0 < one < two
    expected = np.mean([brute_chamfer(frames[t], frames[t + 1]) for t in range(5)])
    assert one == pytest.approx(expected, abs=1e-12)


def test_ctc_interval_bounds(clutter):
    with pytest.raises(TooFewFramesError):
        ctc([clutter] * 3, 3)
    with pytest.raises(ConfigError):
        ctc([clutter] * 3, -1)


def test_ctc_empty_frame_is_reported_with_index(clutter):
    with pytest.raises(EmptyInputError) as excinfo:
        ctc([clutter, clutter, PointCloud.empty()], 1, threads=1)
    assert excinfo.value.index == 1


# TTCE

def test_ttce_exact_frames_are_near_zero(clutter):
    poses = [RigidTransform.from_yaw(0.02 * t, (0.4 * t, 0.1 * t, 0.0)) for t in range(6)]
    frames = sequence(clutter.points, poses)
    for k in (1, 2):
        error = ttce(frames, poses, k, EXACT_ICP)
        assert error.translation < 1e-4
        assert error.rotation_deg < 1e-3


def test_ttce_measures_pose_perturbation(clutter):
    truth = [RigidTransform.from_translation((0.2 * t, 0.0, 0.0)) for t in range(5)]
    perturbed = [RigidTransform.from_translation((0.7 * t, 0.0, 0.0)) for t in range(5)]
    frames = sequence(clutter.points, perturbed)
    for k in (1, 2):
        error = ttce(frames, truth, k, EXACT_ICP)
        assert error.translation == pytest.approx(0.5 * k, abs=0.05)
        assert error.rotation_deg < 0.1


def test_ttce_zero_interval_and_bounds(clutter):
    poses = [RigidTransform.identity()] * 3
    assert tuple(ttce([clutter] * 3, poses, 0)) == (0.0, 0.0)
    with pytest.raises(TooFewFramesError):
        ttce([clutter] * 3, poses, 3)
    with pytest.raises(DimensionMismatchError):
        ttce([clutter] * 3, poses[:2], 1)


def simulated_frames(layout, steps):
    frames = simulate_sequence(make_world(layout), layout.ego_trajectory[: steps + 1], SensorSpec(), T=steps, threads=1)
    return [f.cloud for f in frames], [f.ego_pose for f in frames]


@pytest.fixture(scope="module")
def creeping_sequence():
    """Ego at 0.4 m/s past parked vehicles, five full-resolution scans."""
    return simulated_frames(parked_layout(ego_speed=0.4), 4)


def test_ttce_on_simulated_scans(creeping_sequence):
    clouds, poses = creeping_sequence
    for k in (3, 4):
        error = ttce(clouds, poses, k)
        assert error.translation <= 0.02
        assert error.rotation_deg <= 0.1


def test_ttce_on_simulated_scans_with_corrupted_poses(creeping_sequence):
    clouds, poses = creeping_sequence
    corrupted = [compose(p, RigidTransform.from_translation((0.5 * t, 0.0, 0.0))) for t, p in enumerate(poses)]
    for k in (3, 4):
        error = ttce(clouds, corrupted, k)
        assert error.translation == pytest.approx(0.5 * k, abs=0.05)
        assert error.rotation_deg < 0.1


@full_acceptance
@pytest.mark.parametrize("seed", range(5))
def test_ttce_on_random_layouts(seed):
    clouds, poses = simulated_frames(random_layout(seed), 4)
    for k in (3, 4):
        error = ttce(clouds, poses, k)
        assert error.translation <= 0.02
        assert error.rotation_deg <= 0.1


# JSD

def test_jsd_bounds():
    p = np.array([1.0, 2.0, 3.0])
    assert jsd(p, p) == 0.0
    assert jsd(p, 10 * p) == pytest.approx(0.0, abs=1e-15)
    assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)


def test_jsd_is_symmetric(rng):
    p, q = rng.uniform(size=20), rng.uniform(size=20)
    assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-15)
    assert 0.0 < jsd(p, q) < 1.0


def test_jsd_accepts_bev_histograms(rng):
    grid = BEVGrid(bins_x=10, bins_y=10)
    a = bev_histogram(PointCloud(rng.uniform(-40, 40, size=(500, 3))), grid)
    b = bev_histogram(PointCloud(rng.uniform(-40, 0, size=(500, 3))), grid)
    assert jsd(a, a) == 0.0
    assert jsd(a, b) > 0.1


def test_jsd_rejects_bad_histograms():
    with pytest.raises(EmptyInputError):
        jsd([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        jsd([1.0], [1.0, 2.0])
    with pytest.raises(DataError):
        jsd([-1.0, 2.0], [1.0, 1.0])


# MMD

def brute_mmd(xs, ys, sigma):
    def k(a, b):
        return math.exp(-float(np.sum((a - b) ** 2)) / (2.0 * sigma * sigma))

    n, m = len(xs), len(ys)
    xx = sum(k(xs[i], xs[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    yy = sum(k(ys[i], ys[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    xy = sum(k(x, y) for x in xs for y in ys) / (n * m)
    return xx + yy - 2.0 * xy


def test_mmd_matches_brute_force(rng):
    xs = rng.normal(size=(40, 3))
    ys = rng.normal(size=(30, 3)) + 1.0
    details = mmd_gaussian_details(xs, ys, bandwidth=1.5)
    assert details.raw == pytest.approx(brute_mmd(xs, ys, 1.5), abs=1e-12)
    assert details.bandwidth == 1.5


def test_mmd_of_a_permutation_is_zero(rng):
    xs = rng.normal(size=(100, 4))
    details = mmd_gaussian_details(xs, rng.permutation(xs))
    assert details.value == 0.0
    assert details.raw <= 1e-12


def test_mmd_separates_distant_gaussians(rng):
    xs = rng.normal(size=(500, 4))
    ys = rng.normal(size=(500, 4)) + 5.0
    assert mmd_gaussian(xs, ys) > 0.5


def test_mmd_input_checks(rng):
    with pytest.raises(InsufficientSamplesError):
        mmd_gaussian(rng.normal(size=(1, 3)), rng.normal(size=(5, 3)))
    with pytest.raises(DimensionMismatchError):
        mmd_gaussian(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)))
    with pytest.raises(ConfigError):
        mmd_gaussian(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), bandwidth=0.0)


def test_mmd_cd_matches_definition(rng):
    ref = [rng.normal(size=(50, 3)) + i for i in range(3)]
    gen = [rng.normal(size=(40, 3)) + 0.5 * i for i in range(4)]
    expected = np.mean([min(brute_chamfer(r, g) for g in gen) for r in ref])
    assert mmd_cd(gen, ref, threads=2) == pytest.approx(expected, abs=1e-12)
    assert mmd_cd(ref, ref) == 0.0


def test_mmd_cd_names_empty_objects(rng):
    with pytest.raises(EmptyInputError) as excinfo:
        mmd_cd([rng.normal(size=(5, 3))], [rng.normal(size=(5, 3)), np.zeros((0, 3))])
    assert excinfo.value.index == 1


# Frechet

def test_fit_gaussian_matches_textbook(rng):
    features = rng.normal(size=(50, 3)) @ np.array([[2.0, 0.3, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 0.2]])
    summary = fit_gaussian(features)
    np.testing.assert_allclose(summary.mean, features.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(summary.cov, np.cov(features, rowvar=False), atol=1e-12)
    np.testing.assert_array_equal(summary.cov, summary.cov.T)


def test_fit_gaussian_floors_degenerate_covariance():
    identical = fit_gaussian(np.ones((5, 3)))
    np.testing.assert_allclose(identical.cov, COVARIANCE_FLOOR * np.eye(3), atol=1e-20)
    pair = fit_gaussian([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_allclose(pair.mean, [1.0, 0.0])
    np.testing.assert_allclose(pair.cov, [[2.0, 0.0], [0.0, COVARIANCE_FLOOR]], atol=1e-15)


def test_fit_gaussian_needs_two_samples():
    with pytest.raises(InsufficientSamplesError):
        fit_gaussian(np.ones((1, 4)))


def test_frechet_analytic_cases():
    mu = np.array([1.0, -2.0, 0.5])
    identity = GaussianSummary(np.zeros(3), np.eye(3))
    assert frechet(identity, GaussianSummary(mu, np.eye(3))) == pytest.approx(float(mu @ mu), abs=1e-9)
    assert frechet(GaussianSummary(np.zeros(3), 4.0 * np.eye(3)), identity) == pytest.approx(3.0, abs=1e-9)


def test_frechet_diagonal_formula(rng):
    a_var, b_var = rng.uniform(0.1, 3.0, 6), rng.uniform(0.1, 3.0, 6)
    a_mu, b_mu = rng.normal(size=6), rng.normal(size=6)
    expected = float(np.sum((a_mu - b_mu) ** 2) + np.sum((np.sqrt(a_var) - np.sqrt(b_var)) ** 2))
    value = frechet(GaussianSummary(a_mu, np.diag(a_var)), GaussianSummary(b_mu, np.diag(b_var)))
    assert value == pytest.approx(expected, abs=1e-9)


def test_frechet_self_distance_is_zero(rng):
    summary = fit_gaussian(rng.normal(size=(200, 64)))
    assert frechet(summary, summary) <= 1e-9


def test_frechet_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        frechet(GaussianSummary(np.zeros(2), np.eye(2)), GaussianSummary(np.zeros(3), np.eye(3)))


# Features

def test_baseline_features_shape_and_determinism(rng):
    cloud = PointCloud(rng.uniform(-30, 30, size=(400, 3)), rng.uniform(size=400))
    a = extract_features_baseline(cloud)
    assert a.shape == (64,)
    np.testing.assert_array_equal(a, extract_features_baseline(cloud))


def test_baseline_features_of_empty_cloud():
    features = extract_features_baseline(PointCloud.empty())
    assert features.shape == (64,)
    assert np.all(features == 0.0)


def test_doubling_ranges_shifts_log_histogram(rng):
    directions = rng.normal(size=(300, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = directions * rng.uniform(1.0, 100.0, size=(300, 1))
    base = extract_features_baseline(PointCloud(points))[:32]
    doubled = extract_features_baseline(PointCloud(2.0 * points))[:32]
    np.testing.assert_array_equal(doubled[1:], base[:-1])
    assert doubled[0] == 0.0


def test_feature_providers(rng, small_spec):
    cloud = PointCloud(rng.uniform(-30, 30, size=(400, 3)))
    image = project(cloud, small_spec)
    for name, provider_class in FEATURE_PROVIDERS.items():
        provider = get_feature_provider(name)
        vector = provider(cloud, image)
        assert vector.shape == (provider_class.dim,)
        np.testing.assert_array_equal(vector, provider(cloud, image))
    with pytest.raises(ConfigError):
        get_feature_provider("inception")


def test_canonical_occupancy_normalizes(rng):
    occupancy = canonical_occupancy(rng.uniform(-0.5, 0.5, size=(1000, 3)), 4)
    assert occupancy.shape == (64,)
    assert occupancy.sum() == pytest.approx(1.0)
    assert np.all(canonical_occupancy(np.zeros((0, 3)), 2) == 0.0)


# Objects

def test_crop_object_is_pose_invariant(rng):
    box = BoundingBox3D((8.0, -3.0, -0.9), (4.4, 1.9, 1.6), 0.4)
    inside = rng.uniform(-0.45, 0.45, size=(200, 3)) * box.dims
    world_inside = transform_points(box.pose, inside)
    outside = world_inside[:50] + [0.0, 0.0, 5.0]
    cloud = PointCloud(np.vstack([world_inside, outside]))

    crop = crop_object(cloud, box)
    np.testing.assert_allclose(crop.points, inside / box.dims, atol=1e-12)

    t = RigidTransform.from_yaw(1.1, (-20.0, 5.0, 0.3))
    moved = crop_object(PointCloud(transform_points(t, cloud.points)), transform_box(t, box))
    np.testing.assert_allclose(moved.points, crop.points, atol=1e-9)


def test_fdc_summary():
    summary = fdc_summary([[("car", 0.8), ("car", 0.6), ("pedestrian", 0.9)], [("truck", 0.5)]])
    assert summary.per_category["car"] == pytest.approx(0.7)
    assert summary.per_category["pedestrian"] == 0.9
    assert summary.per_category["truck"] == 0.5
    assert summary.per_category["bus"] == 0.0
    assert summary.boxes_per_frame == 2.0
    assert summary.frames == 2


def test_fdc_rejects_bad_confidence():
    with pytest.raises(DataError) as excinfo:
        fdc_summary([[], [("car", 1.5)]])
    assert excinfo.value.index == 1
