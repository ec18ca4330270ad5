"""
Hand-pose feature family tests.
"""

import numpy as np
import pytest

from services.errors import FeatureError
from services.features import (
    FAMILIES,
    FAMILY_DIMS,
    compute_features,
    dropout_count,
    mesh_features,
    occlusion_dropout,
    relative_joints,
    simple_joints,
    skeleton_features,
    voxel_features,
    voxel_normals,
)
from services.geom import PointCloud, RigidTransform, point_segment_distance, sample_surface, voxelize
from services.handmodel import NUM_PHALANGES, PHALANGES, HandSkeleton, build_proxy, proxy_signed_distance

MOTION = RigidTransform.from_rotvec([0.3, -0.8, 1.2], [0.05, -0.2, 0.11])


@pytest.fixture(scope="module")
def cloud(synthetic_grasp):
    return sample_surface(synthetic_grasp.mesh, 300, seed=0)


def moved(cloud: PointCloud, hands, transform: RigidTransform = MOTION):
    return cloud.transformed(transform), [h.transformed(transform) for h in hands]


def offset_hand(rest_hand, shift=(0.3, 0.2, 0.1)) -> HandSkeleton:
    return HandSkeleton(rest_hand.joints + np.asarray(shift), rest_hand.handedness)


# =============================================================================
# FAMILIES
# =============================================================================

@pytest.mark.parametrize("family", FAMILIES)
def test_family_dimensionality(family, cloud, synthetic_grasp):
    features = compute_features(family, cloud, synthetic_grasp.hands)
    assert features.values.shape == (len(cloud), FAMILY_DIMS[family])
    assert features.dims == FAMILY_DIMS[family]


def test_simple_joints_rows_are_the_joints(cloud, synthetic_grasp):
    features = simple_joints(cloud, synthetic_grasp.hands)
    expected = synthetic_grasp.hands[0].joints.ravel()
    np.testing.assert_array_equal(features.values, np.tile(expected, (len(cloud), 1)))


def test_simple_joints_follow_rigid_motion(cloud, synthetic_grasp):
    points, hands = moved(cloud, synthetic_grasp.hands)
    features = simple_joints(points, hands).values[0].reshape(21, 3)
    np.testing.assert_allclose(features, MOTION.apply(synthetic_grasp.hands[0].joints), atol=1e-12)


def test_points_use_the_hand_with_the_closest_joint(rest_hand):
    left = HandSkeleton(rest_hand.joints * [-1.0, 1.0, 1.0] + [0.4, 0.0, 0.0], "left")
    points = np.vstack([rest_hand.joints[8] + 0.001, left.joints[8] + 0.001])
    features = simple_joints(points, [rest_hand, left])
    assert features.hand_index.tolist() == [0, 1]
    np.testing.assert_array_equal(features.values[1], left.joints.ravel())


def test_relative_vector_vanishes_at_a_joint(rest_hand):
    hand = offset_hand(rest_hand)
    cloud = PointCloud(hand.joints[[6]], [[0.0, 0.0, 1.0]])
    values = relative_joints(cloud, [hand]).values[0]
    np.testing.assert_array_equal(values[18:21], 0.0)
    np.testing.assert_array_equal(values[63:], [0.0, 0.0, 1.0])


def test_relative_joints_need_normals(rest_hand):
    with pytest.raises(FeatureError):
        relative_joints(np.zeros((3, 3)), [rest_hand])


def test_relative_joints_translation_invariant(cloud, synthetic_grasp):
    shift = RigidTransform(np.eye(3), [0.3, -0.4, 0.25])
    points, hands = moved(cloud, synthetic_grasp.hands, shift)
    np.testing.assert_allclose(relative_joints(points, hands).values,
                               relative_joints(cloud, synthetic_grasp.hands).values, atol=1e-9)


def test_skeleton_perpendicular_example(rest_hand):
    k = 10
    a, b = rest_hand.segments[k]
    axis = (b - a) / np.linalg.norm(b - a)
    normal = np.cross(axis, [1.0, 0.0, 0.0])
    normal /= np.linalg.norm(normal)
    point = (a + b) / 2.0 - normal
    values = skeleton_features(PointCloud([point], [normal]), [rest_hand]).values[0]
    assert values[k] == pytest.approx(1.0, abs=1e-12)
    assert values[NUM_PHALANGES + k] == pytest.approx(1.0, abs=1e-12)


def test_skeleton_matches_brute_force(cloud, synthetic_grasp):
    hand = synthetic_grasp.hands[0]
    values = skeleton_features(cloud, [hand]).values
    for i in range(0, len(cloud), 37):
        for k, (a, b) in enumerate(PHALANGES):
            distance, closest = point_segment_distance(cloud.points[i], hand.joints[a], hand.joints[b])
            cosine = (closest - cloud.points[i]) @ cloud.normals[i] / distance
            assert values[i, k] == pytest.approx(distance, abs=1e-12)
            assert values[i, NUM_PHALANGES + k] == pytest.approx(cosine, abs=1e-9)


def test_skeleton_point_on_segment_has_zero_cosine(rest_hand):
    a, _ = rest_hand.segments[6]
    values = skeleton_features(PointCloud([a], [[0.0, 1.0, 0.0]]), [rest_hand]).values[0]
    assert values[6] == pytest.approx(0.0, abs=1e-15)
    assert values[NUM_PHALANGES + 6] == 0.0


@pytest.mark.parametrize("family", ["skeleton", "mesh"])
def test_rigid_invariance(family, cloud, synthetic_grasp):
    points, hands = moved(cloud, synthetic_grasp.hands)
    np.testing.assert_allclose(compute_features(family, points, hands).values,
                               compute_features(family, cloud, synthetic_grasp.hands).values, atol=1e-9)


def test_mesh_features_layout(cloud, synthetic_grasp):
    hand = synthetic_grasp.hands[0]
    proxy = build_proxy(hand)
    values = mesh_features(cloud, [proxy], [hand]).values
    brute = np.linalg.norm(cloud.points[:, None, :] - hand.joints[None], axis=2)
    np.testing.assert_allclose(values[:, 2:], brute, atol=1e-9)
    np.testing.assert_allclose(values[:, 0], np.maximum(proxy_signed_distance(proxy, cloud.points), 0.0), atol=1e-12)
    assert np.all(np.abs(values[:, 1]) <= 1.0 + 1e-12)


def test_mesh_distance_is_zero_inside_proxy(rest_hand):
    a, b = rest_hand.segments[11]
    values = mesh_features(PointCloud([(a + b) / 2.0], [[0.0, 0.0, 1.0]]), None, [rest_hand]).values[0]
    assert values[0] == 0.0


# =============================================================================
# OCCLUSION DROPOUT
# =============================================================================

def test_dropout_count_is_four():
    assert dropout_count() == 4


def test_dropout_is_seed_deterministic(cloud, synthetic_grasp):
    features = skeleton_features(cloud, synthetic_grasp.hands)
    first = occlusion_dropout(features, synthetic_grasp.hands, seed=7)
    second = occlusion_dropout(features, synthetic_grasp.hands, seed=7)
    assert first.dropout == second.dropout
    np.testing.assert_array_equal(first.values, second.values)


def test_simple_joint_dropout_zeros_twelve_entries(rest_hand):
    hand = offset_hand(rest_hand)
    features = simple_joints(np.zeros((5, 3)), [hand])
    dropped = occlusion_dropout(features, [hand], seed=3)
    changed = features.values != dropped.values
    assert changed.sum(axis=1).tolist() == [12] * 5
    assert np.all(dropped.values[changed] == 0.0)
    assert len(dropped.dropout.dropped_joints[0]) == 4


def test_dropout_removes_the_farthest_joints():
    rng = np.random.default_rng(0)
    joints = np.column_stack([rng.normal(scale=0.01, size=(21, 2)), 0.01 * rng.permutation(21)])
    hand = HandSkeleton(joints)
    features = simple_joints(np.zeros((1, 3)), [hand])
    dropped = occlusion_dropout(features, [hand], seed=0, camera_position=[0.0, 0.0, 10.0])
    assert set(dropped.dropout.dropped_joints[0]) == set(np.argsort(joints[:, 2])[:4].tolist())


def test_skeleton_dropout_touches_only_declared_entries(cloud, synthetic_grasp):
    features = skeleton_features(cloud, synthetic_grasp.hands)
    result = occlusion_dropout(features, synthetic_grasp.hands, seed=11)
    dropped = set(result.dropout.dropped_joints[0])
    touched = [k for k, (a, b) in enumerate(PHALANGES) if a in dropped or b in dropped]
    columns = touched + [NUM_PHALANGES + k for k in touched]
    untouched = np.setdiff1d(np.arange(2 * NUM_PHALANGES), columns)
    np.testing.assert_array_equal(result.values[:, columns], 0.0)
    np.testing.assert_array_equal(result.values[:, untouched], features.values[:, untouched])


def test_mesh_dropout_zeros_joint_distances(cloud, synthetic_grasp):
    features = mesh_features(cloud, None, synthetic_grasp.hands)
    result = occlusion_dropout(features, synthetic_grasp.hands, seed=5)
    dropped = list(result.dropout.dropped_joints[0])
    np.testing.assert_array_equal(result.values[:, [2 + j for j in dropped]], 0.0)
    kept = [2 + j for j in range(21) if j not in dropped]
    np.testing.assert_array_equal(result.values[:, kept], features.values[:, kept])


# =============================================================================
# VOXELS
# =============================================================================

def test_voxel_features(synthetic_grasp):
    grid = voxelize(synthetic_grasp.mesh, resolution=12)
    features = voxel_features(grid, "skeleton", synthetic_grasp.hands, synthetic_grasp.mesh)
    assert features.values.shape == (12 ** 3, FAMILY_DIMS["skeleton"] + 1)
    occupancy = features.values[:, -1]
    interior = grid.interior.ravel()
    surface = grid.surface.ravel()

    assert interior.any()
    np.testing.assert_array_equal(features.values[interior, :-1], 0.0)
    np.testing.assert_array_equal(occupancy[interior], 1.0)
    np.testing.assert_array_equal(occupancy[~grid.occupancy.ravel()], 0.0)
    np.testing.assert_array_equal(features.target_mask, surface)

    normals = voxel_normals(grid, synthetic_grasp.mesh)
    points = PointCloud(grid.centers()[surface], normals[surface])
    np.testing.assert_allclose(features.values[surface, :-1],
                               skeleton_features(points, synthetic_grasp.hands).values, atol=1e-9)
