"""
Kinematic hand, fitting and capsule proxy tests.
"""

import itertools

import numpy as np
import pytest

import services.handmodel as handmodel
from services.errors import FitDivergedError, HandModelError, ParameterRangeError
from services.geom import RigidTransform
from services.handmodel import (
    BONE_LENGTHS,
    FINGERTIP_PHALANGES,
    KNUCKLE_OFFSETS,
    NUM_BETA,
    NUM_PHALANGES,
    NUM_THETA,
    PHALANGES,
    HandSkeleton,
    KinematicHand,
    ProxyConfig,
    angle_limits,
    build_proxy,
    fit_hand,
    forward_kinematics,
    part_axis_distances,
    proxy_closest,
    proxy_signed_distance,
    proxy_surface_points,
    rest_template,
)


def random_hand(rng: np.random.Generator, handedness: str = "right") -> KinematicHand:
    """In-range parameters away from the joint limits."""
    lower, upper = angle_limits()
    angles = lower + (upper - lower) * rng.uniform(0.25, 0.55, size=20)
    theta = np.concatenate([rng.normal(scale=0.5, size=3), rng.normal(scale=0.1, size=3), angles])
    beta = rng.uniform(0.85, 1.15, size=NUM_BETA)
    return KinematicHand(beta, theta, handedness)


# =============================================================================
# SKELETON AND FORWARD KINEMATICS
# =============================================================================

def test_skeleton_rejects_wrong_shape():
    with pytest.raises(HandModelError):
        HandSkeleton(np.zeros((20, 3)))


def test_skeleton_rejects_nan():
    joints = np.zeros((21, 3))
    joints[4, 1] = np.nan
    with pytest.raises(HandModelError):
        HandSkeleton(joints)


def test_skeleton_rejects_unknown_handedness():
    with pytest.raises(HandModelError):
        HandSkeleton(np.zeros((21, 3)), "both")


def test_phalanges_connect_wrist_and_finger_chains():
    assert len(PHALANGES) == NUM_PHALANGES
    assert [a for a, _ in PHALANGES[::4]] == [0] * 5
    for f in range(5):
        assert PHALANGES[4 * f + 3] == (3 + 4 * f, 4 + 4 * f)


def test_rest_pose_matches_template(rest_hand):
    np.testing.assert_array_equal(rest_hand.joints, rest_template())
    np.testing.assert_array_equal(rest_hand.joints[0], np.zeros(3))


def test_global_scale_doubles_wrist_relative_distances(rest_hand):
    beta = np.ones(NUM_BETA)
    beta[0] = 2.0
    doubled = forward_kinematics(KinematicHand(beta=beta))
    np.testing.assert_allclose(np.linalg.norm(doubled.joints - doubled.joints[0], axis=1),
                               2.0 * np.linalg.norm(rest_hand.joints - rest_hand.joints[0], axis=1), atol=1e-12)


def test_bone_lengths_follow_shape_scales():
    rng = np.random.default_rng(0)
    for _ in range(10):
        hand = random_hand(rng)
        joints = forward_kinematics(hand).joints
        scale = hand.beta[0]
        for f in range(5):
            base = 1 + 4 * f
            assert np.linalg.norm(joints[base] - joints[0]) == pytest.approx(
                scale * np.linalg.norm(KNUCKLE_OFFSETS[f]), abs=1e-9)
            for bone in range(3):
                length = np.linalg.norm(joints[base + bone + 1] - joints[base + bone])
                assert length == pytest.approx(scale * hand.beta[1 + f] * BONE_LENGTHS[f, bone], abs=1e-9)


def test_root_transform_moves_skeleton_rigidly():
    rng = np.random.default_rng(1)
    hand = random_hand(rng)
    local_theta = hand.theta.copy()
    local_theta[:6] = 0.0
    local = forward_kinematics(KinematicHand(hand.beta, local_theta))
    np.testing.assert_allclose(forward_kinematics(hand).joints, hand.root.apply(local.joints), atol=1e-12)


def test_left_hand_mirrors_right():
    right = rest_template("right")
    left = rest_template("left")
    np.testing.assert_allclose(left, right * np.array([-1.0, 1.0, 1.0]))


def test_out_of_range_angle_reports_index():
    theta = np.zeros(NUM_THETA)
    theta[6 + 4 * 2] = np.radians(150.0)
    theta[6 + 4 * 3 + 1] = np.radians(-45.0)
    with pytest.raises(ParameterRangeError) as info:
        forward_kinematics(KinematicHand(theta=theta))
    assert list(info.value.indices) == [14, 19]


def test_non_positive_shape_scale_rejected():
    beta = np.ones(NUM_BETA)
    beta[3] = 0.0
    with pytest.raises(ParameterRangeError):
        forward_kinematics(KinematicHand(beta=beta))


# =============================================================================
# FITTING
# =============================================================================

@pytest.mark.parametrize("seed", range(5))
def test_fit_recovers_generated_hand(seed):
    rng = np.random.default_rng(100 + seed)
    target = forward_kinematics(random_hand(rng, "right" if seed % 2 == 0 else "left"))
    fit = fit_hand(target)
    assert fit.residuals.max() < 1e-6
    np.testing.assert_allclose(fit.skeleton.joints, target.joints, atol=1e-6)
    assert fit.hand.handedness == target.handedness


def test_fit_absorbs_rigid_motion_of_rest_template():
    transform = RigidTransform.from_rotvec([0.4, -1.1, 0.3], [0.2, -0.1, 0.5])
    target = HandSkeleton(transform.apply(rest_template()))
    fit = fit_hand(target)
    assert fit.residuals.max() < 1e-9
    np.testing.assert_allclose(fit.hand.beta, np.ones(NUM_BETA), atol=1e-6)


def test_fit_cannot_reproduce_off_manifold_joint(rest_hand):
    joints = rest_hand.joints.copy()
    joints[12] += [0.005, 0.0, 0.0]
    fit = fit_hand(HandSkeleton(joints))
    assert fit.residuals.mean() > 0.0
    assert not np.allclose(fit.skeleton.joints, joints, atol=1e-6)
    assert fit.cost >= 0.0


def test_fit_is_equivariant_to_rigid_motion(rest_hand):
    joints = rest_hand.joints.copy()
    joints[8] += [0.0, 0.0, 0.004]
    transform = RigidTransform.from_rotvec([0.0, 0.7, -0.2], [0.3, 0.1, -0.2])
    base = fit_hand(HandSkeleton(joints))
    moved = fit_hand(HandSkeleton(transform.apply(joints)))
    np.testing.assert_allclose(moved.residuals, base.residuals, atol=1e-8)
    np.testing.assert_allclose(moved.skeleton.joints, transform.apply(base.skeleton.joints), atol=1e-8)


def test_fit_hand_reports_a_rising_objective(monkeypatch, rest_hand):
    calls = itertools.count(1)
    local_joints = handmodel._local_joints
    drift = np.linspace(-1.0, 1.0, 63).reshape(21, 3) * 1e-3

    def drifting(beta, angles, handedness):
        return local_joints(beta, angles, handedness) + drift * 2.0 ** next(calls)

    monkeypatch.setattr(handmodel, "_local_joints", drifting)
    with pytest.raises(FitDivergedError, match="consecutive") as info:
        fit_hand(rest_hand)
    trace = np.array(info.value.trace)
    assert len(trace) > handmodel.DIVERGENCE_STEPS
    assert np.all(np.diff(trace[-handmodel.DIVERGENCE_STEPS - 1:]) > 0)


# =============================================================================
# PROXY
# =============================================================================

@pytest.fixture(scope="module")
def rest_proxy(rest_hand):
    return build_proxy(rest_hand)


def test_proxy_radii_taper_towards_fingertips():
    radii = ProxyConfig().radii()
    assert radii.shape == (NUM_PHALANGES,)
    assert radii[FINGERTIP_PHALANGES[0]] == pytest.approx(0.007)
    assert radii.max() == pytest.approx(0.010)


def test_proxy_rejects_non_positive_radius(rest_hand):
    with pytest.raises(HandModelError):
        build_proxy(rest_hand, ProxyConfig(distal_radius=0.0))


def test_proxy_segments_coincide_with_phalanges(rest_hand, rest_proxy):
    np.testing.assert_array_equal(rest_proxy.segments, rest_hand.segments)
    assert rest_proxy.has_palm


def test_point_on_capsule_axis_is_minus_radius(rest_proxy):
    k = FINGERTIP_PHALANGES[2]
    a, b = rest_proxy.segments[k]
    assert proxy_signed_distance(rest_proxy, (a + b) / 2.0) == pytest.approx(-rest_proxy.radii[k], abs=1e-12)


def test_point_off_capsule_side_is_gap(rest_proxy):
    k = FINGERTIP_PHALANGES[2]
    a, b = rest_proxy.segments[k]
    axis = (b - a) / np.linalg.norm(b - a)
    away = np.array([0.0, 0.0, -1.0])
    away -= (away @ axis) * axis
    away /= np.linalg.norm(away)
    point = (a + b) / 2.0 + (rest_proxy.radii[k] + 0.003) * away
    assert proxy_signed_distance(rest_proxy, point) == pytest.approx(0.003, abs=1e-12)


def test_signed_distance_is_one_lipschitz(rest_proxy):
    rng = np.random.default_rng(2)
    p = rng.uniform([-0.08, -0.05, -0.08], [0.08, 0.22, 0.08], size=(2000, 3))
    q = p + rng.normal(scale=0.01, size=p.shape)
    gap = np.abs(proxy_signed_distance(rest_proxy, p) - proxy_signed_distance(rest_proxy, q))
    assert np.all(gap <= np.linalg.norm(p - q, axis=1) + 1e-12)


def test_closest_point_agrees_with_signed_distance(rest_proxy):
    rng = np.random.default_rng(3)
    points = rng.uniform([-0.08, -0.05, -0.08], [0.08, 0.22, 0.08], size=(500, 3))
    closest, signed, part = proxy_closest(rest_proxy, points)
    np.testing.assert_allclose(signed, proxy_signed_distance(rest_proxy, points), atol=1e-12)
    outside = signed > 0
    np.testing.assert_allclose(np.linalg.norm(points[outside] - closest[outside], axis=1), signed[outside],
                               atol=1e-9)
    np.testing.assert_allclose(proxy_signed_distance(rest_proxy, closest), 0.0, atol=1e-9)
    assert part.min() >= 0 and part.max() <= NUM_PHALANGES


def test_union_surface_samples_lie_on_proxy(rest_proxy):
    points, parts, normals = proxy_surface_points(rest_proxy, union_only=True)
    assert len(points) == len(parts) == len(normals)
    np.testing.assert_allclose(proxy_signed_distance(rest_proxy, points), 0.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


def test_surface_sample_ids_are_stable_across_hands(rest_proxy):
    rng = np.random.default_rng(4)
    other = build_proxy(forward_kinematics(random_hand(rng)))
    _, parts_a, _ = proxy_surface_points(rest_proxy)
    _, parts_b, _ = proxy_surface_points(other)
    np.testing.assert_array_equal(parts_a, parts_b)


def test_part_axis_distances_shape(rest_proxy, rest_hand):
    distances = part_axis_distances(rest_proxy, rest_hand.joints)
    assert distances.shape == (21, NUM_PHALANGES + 1)
    assert distances[0, 0] == pytest.approx(0.0)
    assert np.all(distances >= 0.0)
