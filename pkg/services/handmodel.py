"""
Hand skeleton, kinematic hand model and capsule surface proxy.

The skeleton follows the 21-joint OpenPose ordering: the wrist, then four
joints per finger (thumb, index, middle, ring, pinky) from the knuckle out to
the fingertip. Twenty phalange segments connect the wrist to each knuckle and
consecutive finger joints.

Key Features:
- KinematicHand: 6 shape scales and a 26-value pose vector
- forward_kinematics(): chained per-finger rotations from a rest template
- fit_hand(): palm alignment followed by bounded trust-region fitting
- HandProxy: 20 capsules plus a palm slab with exact signed distance
- proxy_surface_points(): canonical surface samples with stable ids

Pose vector layout:
- theta[0:3]  root rotation vector
- theta[3:6]  root translation (meters)
- theta[6:26] five fingers x (mcp flexion, mcp abduction, pip flexion, dip flexion), radians

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import trimesh
from scipy.optimize import least_squares
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from services.errors import FitDivergedError, HandModelError, ParameterRangeError
from services.geom import RigidTransform, point_segment_distance

logger = logging.getLogger(__name__)

# =============================================================================
# SKELETON LAYOUT
# =============================================================================

FINGERS = ("thumb", "index", "middle", "ring", "pinky")

JOINT_NAMES = ("wrist",) + tuple(
    f"{finger}_{joint}"
    for finger, joints in zip(FINGERS, [("cmc", "mcp", "ip", "tip")] + [("mcp", "pip", "dip", "tip")] * 4)
    for joint in joints
)

PHALANGES: Tuple[Tuple[int, int], ...] = tuple(
    pair
    for f in range(5)
    for pair in ((0, 1 + 4 * f), (1 + 4 * f, 2 + 4 * f), (2 + 4 * f, 3 + 4 * f), (3 + 4 * f, 4 + 4 * f))
)

NUM_JOINTS = 21
NUM_PHALANGES = 20
PALM_PART = 20
PALM_JOINTS = (0, 1, 5, 9, 13, 17)
FINGERTIP_PHALANGES = (3, 7, 11, 15, 19)
MIDDLE_KNUCKLE = 9

HANDEDNESS = ("right", "left")

# =============================================================================
# REST TEMPLATE (right hand; palm faces -z, fingers point along +y)
# =============================================================================

KNUCKLE_OFFSETS = np.array([
    [-0.020, 0.025, -0.010],
    [-0.025, 0.090, 0.000],
    [-0.005, 0.095, 0.000],
    [0.013, 0.090, 0.000],
    [0.030, 0.080, 0.000],
])

BONE_LENGTHS = np.array([
    [0.040, 0.032, 0.028],
    [0.045, 0.025, 0.022],
    [0.050, 0.030, 0.024],
    [0.046, 0.028, 0.023],
    [0.036, 0.021, 0.020],
])

# finger base orientation: yaw about z then pitch about x (degrees)
BASE_YAW_DEG = np.array([50.0, 8.0, 0.0, -6.0, -12.0])
BASE_PITCH_DEG = np.array([-20.0, 0.0, 0.0, 0.0, 0.0])

FLEXION_LIMITS = np.radians([-30.0, 110.0])
ABDUCTION_LIMITS = np.radians([-30.0, 30.0])
LIMIT_TOLERANCE = 1e-9
DIVERGENCE_STEPS = 10

NUM_THETA = 26
NUM_BETA = 6

_MIRROR = np.diag([-1.0, 1.0, 1.0])


def _rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_BASE_ROTATIONS = [
    _rot_z(np.radians(yaw)) @ _rot_x(np.radians(pitch)) for yaw, pitch in zip(BASE_YAW_DEG, BASE_PITCH_DEG)
]


def angle_limits() -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds for the 20 finger angles."""
    lower = np.tile([FLEXION_LIMITS[0], ABDUCTION_LIMITS[0], FLEXION_LIMITS[0], FLEXION_LIMITS[0]], 5)
    upper = np.tile([FLEXION_LIMITS[1], ABDUCTION_LIMITS[1], FLEXION_LIMITS[1], FLEXION_LIMITS[1]], 5)
    return lower, upper


# =============================================================================
# DOMAIN TYPES
# =============================================================================

def _check_handedness(handedness: str) -> None:
    if handedness not in HANDEDNESS:
        raise HandModelError(f"handedness must be one of {HANDEDNESS}, got {handedness!r}")


@dataclass(frozen=True, eq=False)
class HandSkeleton:
    """21 joints in meters plus handedness."""

    joints: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        joints = np.array(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 3):
            raise HandModelError(f"expected {NUM_JOINTS}x3 joints, got shape {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise HandModelError("skeleton joints contain NaN or infinite values")
        _check_handedness(self.handedness)
        joints.setflags(write=False)
        object.__setattr__(self, "joints", joints)

    @property
    def segments(self) -> np.ndarray:
        """(20, 2, 3) phalange endpoints."""
        pairs = np.array(PHALANGES)
        return np.stack([self.joints[pairs[:, 0]], self.joints[pairs[:, 1]]], axis=1)

    def transformed(self, transform: RigidTransform) -> "HandSkeleton":
        return HandSkeleton(transform.apply(self.joints), self.handedness)

    def palm_facing(self) -> np.ndarray:
        """Unit normal of the palm plane pointing out of the palm side."""
        return _palm_normal(self.joints, self.handedness)


@dataclass(frozen=True, eq=False)
class KinematicHand:
    """
    Shape and pose parameters of the kinematic hand.

    Attributes:
        beta: global scale followed by the five per-finger bone-length scales
        theta: root rotation vector, root translation, 20 finger angles
        handedness: "right" or "left" (left mirrors the template in x)
    """

    beta: np.ndarray = field(default_factory=lambda: np.ones(NUM_BETA))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THETA))
    handedness: str = "right"

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if beta.shape != (NUM_BETA,) or theta.shape != (NUM_THETA,):
            raise HandModelError(f"expected {NUM_BETA} shape and {NUM_THETA} pose parameters")
        _check_handedness(self.handedness)
        beta.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    @property
    def root(self) -> RigidTransform:
        return RigidTransform.from_rotvec(self.theta[0:3], self.theta[3:6])

    @property
    def finger_angles(self) -> np.ndarray:
        return self.theta[6:].reshape(5, 4)

    def validate(self) -> None:
        """Raise ParameterRangeError naming every out-of-range parameter."""
        if not np.all(np.isfinite(self.beta)) or not np.all(np.isfinite(self.theta)):
            raise ParameterRangeError("non-finite hand parameters", np.flatnonzero(
                ~np.isfinite(np.concatenate([self.theta, self.beta]))))
        bad_beta = np.flatnonzero(self.beta <= 0)
        if len(bad_beta):
            raise ParameterRangeError("shape scales must be positive", bad_beta)
        lower, upper = angle_limits()
        angles = self.theta[6:]
        bad = np.flatnonzero((angles < lower - LIMIT_TOLERANCE) | (angles > upper + LIMIT_TOLERANCE))
        if len(bad):
            raise ParameterRangeError("pose angles outside joint limits", bad + 6)


# =============================================================================
# FORWARD KINEMATICS
# =============================================================================

def _local_joints(beta: np.ndarray, angles: np.ndarray, handedness: str) -> np.ndarray:
    """Joints in the hand frame before the root transform."""
    scale = beta[0]
    joints = np.zeros((NUM_JOINTS, 3))
    angles = np.asarray(angles).reshape(5, 4)
    for f in range(5):
        flex_mcp, abd_mcp, flex_pip, flex_dip = angles[f]
        base = 1 + 4 * f
        position = scale * KNUCKLE_OFFSETS[f]
        joints[base] = position
        rotation = _BASE_ROTATIONS[f] @ _rot_z(abd_mcp) @ _rot_x(-flex_mcp)
        for bone, flex in enumerate((None, flex_pip, flex_dip)):
            if flex is not None:
                rotation = rotation @ _rot_x(-flex)
            position = position + scale * beta[1 + f] * BONE_LENGTHS[f, bone] * rotation[:, 1]
            joints[base + 1 + bone] = position
    if handedness == "left":
        joints = joints @ _MIRROR
    return joints


def forward_kinematics(hand: KinematicHand) -> HandSkeleton:
    """
    Compute the 21 joints of a kinematic hand.

    Raises:
        ParameterRangeError: parameters outside the shape/pose limits
    """
    hand.validate()
    local = _local_joints(hand.beta, hand.theta[6:], hand.handedness)
    return HandSkeleton(hand.root.apply(local), hand.handedness)


def rest_template(handedness: str = "right", beta: Optional[Sequence[float]] = None) -> np.ndarray:
    """Rest-pose joints (theta = 0) in the hand frame."""
    beta = np.ones(NUM_BETA) if beta is None else np.asarray(beta, dtype=np.float64)
    return _local_joints(beta, np.zeros(20), handedness)


# =============================================================================
# FITTING
# =============================================================================

@dataclass(frozen=True)
class FitResult:
    hand: KinematicHand
    skeleton: HandSkeleton
    residuals: np.ndarray  # per-joint distance to the target, meters
    cost: float
    evaluations: int


def _rigid_align(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation and translation taking source points onto target points."""
    source_center = source.mean(axis=0)
    target_center = target.mean(axis=0)
    rotation, _ = Rotation.align_vectors(target - target_center, source - source_center)
    matrix = rotation.as_matrix()
    return matrix, target_center - matrix @ source_center


def _central_jacobian(model, x: np.ndarray, step: float = np.finfo(float).eps ** (1.0 / 3.0)) -> np.ndarray:
    h = step * np.maximum(1.0, np.abs(x))
    columns = []
    for i in range(len(x)):
        offset = np.zeros_like(x)
        offset[i] = h[i]
        columns.append((model(x + offset) - model(x - offset)) / (2.0 * h[i]))
    return np.column_stack(columns)


def fit_hand(target: HandSkeleton, sigma: float = 10.0, max_evaluations: int = 4000) -> FitResult:
    """
    Fit shape and pose parameters to a target skeleton.

    The root is initialized by rigidly aligning the rest template's wrist and
    five palm joints to the target; the remaining problem is solved in the
    aligned frame so the fit is equivariant to rigid motion of the target.
    The objective is the sum of squared joint errors in millimetres plus
    ||(beta - 1) / sigma||^2.

    Raises:
        FitDivergedError: the objective rose on DIVERGENCE_STEPS consecutive
            solver iterations, the solver ended above its starting cost, or
            it produced non-finite values
    """
    handedness = target.handedness
    template = rest_template(handedness)
    palm = list(PALM_JOINTS)
    init_rotation, init_translation = _rigid_align(template[palm], target.joints[palm])
    # express the target in the aligned hand frame
    local_target = (target.joints - init_translation) @ init_rotation

    lower_angles, upper_angles = angle_limits()
    lower = np.concatenate([np.full(NUM_BETA, 0.2), np.full(6, -np.inf), lower_angles])
    upper = np.concatenate([np.full(NUM_BETA, 5.0), np.full(6, np.inf), upper_angles])
    x0 = np.concatenate([np.ones(NUM_BETA), np.zeros(6), np.zeros(20)])
    trace: List[float] = []
    rises = 0

    def model(x: np.ndarray) -> np.ndarray:
        beta, rotvec, translation, angles = x[:6], x[6:9], x[9:12], x[12:]
        joints = _local_joints(beta, angles, handedness)
        joints = Rotation.from_rotvec(rotvec).apply(joints) + translation
        return np.concatenate([((joints - local_target) * 1000.0).ravel(), (beta - 1.0) / sigma])

    # the solver calls this only at trial steps; Jacobian columns go through model
    def residuals(x: np.ndarray) -> np.ndarray:
        nonlocal rises
        r = model(x)
        cost = 0.5 * float(r @ r)
        rises = rises + 1 if trace and not cost <= trace[-1] else 0
        trace.append(cost)
        if rises >= DIVERGENCE_STEPS:
            raise FitDivergedError(f"hand fit objective rose on {rises} consecutive iterations", trace)
        return r

    initial_cost = 0.5 * float(np.sum(residuals(x0) ** 2))
    result = least_squares(residuals, x0, jac=lambda x: _central_jacobian(model, x), bounds=(lower, upper),
                           method="trf", x_scale="jac", ftol=1e-14, xtol=1e-14, gtol=1e-14,
                           max_nfev=max_evaluations)
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.cost) or result.cost > initial_cost + 1e-12:
        raise FitDivergedError(f"hand fit diverged (cost {result.cost:.6g} from {initial_cost:.6g})", trace)
    if result.status == 0:
        logger.warning(f"fit_hand: evaluation budget exhausted at cost {result.cost:.6g}")

    beta, rotvec, translation, angles = result.x[:6], result.x[6:9], result.x[9:12], result.x[12:]
    root_rotation = init_rotation @ Rotation.from_rotvec(rotvec).as_matrix()
    root_translation = init_rotation @ translation + init_translation
    theta = np.concatenate([Rotation.from_matrix(root_rotation).as_rotvec(), root_translation,
                            np.clip(angles, lower_angles, upper_angles)])
    hand = KinematicHand(beta, theta, handedness)
    skeleton = forward_kinematics(hand)
    errors = np.linalg.norm(skeleton.joints - target.joints, axis=1)
    logger.info(f"fit_hand: cost {result.cost:.6g} after {result.nfev} evaluations, "
                f"mean joint error {errors.mean() * 1000:.4f} mm")
    return FitResult(hand, skeleton, errors, float(result.cost), int(result.nfev))


# =============================================================================
# CAPSULE PROXY
# =============================================================================

@dataclass(frozen=True)
class ProxyConfig:
    """Proxy dimensions in meters and surface-sampling density."""

    palm_bone_radius: float = 0.010
    proximal_radius: float = 0.010
    middle_radius: float = 0.0085
    distal_radius: float = 0.007
    palm_thickness: float = 0.025
    ring_samples: int = 8
    axial_samples: int = 4
    palm_samples: int = 60

    def radii(self) -> np.ndarray:
        per_finger = [self.palm_bone_radius, self.proximal_radius, self.middle_radius, self.distal_radius]
        values = np.tile(per_finger, 5)
        if np.any(values <= 0) or self.palm_thickness <= 0:
            raise HandModelError("proxy radii and palm thickness must be positive")
        return values


def _palm_normal(joints: np.ndarray, handedness: str) -> np.ndarray:
    palm = joints[list(PALM_JOINTS)]
    _, _, vt = np.linalg.svd(palm - palm.mean(axis=0))
    normal = vt[2]
    facing = np.cross(joints[5] - joints[0], joints[17] - joints[0])
    if handedness == "left":
        facing = -facing
    if normal @ facing < 0:
        normal = -normal
    return normal


@dataclass(frozen=True, eq=False)
class HandProxy:
    """
    Capsule-and-slab stand-in for the hand surface.

    Part ids 0..19 are the phalange capsules in PHALANGES order; 20 is the palm.
    """

    segments: np.ndarray
    radii: np.ndarray
    palm_points: np.ndarray
    palm_normal: np.ndarray
    palm_thickness: float
    handedness: str
    palm_planes: Optional[np.ndarray]
    palm_triangles: Optional[np.ndarray]

    @property
    def has_palm(self) -> bool:
        return self.palm_planes is not None


def build_proxy(skeleton: HandSkeleton, config: ProxyConfig = ProxyConfig()) -> HandProxy:
    """Capsules along the phalanges plus the extruded palm hull."""
    radii = config.radii()
    normal = _palm_normal(skeleton.joints, skeleton.handedness)
    palm = skeleton.joints[list(PALM_JOINTS)]
    offset = 0.5 * config.palm_thickness * normal
    planes = triangles = None
    try:
        hull = ConvexHull(np.vstack([palm + offset, palm - offset]))
        planes = hull.equations.copy()
        triangles = hull.points[hull.simplices]
    except QhullError:
        logger.warning("build_proxy: palm joints are degenerate, proxy has no palm slab")
    return HandProxy(skeleton.segments.copy(), radii, palm.copy(), normal, config.palm_thickness,
                     skeleton.handedness, planes, triangles)


def _palm_distance(proxy: HandProxy, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Signed distance and closest surface point for the palm slab."""
    plane_distance = points @ proxy.palm_planes[:, :3].T + proxy.palm_planes[:, 3]
    deepest = np.argmax(plane_distance, axis=1)
    signed = plane_distance[np.arange(len(points)), deepest]
    closest = points - signed[:, None] * proxy.palm_planes[deepest, :3]
    outside = np.flatnonzero(signed > 0)
    if len(outside):
        k = len(proxy.palm_triangles)
        query = np.repeat(points[outside], k, axis=0)
        tris = np.tile(proxy.palm_triangles, (len(outside), 1, 1))
        candidates = trimesh.triangles.closest_point(tris, query).reshape(len(outside), k, 3)
        gaps = np.linalg.norm(candidates - points[outside, None, :], axis=2)
        best = np.argmin(gaps, axis=1)
        signed[outside] = gaps[np.arange(len(outside)), best]
        closest[outside] = candidates[np.arange(len(outside)), best]
    return signed, closest


def _capsule_distance(proxy: HandProxy, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-capsule signed distance (n,20) and closest axis points (n,20,3)."""
    distance, axis_points = point_segment_distance(
        points[:, None, :], proxy.segments[None, :, 0], proxy.segments[None, :, 1])
    return distance - proxy.radii[None, :], axis_points


def proxy_closest(proxy: HandProxy, points, chunk: int = 8192) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Closest proxy surface point for each query.

    Returns:
        (closest points (n,3), signed distance (n,), part id (n,)); ties go to
        the lowest part id
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    closest = np.empty_like(points)
    signed = np.empty(len(points))
    part = np.empty(len(points), dtype=np.int64)
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        rows = np.arange(len(block))
        distances, axis_points = _capsule_distance(proxy, block)
        if proxy.has_palm:
            palm_signed, palm_closest = _palm_distance(proxy, block)
            distances = np.concatenate([distances, palm_signed[:, None]], axis=1)
        best = np.argmin(distances, axis=1)
        block_closest = np.empty_like(block)

        capsule_rows = rows[best < NUM_PHALANGES]
        capsules = best[capsule_rows]
        axis_point = axis_points[capsule_rows, capsules]
        direction = block[capsule_rows] - axis_point
        norms = np.linalg.norm(direction, axis=1)
        for i in np.flatnonzero(norms <= 1e-15):
            a, b = proxy.segments[capsules[i]]
            axis = (b - a) / max(np.linalg.norm(b - a), 1e-12)
            direction[i] = _perpendicular_frame(axis, proxy.palm_normal)[0]
            norms[i] = 1.0
        block_closest[capsule_rows] = axis_point + (proxy.radii[capsules] / norms)[:, None] * direction
        if proxy.has_palm:
            palm_rows = rows[best == PALM_PART]
            block_closest[palm_rows] = palm_closest[palm_rows]

        closest[start:start + len(block)] = block_closest
        signed[start:start + len(block)] = distances[rows, best]
        part[start:start + len(block)] = best
    return closest, signed, part


def proxy_signed_distance(proxy: HandProxy, points, chunk: int = 8192) -> np.ndarray:
    """Minimum over capsules and palm slab of the signed distance (negative inside)."""
    query = np.asarray(points, dtype=np.float64)
    batch = np.atleast_2d(query)
    result = np.empty(len(batch))
    for start in range(0, len(batch), chunk):
        block = batch[start:start + chunk]
        distance = _capsule_distance(proxy, block)[0].min(axis=1)
        if proxy.has_palm:
            distance = np.minimum(distance, _palm_distance(proxy, block)[0])
        result[start:start + chunk] = distance
    return result[0] if query.ndim == 1 else result


def part_axis_distances(proxy: HandProxy, points) -> np.ndarray:
    """
    (n, 21) distances to each phalange segment and to the palm mid-slab.

    The palm column is the slab distance plus half its thickness, floored at
    zero, so it is measured from the palm's middle surface like the phalange
    columns are measured from the bones. It is inf for proxies without a palm.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    distances = np.full((len(points), NUM_PHALANGES + 1), np.inf)
    distances[:, :NUM_PHALANGES] = point_segment_distance(
        points[:, None, :], proxy.segments[None, :, 0], proxy.segments[None, :, 1])[0]
    if proxy.has_palm and len(points):
        palm_signed = _palm_distance(proxy, points)[0]
        distances[:, PALM_PART] = np.maximum(palm_signed + 0.5 * proxy.palm_thickness, 0.0)
    return distances


def _perpendicular_frame(axis: np.ndarray, reference: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    e1 = reference - (reference @ axis) * axis
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.cross(axis, [1.0, 0.0, 0.0])
        if np.linalg.norm(e1) < 1e-9:
            e1 = np.cross(axis, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def proxy_surface_points(proxy: HandProxy, config: ProxyConfig = ProxyConfig(),
                         union_only: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Canonical samples on the proxy surface.

    Sample k always sits at the same place relative to the same part, so ids
    correspond across hands. Each capsule gets rings along its cylinder and a
    pole plus a ring on its distal cap; the palm gets points on both faces of
    the slab at fixed convex combinations of the palm joints.

    Args:
        union_only: drop samples buried inside another part (penetration
            statistics need the outer surface only)

    Returns:
        (points (P,3), part ids (P,), outward normals (P,3))
    """
    points, parts, normals = [], [], []
    phis = 2.0 * np.pi * np.arange(config.ring_samples) / config.ring_samples
    ts = (np.arange(config.axial_samples) + 0.5) / config.axial_samples
    for k in range(NUM_PHALANGES):
        a, b = proxy.segments[k]
        r = proxy.radii[k]
        axis = (b - a) / max(np.linalg.norm(b - a), 1e-12)
        e1, e2 = _perpendicular_frame(axis, proxy.palm_normal)
        ring = np.cos(phis)[:, None] * e1 + np.sin(phis)[:, None] * e2
        side = (a + ts[:, None, None] * (b - a) + r * ring[None]).reshape(-1, 3)
        cap_dirs = np.vstack([axis, np.cos(np.pi / 4) * axis + np.sin(np.pi / 4) * ring])
        cap = b + r * cap_dirs
        points += [side, cap]
        normals += [np.tile(ring, (len(ts), 1)), cap_dirs]
        parts.append(np.full(len(side) + len(cap), k))
    if proxy.has_palm:
        weights = np.random.default_rng(0).dirichlet(np.ones(len(PALM_JOINTS)), size=config.palm_samples)
        inner = weights @ proxy.palm_points
        for sign in (1.0, -1.0):
            direction = sign * proxy.palm_normal
            # march to the hull boundary along the slab normal
            numer = -(inner @ proxy.palm_planes[:, :3].T + proxy.palm_planes[:, 3])
            denom = proxy.palm_planes[:, :3] @ direction
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(denom[None, :] > 1e-12, numer / denom[None, :], np.inf)
            points.append(inner + steps.min(axis=1)[:, None] * direction)
            normals.append(np.tile(direction, (len(inner), 1)))
            parts.append(np.full(len(inner), PALM_PART))
    points = np.vstack(points)
    parts = np.concatenate(parts)
    normals = np.vstack(normals)
    if union_only:
        keep = proxy_signed_distance(proxy, points) >= -1e-9
        points, parts, normals = points[keep], parts[keep], normals[keep]
    return points, parts, normals
