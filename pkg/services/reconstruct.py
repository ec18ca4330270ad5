"""
Multi-view reconstruction of object-frame hand joints.

A grasp is observed by C calibrated cameras over N frames while the object
(with the hand rigidly attached) moves. Because the object pose of every
frame is known, one set of object-frame joints explains all detections. This
module estimates that set robustly:

1. Sample two frame-camera observations from different frames and
   triangulate a hypothesis (weighted homogeneous DLT).
2. Score the hypothesis by the number of observations whose mean
   reprojection error is under the inlier threshold.
3. Refine the best hypothesis on its inliers by minimizing the Huber cost
   of confidence-whitened reprojection errors (Levenberg-Marquardt).
4. Rescue frames whose object pose was wrong: re-estimate the pose from the
   frame's detections and the fitted joints (PnP) and re-test them.

Key Features:
- Deterministic, permutation-canonical RANSAC sampling
- Per-joint robust refinement with scipy least_squares
- Multi-view PnP with EPnP or stacked linear initialization and robust refinement
- Independent reconstruction of each hand in bi-manual grasps

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from services.errors import (
    PnPError,
    ReconstructionError,
    ReconstructionFailedError,
)
from services.geom import CameraIntrinsics, RigidTransform, project_points
from services.handmodel import HANDEDNESS, NUM_JOINTS, HandSkeleton

logger = logging.getLogger(__name__)

ObservationKey = Tuple[int, int]  # (frame id, camera id)


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclass(frozen=True)
class RansacParams:
    """Robust reconstruction constants (pixels unless stated otherwise)."""

    inlier_px: float = 12.0
    huber_delta: float = 5.0
    iterations: int = 500
    seed: int = 0
    min_inliers: int = 3
    min_inlier_frames: int = 2
    min_ray_angle_deg: float = 1.0
    min_hypothesis_joints: int = 11
    refine_rounds: int = 3
    max_iterations: int = 200


# =============================================================================
# OBSERVATION TYPES
# =============================================================================

@dataclass(frozen=True)
class Camera:
    camera_id: int
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform  # camera_T_world


@dataclass(frozen=True)
class FramePose:
    frame_id: int
    world_T_object: RigidTransform
    valid: bool = True


@dataclass(frozen=True, eq=False)
class Detection2D:
    """21 detected keypoints of one hand in one image; confidence 0 marks a missing joint."""

    frame_id: int
    camera_id: int
    keypoints: np.ndarray
    confidence: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        keypoints = np.array(self.keypoints, dtype=np.float64).reshape(NUM_JOINTS, 2)
        confidence = np.array(self.confidence, dtype=np.float64).reshape(NUM_JOINTS)
        if np.any(~np.isfinite(confidence)) or np.any((confidence < 0) | (confidence > 1)):
            raise ReconstructionError("detection confidences must lie in [0, 1]")
        if self.handedness not in HANDEDNESS:
            raise ReconstructionError(f"unknown handedness {self.handedness!r}")
        missing = ~np.all(np.isfinite(keypoints), axis=1)
        if np.any(confidence[missing] > 0):
            raise ReconstructionError("non-finite keypoint with positive confidence")
        keypoints[missing] = 0.0
        keypoints.setflags(write=False)
        confidence.setflags(write=False)
        object.__setattr__(self, "keypoints", keypoints)
        object.__setattr__(self, "confidence", confidence)

    @property
    def key(self) -> ObservationKey:
        return (self.frame_id, self.camera_id)


@dataclass(frozen=True, eq=False)
class GraspObservation:
    cameras: Tuple[Camera, ...]
    frames: Tuple[FramePose, ...]
    detections: Tuple[Detection2D, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "detections", tuple(self.detections))
        if len(self.cameras) < 1 or len(self.frames) < 2:
            raise ReconstructionError("an observation needs at least one camera and two frames")
        if len(self.camera_map) != len(self.cameras) or len(self.frame_map) != len(self.frames):
            raise ReconstructionError("duplicate camera or frame ids")
        seen = set()
        for detection in self.detections:
            if detection.camera_id not in self.camera_map or detection.frame_id not in self.frame_map:
                raise ReconstructionError(f"detection {detection.key} references an unknown camera or frame")
            tag = (detection.key, detection.handedness)
            if tag in seen:
                raise ReconstructionError(f"duplicate detection for {tag}")
            seen.add(tag)

    @cached_property
    def camera_map(self) -> Dict[int, Camera]:
        return {camera.camera_id: camera for camera in self.cameras}

    @cached_property
    def frame_map(self) -> Dict[int, FramePose]:
        return {frame.frame_id: frame for frame in self.frames}

    @property
    def hands(self) -> Tuple[str, ...]:
        present = {d.handedness for d in self.detections}
        return tuple(h for h in HANDEDNESS if h in present)

    def detections_for(self, hand: str) -> List[Detection2D]:
        """Detections of one hand in canonical (frame, camera) order."""
        return sorted((d for d in self.detections if d.handedness == hand), key=lambda d: d.key)


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    hand: str
    joints: np.ndarray
    inliers: Tuple[ObservationKey, ...]
    inlier_errors: np.ndarray
    rescued_poses: Dict[int, RigidTransform] = field(default_factory=dict)
    outlier_frames: Tuple[int, ...] = ()

    @property
    def skeleton(self) -> HandSkeleton:
        return HandSkeleton(self.joints, self.hand)

    @property
    def mean_inlier_error(self) -> float:
        return float(np.mean(self.inlier_errors)) if len(self.inlier_errors) else float("nan")


@dataclass(frozen=True)
class TriangulationResult:
    joints: np.ndarray  # NaN rows for uninitialized joints
    initialized: np.ndarray


# =============================================================================
# VIEW BATCHES
# =============================================================================

@dataclass(frozen=True, eq=False)
class _Views:
    """Stacked frame-camera observations of one hand, object frame to pixels."""

    keys: Tuple[ObservationKey, ...]
    frames: np.ndarray
    intrinsics: np.ndarray  # (n,3,3)
    rotation: np.ndarray  # camera_T_object
    translation: np.ndarray
    keypoints: np.ndarray  # (n,21,2)
    confidence: np.ndarray  # (n,21)

    def __len__(self) -> int:
        return len(self.keys)

    def subset(self, index) -> "_Views":
        index = np.asarray(index)
        return _Views(tuple(self.keys[i] for i in np.arange(len(self))[index]), self.frames[index],
                      self.intrinsics[index], self.rotation[index], self.translation[index],
                      self.keypoints[index], self.confidence[index])

    @property
    def centers(self) -> np.ndarray:
        """Camera centers in the object frame."""
        return -np.einsum("nji,nj->ni", self.rotation, self.translation)

    def project(self, joints: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixels (n,21,2) and depths (n,21) of object-frame joints."""
        camera = np.einsum("nij,kj->nki", self.rotation, joints) + self.translation[:, None, :]
        depth = camera[..., 2]
        safe = np.where(depth > 0, depth, 1.0)
        pixel = np.einsum("nij,nkj->nki", self.intrinsics, camera / safe[..., None])[..., :2]
        return pixel, depth


def _build_views(obs: GraspObservation, hand: str, detections: Optional[Iterable[Detection2D]] = None,
                 poses: Optional[Dict[int, RigidTransform]] = None, include_invalid: bool = False) -> _Views:
    poses = poses or {}
    if detections is None:
        detections = obs.detections_for(hand)
    rows = []
    for detection in detections:
        frame = obs.frame_map[detection.frame_id]
        pose = poses.get(detection.frame_id)
        if pose is None:
            if not frame.valid and not include_invalid:
                continue
            pose = frame.world_T_object
        camera = obs.camera_map[detection.camera_id]
        rows.append((detection, camera.intrinsics.matrix, camera.extrinsics @ pose))
    return _Views(
        keys=tuple(d.key for d, _, _ in rows),
        frames=np.array([d.frame_id for d, _, _ in rows], dtype=np.int64),
        intrinsics=np.array([k for _, k, _ in rows]).reshape(-1, 3, 3),
        rotation=np.array([t.rotation for _, _, t in rows]).reshape(-1, 3, 3),
        translation=np.array([t.translation for _, _, t in rows]).reshape(-1, 3),
        keypoints=np.array([d.keypoints for d, _, _ in rows]).reshape(-1, NUM_JOINTS, 2),
        confidence=np.array([d.confidence for d, _, _ in rows]).reshape(-1, NUM_JOINTS),
    )


# =============================================================================
# RESIDUALS
# =============================================================================

def huber(x, delta: float) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(x <= delta, 0.5 * x ** 2, delta * (x - 0.5 * delta))


def residual(joints, detection: Detection2D, camera: Camera, frame: FramePose,
             delta: float = 5.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-joint Huber cost of the confidence-whitened reprojection error.

    Returns:
        (values (21,), behind-camera flags (21,)); joints with zero confidence
        or behind the camera contribute 0
    """
    if not frame.valid:
        raise ReconstructionError(f"frame {frame.frame_id} has no valid object pose")
    pixels, depth = project_points(np.asarray(joints, dtype=np.float64), camera.intrinsics,
                                   camera.extrinsics @ frame.world_T_object)
    weight = detection.confidence
    behind = (depth <= 0) & (weight > 0)
    distance = np.linalg.norm(pixels - detection.keypoints, axis=1) * np.sqrt(weight)
    values = np.where((weight > 0) & ~behind, huber(distance, delta), 0.0)
    return values, behind


def _mean_errors(views: _Views, joints: np.ndarray, usable: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean pixel error over detected joints per view; inf if none or behind the camera."""
    pixel, depth = views.project(joints)
    detected = views.confidence > 0
    if usable is not None:
        detected = detected & usable[None, :]
    error = np.linalg.norm(pixel - views.keypoints, axis=2)
    behind = np.any(detected & (depth <= 0), axis=1)
    counts = detected.sum(axis=1)
    mean = np.where(counts > 0, np.sum(np.where(detected, error, 0.0), axis=1) / np.maximum(counts, 1), np.inf)
    mean[behind] = np.inf
    return mean


# =============================================================================
# TRIANGULATION
# =============================================================================

def _triangulate(views: _Views, min_ray_angle_deg: float) -> TriangulationResult:
    """Weighted homogeneous DLT per joint, in normalized camera coordinates."""
    weight = views.confidence  # (n,21)
    homogeneous = np.concatenate([views.keypoints, np.ones(views.keypoints.shape[:2] + (1,))], axis=2)
    normalized = np.einsum("nij,nkj->nki", np.linalg.inv(views.intrinsics), homogeneous)
    extrinsic = np.concatenate([views.rotation, views.translation[:, :, None]], axis=2)  # (n,3,4)
    root_w = np.sqrt(weight)[:, :, None]
    row_x = normalized[..., 0:1] * extrinsic[:, None, 2, :] - extrinsic[:, None, 0, :]
    row_y = normalized[..., 1:2] * extrinsic[:, None, 2, :] - extrinsic[:, None, 1, :]
    system = np.concatenate([root_w * row_x, root_w * row_y], axis=0)  # (2n,21,4)
    system = np.transpose(system, (1, 0, 2))
    _, _, vt = np.linalg.svd(system)
    solution = vt[:, -1, :]
    scale = solution[:, 3]
    initialized = (weight > 0).sum(axis=0) >= 2
    initialized &= np.abs(scale) > 1e-12
    joints = np.full((NUM_JOINTS, 3), np.nan)
    joints[initialized] = solution[initialized, :3] / scale[initialized, None]

    # geometry checks: positive depth, baseline and ray spread
    rays = np.einsum("nji,nkj->nki", views.rotation, normalized)
    rays /= np.linalg.norm(rays, axis=2, keepdims=True)
    centers = views.centers
    min_cos = np.cos(np.radians(min_ray_angle_deg))
    for j in np.flatnonzero(initialized):
        used = np.flatnonzero(weight[:, j] > 0)
        depth = np.einsum("ij,j->i", views.rotation[used, 2], joints[j]) + views.translation[used, 2]
        spread = centers[used][:, None, :] - centers[used][None, :, :]
        cosines = rays[used, j] @ rays[used, j].T
        if np.any(depth <= 0) or np.max(np.linalg.norm(spread, axis=2)) <= 1e-9 or np.min(cosines) > min_cos:
            initialized[j] = False
            joints[j] = np.nan
    return TriangulationResult(joints, initialized)


def triangulate_init(obs: GraspObservation, subset: Sequence[ObservationKey], hand: str = "right",
                     min_ray_angle_deg: float = RansacParams.min_ray_angle_deg) -> TriangulationResult:
    """
    Linear triangulation of every joint from a subset of observations.

    Joints seen with positive confidence in fewer than two views, or only
    along (nearly) parallel rays, are left uninitialized (NaN).
    """
    wanted = set(subset)
    detections = [d for d in obs.detections_for(hand) if d.key in wanted]
    views = _build_views(obs, hand, detections)
    if len(views) == 0:
        return TriangulationResult(np.full((NUM_JOINTS, 3), np.nan), np.zeros(NUM_JOINTS, dtype=bool))
    return _triangulate(views, min_ray_angle_deg)


# =============================================================================
# ROBUST REFINEMENT
# =============================================================================

def _optimize(views: _Views, init: np.ndarray, delta: float, max_iterations: int) -> np.ndarray:
    joints = np.array(init, dtype=np.float64)
    if not np.any(views.confidence > 0):
        raise ReconstructionError("all detection confidences are zero")
    for j in range(NUM_JOINTS):
        used = np.flatnonzero(views.confidence[:, j] > 0)
        if len(used) < 2 or not np.all(np.isfinite(joints[j])):
            continue
        projection = np.einsum("nij,njk->nik", views.intrinsics[used],
                               np.concatenate([views.rotation[used], views.translation[used, :, None]], axis=2))
        target = views.keypoints[used, j]
        root_w = np.sqrt(views.confidence[used, j])

        def whitened(x, projection=projection, target=target, root_w=root_w):
            image = projection @ np.append(x, 1.0)
            depth = np.where(np.abs(image[:, 2]) > 1e-12, image[:, 2], 1e-12)
            error = image[:, :2] / depth[:, None] - target
            distance = np.linalg.norm(error, axis=1) * root_w
            gain = np.ones_like(distance)
            far = distance > delta
            gain[far] = np.sqrt(2.0 * delta * (distance[far] - 0.5 * delta)) / distance[far]
            return ((gain * root_w)[:, None] * error).ravel()

        result = least_squares(whitened, joints[j], method="lm", ftol=1e-10, xtol=1e-12, gtol=1e-12,
                               max_nfev=max_iterations * 4)
        joints[j] = result.x
    return joints


def optimize_joints(init, obs: GraspObservation, inliers: Sequence[ObservationKey], hand: str = "right",
                    params: RansacParams = RansacParams(),
                    poses: Optional[Dict[int, RigidTransform]] = None) -> np.ndarray:
    """
    Minimize the summed Huber reprojection cost over the inlier observations.

    Each joint is independent given the poses, so the problem is solved per
    joint; joints seen in fewer than two inlier views keep their initial value.
    """
    if not inliers:
        raise ReconstructionError("optimize_joints needs a non-empty inlier set")
    wanted = set(inliers)
    detections = [d for d in obs.detections_for(hand) if d.key in wanted]
    views = _build_views(obs, hand, detections, poses=poses, include_invalid=True)
    return _optimize(views, np.asarray(init, dtype=np.float64), params.huber_delta, params.max_iterations)


# =============================================================================
# RANSAC
# =============================================================================

def _qualifies(views: _Views, mask: np.ndarray, params: RansacParams) -> bool:
    return int(mask.sum()) >= params.min_inliers and len(np.unique(views.frames[mask])) >= params.min_inlier_frames


def ransac_reconstruct(obs: GraspObservation, params: RansacParams = RansacParams(),
                       hand: str = "right") -> ReconstructionResult:
    """
    Robust object-frame joints for one hand.

    Observations are canonically ordered by (frame, camera) before sampling,
    so the result does not depend on the order detections were supplied in.

    Raises:
        ReconstructionFailedError: no hypothesis reaches the minimum inlier
            support
    """
    views = _build_views(obs, hand)
    if len(views) < 2 or len(np.unique(views.frames)) < 2:
        raise ReconstructionFailedError(f"{hand} hand: need observations from at least two valid frames")
    rng = np.random.default_rng(params.seed)

    best_mask, best_joints, best_score = None, None, None
    for _ in range(params.iterations):
        first = int(rng.integers(len(views)))
        others = np.flatnonzero(views.frames != views.frames[first])
        second = int(others[rng.integers(len(others))])
        hypothesis = _triangulate(views.subset([first, second]), params.min_ray_angle_deg)
        if hypothesis.initialized.sum() < params.min_hypothesis_joints:
            continue
        errors = _mean_errors(views, np.nan_to_num(hypothesis.joints), hypothesis.initialized)
        mask = errors <= params.inlier_px
        if not _qualifies(views, mask, params):
            continue
        score = (int(mask.sum()), -float(errors[mask].mean()))
        if best_score is None or score > best_score:
            best_mask, best_joints, best_score = mask, hypothesis.joints, score
            if mask.all():
                break
    if best_mask is None:
        raise ReconstructionFailedError(f"{hand} hand: no hypothesis with {params.min_inliers} inliers "
                                        f"over {params.min_inlier_frames} frames")
    logger.info(f"ransac_reconstruct[{hand}]: best hypothesis has {best_score[0]}/{len(views)} inliers")

    joints = np.array(best_joints)
    missing = ~np.all(np.isfinite(joints), axis=1)
    if missing.any():
        filled = _triangulate(views.subset(best_mask), params.min_ray_angle_deg)
        joints[missing] = filled.joints[missing]
        if not np.all(np.isfinite(joints)):
            lost = np.flatnonzero(~np.isfinite(joints[:, 0])).tolist()
            raise ReconstructionFailedError(f"{hand} hand: joints {lost} cannot be triangulated from the inliers")

    mask = best_mask
    for round_index in range(params.refine_rounds):
        joints = _optimize(views.subset(mask), joints, params.huber_delta, params.max_iterations)
        errors = _mean_errors(views, joints)
        updated = errors <= params.inlier_px
        logger.debug(f"ransac_reconstruct[{hand}]: refinement round {round_index} keeps {int(updated.sum())} inliers")
        if np.array_equal(updated, mask) or not _qualifies(views, updated, params):
            break
        mask = updated

    errors = _mean_errors(views, joints)
    final = errors <= params.inlier_px
    if not _qualifies(views, final, params):
        raise ReconstructionFailedError(f"{hand} hand: refined model lost its inlier support")
    inliers = tuple(views.keys[i] for i in np.flatnonzero(final))
    inlier_frames = set(views.frames[final].tolist())
    outliers = tuple(sorted({d.frame_id for d in obs.detections_for(hand)} - inlier_frames))
    logger.info(f"ransac_reconstruct[{hand}]: {len(inliers)} inliers, mean error "
                f"{errors[final].mean():.3f} px, {len(outliers)} outlier frame(s)")
    return ReconstructionResult(hand, joints, inliers, errors[final], {}, outliers)


# =============================================================================
# POSE RESCUE
# =============================================================================

@dataclass(frozen=True, eq=False)
class PnPView:
    intrinsics: CameraIntrinsics
    camera_T_world: RigidTransform
    keypoints: np.ndarray
    confidence: np.ndarray


def _epnp_pose(view: PnPView, joints: np.ndarray) -> Optional[RigidTransform]:
    """Camera-from-object pose by EPnP on one view, None when OpenCV finds no solution."""
    mask = np.asarray(view.confidence) > 0
    try:
        ok, rvec, tvec = cv2.solvePnP(joints[mask].astype(np.float64),
                                      np.asarray(view.keypoints, dtype=np.float64)[mask],
                                      view.intrinsics.matrix, None, flags=cv2.SOLVEPNP_EPNP)
    except cv2.error as e:
        logger.debug(f"_epnp_pose: {e}")
        return None
    if not ok or not (np.all(np.isfinite(rvec)) and np.all(np.isfinite(tvec))):
        return None
    return RigidTransform(Rotation.from_rotvec(rvec.ravel()).as_matrix(), tvec.ravel())


def _linear_pose(views: Sequence[PnPView], joints: np.ndarray) -> Optional[RigidTransform]:
    """
    World-from-object pose from one linear system stacked over all views.

    The 12 entries of [R | t] are solved in least squares (two rows per
    weighted correspondence) and R is projected onto SO(3). Returns None when
    the system is rank deficient.
    """
    rows, rhs = [], []
    for view in views:
        confidence = np.asarray(view.confidence)
        rotation = view.camera_T_world.rotation
        translation = view.camera_T_world.translation
        inverse_k = np.linalg.inv(view.intrinsics.matrix)
        for index in np.flatnonzero(confidence > 0):
            x, y, _ = inverse_k @ np.append(np.asarray(view.keypoints)[index], 1.0)
            homogeneous = np.append(joints[index], 1.0)
            weight = np.sqrt(confidence[index])
            for coordinate, axis in ((x, 0), (y, 1)):
                direction = rotation[axis] - coordinate * rotation[2]
                rows.append(weight * np.kron(direction, homogeneous))
                rhs.append(-weight * (translation[axis] - coordinate * translation[2]))
    if len(rows) < 12:
        return None
    solution, _, rank, _ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    if rank < 12:
        return None
    affine = solution.reshape(3, 4)
    u, _, vt = np.linalg.svd(affine[:, :3])
    rotation = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(rotation, affine[:, 3])


def _pnp_residuals(views: Sequence[PnPView], joints: np.ndarray, pose: RigidTransform) -> np.ndarray:
    """Confidence-whitened reprojection errors (2 per joint and view), zero for undetected joints."""
    parts = []
    for view in views:
        confidence = np.asarray(view.confidence)
        pixels, depth = project_points(joints, view.intrinsics, view.camera_T_world @ pose)
        error = np.where((confidence > 0)[:, None], pixels - np.asarray(view.keypoints), 0.0)
        error[(confidence > 0) & (depth <= 0)] = 1e6
        parts.append((np.sqrt(confidence)[:, None] * error).ravel())
    return np.concatenate(parts)


def _initial_pose(views: Sequence[PnPView], joints: np.ndarray, counts: Sequence[int],
                  huber_delta: float, fallback: Optional[RigidTransform]) -> Optional[RigidTransform]:
    """The candidate start with the lowest Huber cost over all views."""
    candidates = []
    for view, count in zip(views, counts):
        if count >= 4:
            camera_T_object = _epnp_pose(view, joints)
            if camera_T_object is not None:
                candidates.append(view.camera_T_world.inverse() @ camera_T_object)
    linear = _linear_pose(views, joints)
    if linear is not None:
        candidates.append(linear)
    if fallback is not None:
        candidates.append(fallback)
    if not candidates:
        return None
    costs = [huber(_pnp_residuals(views, joints, pose), huber_delta).sum() for pose in candidates]
    return candidates[int(np.argmin(costs))]


def pnp_pose(views: Sequence[PnPView], joints, initial: Optional[RigidTransform] = None,
             huber_delta: float = 5.0, fallback: Optional[RigidTransform] = None) -> RigidTransform:
    """
    Object pose (world_T_object) from 2D detections of known object-frame joints.

    Views are cameras observing the same frame. Unless `initial` is given the
    refinement starts from the cheapest of: EPnP on every view with at least
    4 correspondences, a linear solve stacked over all views, and `fallback`.
    The pose is refined on all views with a Huber loss on confidence-weighted
    reprojection errors.

    Raises:
        PnPError: fewer than 4 weighted correspondences, coplanar joints, or
            no initialization available
    """
    joints = np.asarray(joints, dtype=np.float64)
    views = list(views)
    counts = [int(np.sum(np.asarray(v.confidence) > 0)) for v in views]
    if sum(counts) < 4:
        raise PnPError(f"need at least 4 weighted correspondences, got {sum(counts)}")
    used = np.unique(np.concatenate([np.flatnonzero(np.asarray(v.confidence) > 0) for v in views]))
    spread = np.linalg.svd(joints[used] - joints[used].mean(axis=0), compute_uv=False)
    if len(used) < 4 or spread[2] <= 1e-6 * max(spread[0], 1e-12):
        raise PnPError("correspondences are coplanar or collinear")

    if initial is None:
        initial = _initial_pose(views, joints, counts, huber_delta, fallback)
    if initial is None:
        raise PnPError(f"no initial pose from {sum(counts)} correspondences in {len(views)} view(s)")

    def reprojection(x: np.ndarray) -> np.ndarray:
        return _pnp_residuals(views, joints, RigidTransform(Rotation.from_rotvec(x[:3]).as_matrix(), x[3:]))

    x0 = np.concatenate([initial.as_rotvec(), initial.translation])
    result = least_squares(reprojection, x0, method="trf", loss="huber", f_scale=huber_delta,
                           ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=200)
    if not np.all(np.isfinite(result.x)):
        raise PnPError("pose refinement diverged")
    return RigidTransform(Rotation.from_rotvec(result.x[:3]).as_matrix(), result.x[3:])


def second_pass_rescue(result: ReconstructionResult, obs: GraspObservation,
                       params: RansacParams = RansacParams(), refine: bool = False) -> ReconstructionResult:
    """
    Re-estimate the pose of every frame without inliers and re-test it.

    Frames whose observations pass the inlier test under the PnP pose are
    appended to the inlier set and their poses recorded. Joints stay fixed
    unless `refine` is set.
    """
    hand = result.hand
    inlier_frames = {frame for frame, _ in result.inliers}
    detections = obs.detections_for(hand)
    failed = sorted({d.frame_id for d in detections} - inlier_frames - set(result.rescued_poses))
    if not failed:
        return result

    rescued = dict(result.rescued_poses)
    added: List[ObservationKey] = []
    for frame_id in failed:
        frame_detections = [d for d in detections if d.frame_id == frame_id]
        pnp_views = [PnPView(obs.camera_map[d.camera_id].intrinsics, obs.camera_map[d.camera_id].extrinsics,
                             d.keypoints, d.confidence) for d in frame_detections]
        try:
            pose = pnp_pose(pnp_views, result.joints, huber_delta=params.huber_delta,
                            fallback=obs.frame_map[frame_id].world_T_object)
        except PnPError as e:
            logger.warning(f"second_pass_rescue[{hand}]: frame {frame_id} pose failed: {e}")
            continue
        views = _build_views(obs, hand, frame_detections, poses={frame_id: pose})
        passing = _mean_errors(views, result.joints) <= params.inlier_px
        if passing.any():
            rescued[frame_id] = pose
            added.extend(views.keys[i] for i in np.flatnonzero(passing))
    logger.info(f"second_pass_rescue[{hand}]: rescued {len(rescued) - len(result.rescued_poses)} "
                f"of {len(failed)} failed frame(s)")

    inliers = tuple(sorted(result.inliers + tuple(added)))
    joints = result.joints
    if refine and added:
        joints = optimize_joints(joints, obs, inliers, hand, params, poses=rescued)
    views = _build_views(obs, hand, [d for d in detections if d.key in set(inliers)], poses=rescued,
                         include_invalid=True)
    errors = _mean_errors(views, joints)
    keep = errors <= params.inlier_px
    inliers = tuple(views.keys[i] for i in np.flatnonzero(keep))
    kept_frames = {frame for frame, _ in inliers}
    rescued = {frame: pose for frame, pose in rescued.items() if frame in kept_frames}
    outliers = tuple(sorted({d.frame_id for d in detections} - kept_frames))
    return ReconstructionResult(hand, joints, inliers, errors[keep], rescued, outliers)


def reconstruct_grasp(obs: GraspObservation, params: RansacParams = RansacParams(),
                      rescue: bool = True, refine: bool = False) -> Dict[str, ReconstructionResult]:
    """RANSAC plus optional rescue for every hand present in the observation."""
    results = {}
    for hand in obs.hands:
        result = ransac_reconstruct(obs, params, hand)
        if rescue:
            result = second_pass_rescue(result, obs, params, refine=refine)
        results[hand] = result
    return results
