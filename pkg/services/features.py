"""
Per-point and per-voxel hand-pose features.

Every object point gets a fixed-length vector describing where the hand is
relative to it. Four families are supported:

- simple-joints (63): the 21 object-frame joints of the point's hand
- relative-joints (66): 21 joint-minus-point vectors plus the surface normal
- skeleton (40): distance to each of the 20 phalange segments, then the
  cosine between each point-to-segment direction and the normal
- mesh (23): distance to the closest hand-proxy point, its cosine with the
  normal, then the distances to the 21 joints

In bi-manual grasps each point uses the hand owning its closest joint.

Author: GraspKit Team
Version: 1.0.0
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from services.errors import FeatureError
from services.geom import PointCloud, TriMesh, VoxelGrid, nearest_on_mesh, point_segment_distance
from services.handmodel import (
    NUM_JOINTS,
    NUM_PHALANGES,
    PHALANGES,
    HandProxy,
    HandSkeleton,
    build_proxy,
    proxy_closest,
)

logger = logging.getLogger(__name__)

FAMILY_DIMS = {"simple-joints": 63, "relative-joints": 66, "skeleton": 40, "mesh": 23}
FAMILIES = tuple(FAMILY_DIMS)
DROPOUT_FRACTION = 0.15
CHUNK = 32768

Points = Union[PointCloud, np.ndarray]


@dataclass(frozen=True)
class DropoutRecord:
    dropped_joints: Tuple[Tuple[int, ...], ...]  # per hand
    camera_position: Tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """
    Feature rows for a set of points or voxels.

    Attributes:
        values: (n, d) with d = family dims (+1 when occupancy is appended)
        family: one of FAMILIES
        hand_index: per-row index of the hand the features describe
        closest_part: per-row closest proxy part (mesh family only)
        occupancy: whether the last column is a voxel occupancy bit
        target_mask: rows that carry a contact target (surface voxels)
        dropout: record of an applied occlusion dropout
    """

    values: np.ndarray
    family: str
    hand_index: np.ndarray
    closest_part: Optional[np.ndarray] = None
    occupancy: bool = False
    target_mask: Optional[np.ndarray] = None
    dropout: Optional[DropoutRecord] = None

    def __post_init__(self):
        if self.family not in FAMILY_DIMS:
            raise FeatureError(f"unknown feature family {self.family!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.dims:
            raise FeatureError(f"{self.family} features need {self.dims} columns, got shape {values.shape}")
        if len(self.hand_index) != len(values):
            raise FeatureError("hand index length differs from row count")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> int:
        return FAMILY_DIMS[self.family] + (1 if self.occupancy else 0)

    def __len__(self) -> int:
        return len(self.values)


# =============================================================================
# HELPERS
# =============================================================================

def _unpack(points: Points, need_normals: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if isinstance(points, PointCloud):
        return points.points, points.normals
    if need_normals:
        raise FeatureError("this feature family needs surface normals")
    return np.atleast_2d(np.asarray(points, dtype=np.float64)), None


def select_hands(points: np.ndarray, hands: Sequence[HandSkeleton]) -> np.ndarray:
    """Index of the hand owning each point's closest joint; ties go to the first hand."""
    if not hands:
        raise FeatureError("at least one hand is required")
    if len(hands) == 1:
        return np.zeros(len(points), dtype=np.int64)
    nearest = np.stack([
        np.min(np.linalg.norm(points[:, None, :] - hand.joints[None], axis=2), axis=1) for hand in hands
    ], axis=1)
    return np.argmin(nearest, axis=1)


def _block_values(family: str, points: np.ndarray, normals: Optional[np.ndarray], hand: HandSkeleton,
                  proxy: Optional[HandProxy]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Feature rows of one family for points that all use the same hand."""
    joints = hand.joints
    if family == "simple-joints":
        return np.tile(joints.ravel(), (len(points), 1)), None
    if family == "relative-joints":
        relative = (joints[None, :, :] - points[:, None, :]).reshape(len(points), -1)
        return np.hstack([relative, normals]), None
    if family == "skeleton":
        segments = hand.segments
        distance, closest = point_segment_distance(points[:, None, :], segments[None, :, 0], segments[None, :, 1])
        vector = closest - points[:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            cosine = np.einsum("nkj,nj->nk", vector, normals) / distance
        cosine = np.where(distance > 0, cosine, 0.0)
        return np.hstack([distance, cosine]), None
    # mesh
    closest, signed, part = proxy_closest(proxy, points)
    vector = closest - points
    length = np.linalg.norm(vector, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.einsum("nj,nj->n", vector, normals) / length
    cosine = np.where(length > 0, cosine, 0.0)
    joint_distance = np.linalg.norm(joints[None, :, :] - points[:, None, :], axis=2)
    return np.hstack([np.maximum(signed, 0.0)[:, None], cosine[:, None], joint_distance]), part


def _compute(family: str, points: np.ndarray, normals: Optional[np.ndarray], hands: Sequence[HandSkeleton],
             proxies: Optional[Sequence[HandProxy]]) -> FeatureMatrix:
    if family not in FAMILY_DIMS:
        raise FeatureError(f"unknown feature family {family!r}")
    hands = list(hands)
    if family == "mesh":
        proxies = list(proxies) if proxies is not None else [build_proxy(h) for h in hands]
        if len(proxies) != len(hands):
            raise FeatureError("one proxy per hand is required")
    hand_index = np.empty(len(points), dtype=np.int64)
    values = np.empty((len(points), FAMILY_DIMS[family]))
    parts = np.full(len(points), -1, dtype=np.int64) if family == "mesh" else None
    for start in range(0, len(points), CHUNK):
        block = slice(start, start + CHUNK)
        owner = select_hands(points[block], hands)
        hand_index[block] = owner
        for h in np.unique(owner):
            rows = np.flatnonzero(owner == h) + start
            block_normals = normals[rows] if normals is not None else None
            proxy = proxies[h] if family == "mesh" else None
            values[rows], part = _block_values(family, points[rows], block_normals, hands[h], proxy)
            if part is not None:
                parts[rows] = part
    return FeatureMatrix(values, family, hand_index, closest_part=parts)


# =============================================================================
# FEATURE FAMILIES
# =============================================================================

def simple_joints(points: Points, hands: Sequence[HandSkeleton]) -> FeatureMatrix:
    coordinates, _ = _unpack(points, need_normals=False)
    return _compute("simple-joints", coordinates, None, hands, None)


def relative_joints(points: Points, hands: Sequence[HandSkeleton]) -> FeatureMatrix:
    coordinates, normals = _unpack(points, need_normals=True)
    return _compute("relative-joints", coordinates, normals, hands, None)


def skeleton_features(points: Points, hands: Sequence[HandSkeleton]) -> FeatureMatrix:
    coordinates, normals = _unpack(points, need_normals=True)
    return _compute("skeleton", coordinates, normals, hands, None)


def mesh_features(points: Points, proxies: Optional[Sequence[HandProxy]],
                  hands: Sequence[HandSkeleton]) -> FeatureMatrix:
    """Closest-proxy distance (0 inside the proxy), its cosine with the normal, joint distances."""
    coordinates, normals = _unpack(points, need_normals=True)
    return _compute("mesh", coordinates, normals, hands, proxies)


def compute_features(family: str, points: Points, hands: Sequence[HandSkeleton],
                     proxies: Optional[Sequence[HandProxy]] = None) -> FeatureMatrix:
    """Dispatch on the family name."""
    if family == "simple-joints":
        return simple_joints(points, hands)
    if family == "relative-joints":
        return relative_joints(points, hands)
    if family == "skeleton":
        return skeleton_features(points, hands)
    if family == "mesh":
        return mesh_features(points, proxies, hands)
    raise FeatureError(f"unknown feature family {family!r}")


# =============================================================================
# OCCLUSION DROPOUT
# =============================================================================

def dropout_count(fraction: float = DROPOUT_FRACTION) -> int:
    """Joints dropped per hand: ceil(fraction * 21)."""
    return int(math.ceil(round(fraction * NUM_JOINTS, 9)))


def _dropout_columns(family: str, dropped: Sequence[int]) -> np.ndarray:
    dropped = set(dropped)
    if family in ("simple-joints", "relative-joints"):
        return np.array([3 * j + axis for j in sorted(dropped) for axis in range(3)], dtype=np.int64)
    if family == "skeleton":
        touched = [k for k, (a, b) in enumerate(PHALANGES) if a in dropped or b in dropped]
        return np.array(touched + [NUM_PHALANGES + k for k in touched], dtype=np.int64)
    return np.array([2 + j for j in sorted(dropped)], dtype=np.int64)


def occlusion_dropout(features: FeatureMatrix, hands: Sequence[HandSkeleton], seed: int,
                      camera_position: Optional[Sequence[float]] = None,
                      fraction: float = DROPOUT_FRACTION) -> FeatureMatrix:
    """
    Zero every feature entry attributable to the joints farthest from a camera.

    The camera is placed uniformly on a sphere of three times the grasp's
    bounding radius around the joint centroid, unless given explicitly. The
    farthest ceil(15% of 21) = 4 joints are dropped per hand.
    """
    all_joints = np.vstack([h.joints for h in hands])
    if camera_position is None:
        center = all_joints.mean(axis=0)
        radius = 3.0 * max(float(np.max(np.linalg.norm(all_joints - center, axis=1))), 1e-9)
        direction = np.random.default_rng(seed).normal(size=3)
        camera = center + radius * direction / np.linalg.norm(direction)
    else:
        camera = np.asarray(camera_position, dtype=np.float64)

    count = dropout_count(fraction)
    values = features.values.copy()
    dropped_per_hand = []
    for h, hand in enumerate(hands):
        distance = np.linalg.norm(hand.joints - camera, axis=1)
        # farthest first, ties to the lower joint index
        order = np.lexsort((np.arange(NUM_JOINTS), -distance))
        dropped = tuple(sorted(int(j) for j in order[:count]))
        dropped_per_hand.append(dropped)
        rows = np.flatnonzero(features.hand_index == h)
        columns = _dropout_columns(features.family, dropped)
        values[np.ix_(rows, columns)] = 0.0
        if features.family == "mesh" and features.closest_part is not None:
            # the closest-point entries go when the closest phalange lost both joints
            orphaned = [k for k, (a, b) in enumerate(PHALANGES) if a in dropped and b in dropped]
            lost = rows[np.isin(features.closest_part[rows], orphaned)]
            values[np.ix_(lost, [0, 1])] = 0.0
    logger.debug(f"occlusion_dropout: dropped {dropped_per_hand} from camera {camera.round(4).tolist()}")
    record = DropoutRecord(tuple(dropped_per_hand), tuple(float(c) for c in camera))
    return FeatureMatrix(values, features.family, features.hand_index, features.closest_part,
                         features.occupancy, features.target_mask, record)


# =============================================================================
# VOXEL FEATURES
# =============================================================================

def voxel_normals(grid: VoxelGrid, mesh: TriMesh) -> np.ndarray:
    """Nearest-face normals at surface voxel centers; zero elsewhere (C order)."""
    normals = np.zeros((grid.resolution ** 3, 3))
    surface = np.flatnonzero(grid.surface.ravel())
    if len(surface):
        _, _, face = nearest_on_mesh(mesh, grid.centers()[surface])
        normals[surface] = mesh.face_normals[face]
    return normals


def voxel_features(grid: VoxelGrid, family: str, hands: Sequence[HandSkeleton], mesh: TriMesh,
                   proxies: Optional[Sequence[HandProxy]] = None) -> FeatureMatrix:
    """
    Features at every voxel center plus a trailing occupancy column.

    Interior voxels keep occupancy 1 with all hand features zeroed; only
    surface voxels carry contact targets.
    """
    centers = grid.centers()
    normals = voxel_normals(grid, mesh)
    base = _compute(family, centers, normals, hands, proxies)
    interior = grid.interior.ravel()
    values = base.values.copy()
    values[interior] = 0.0
    occupancy = grid.occupancy.ravel().astype(np.float64)[:, None]
    logger.info(f"voxel_features: {family} over {len(centers)} voxels, {int(grid.surface.sum())} targets")
    return FeatureMatrix(np.hstack([values, occupancy]), family, base.hand_index, base.closest_part,
                         occupancy=True, target_mask=grid.surface.ravel().copy())
