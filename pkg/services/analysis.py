"""
Dataset analyses over collections of grasps.

Key Features:
- Grasp / GraspSet records with the object catalog and held-out splits
- Contact-to-hand association at proxy-point or phalange level
- Hand-part contact probabilities and per-object active areas
- Contact areas, 20-d phalange area vectors and contact distance
- Hand-size normalization with 1-DOF alignment about a symmetry axis
- Joint standard deviations and agglomerative pose clustering

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform
from scipy.spatial.transform import Rotation

from services.contact import CONTACT_THRESHOLD, ContactMap, binarize
from services.errors import AnalysisError
from services.geom import TriMesh
from services.handmodel import (
    FINGERTIP_PHALANGES,
    MIDDLE_KNUCKLE,
    NUM_JOINTS,
    NUM_PHALANGES,
    PALM_JOINTS,
    HandProxy,
    HandSkeleton,
    KinematicHand,
    build_proxy,
    forward_kinematics,
    part_axis_distances,
    proxy_closest,
    proxy_surface_points,
)

logger = logging.getLogger(__name__)

INTENTS = ("use", "handoff")
LEVELS = ("point", "phalange")
REFERENCE_HAND_SIZE = 0.1
NUM_PARTS = NUM_PHALANGES + 1

OBJECT_SPLIT = ("mug", "pan", "wine glass")
PARTICIPANT_SPLIT = (5, 15, 25, 35, 45)

# object -> intents it was grasped with
OBJECT_CATALOG: Dict[str, Tuple[str, ...]] = {
    name: ("use",) if name == "door knob" else INTENTS
    for name in (
        "apple", "banana", "binoculars", "bowl", "camera", "cell phone", "cup", "door knob",
        "eyeglasses", "flashlight", "hammer", "headphones", "knife", "light bulb", "mouse", "mug",
        "pan", "PS controller", "scissors", "stapler", "toothbrush", "toothpaste", "Utah teapot",
        "water bottle", "wine glass",
    )
}

USE_INSTRUCTIONS = {
    "apple": "eat", "banana": "peel", "binoculars": "see through", "bowl": "drink from",
    "camera": "take picture", "cell phone": "talk on", "cup": "drink from",
    "door knob": "twist to open door", "eyeglasses": "wear", "flashlight": "turn on",
    "hammer": "hit a nail", "headphones": "wear", "knife": "cut", "light bulb": "screw in a socket",
    "mouse": "use to point and click", "mug": "drink from", "pan": "cook in",
    "PS controller": "play a game with", "scissors": "cut with", "stapler": "staple",
    "toothbrush": "brush teeth", "toothpaste": "squeeze out toothpaste", "Utah teapot": "pour tea from",
    "water bottle": "open", "wine glass": "drink wine from",
}


def intent_catalog() -> Dict[str, Tuple[str, ...]]:
    return dict(OBJECT_CATALOG)


# =============================================================================
# GRASP RECORDS
# =============================================================================

@dataclass(frozen=True, eq=False)
class Grasp:
    """
    One captured (or synthesized) grasp in the object frame.

    Attributes:
        object_id: catalog name or any free-form id
        intent: "use" or "handoff"
        participant: participant number
        contact: per-vertex contact on mesh
        hands: one or two skeletons
        mesh: object mesh
        symmetry_axis: unit axis through the object origin, for symmetric objects
    """

    object_id: str
    intent: str
    participant: int
    contact: ContactMap
    hands: Tuple[HandSkeleton, ...]
    mesh: TriMesh
    grasp_id: str = ""
    symmetry_axis: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.intent not in INTENTS:
            raise AnalysisError(f"intent must be one of {INTENTS}, got {self.intent!r}")
        hands = tuple(self.hands)
        if not hands:
            raise AnalysisError("a grasp needs at least one hand")
        object.__setattr__(self, "hands", hands)
        if len(self.contact) != len(self.mesh.vertices):
            raise AnalysisError(f"contact has {len(self.contact)} values for {len(self.mesh.vertices)} vertices")

    @property
    def contacted(self) -> np.ndarray:
        return binarize(self.contact)


@dataclass(frozen=True)
class GraspSet:
    grasps: Tuple[Grasp, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "grasps", tuple(self.grasps))

    def __iter__(self) -> Iterator[Grasp]:
        return iter(self.grasps)

    def __len__(self) -> int:
        return len(self.grasps)

    def __getitem__(self, index: int) -> Grasp:
        return self.grasps[index]

    def where(self, **criteria) -> "GraspSet":
        """Grasps whose attributes equal every given value."""
        return GraspSet(tuple(g for g in self.grasps if all(getattr(g, k) == v for k, v in criteria.items())))

    def validate_catalog(self) -> None:
        """Raise if a catalog object carries an intent it was never captured with."""
        for grasp in self.grasps:
            allowed = OBJECT_CATALOG.get(grasp.object_id)
            if allowed is not None and grasp.intent not in allowed:
                raise AnalysisError(f"{grasp.object_id} has no {grasp.intent} grasps in the catalog")


# =============================================================================
# ASSOCIATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class PartAssociation:
    """
    Hand part for every contacted object point.

    Attributes:
        level: "point" (proxy sample ids) or "phalange" (0..19, 20 = palm)
        points: indices of the contacted object points
        parts: associated part (sample id at point level)
        hands: hand each association belongs to
        phalanges: the phalange/palm id behind each association at either level
    """

    level: str
    points: np.ndarray
    parts: np.ndarray
    hands: np.ndarray
    phalanges: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def _proxies(hands: Sequence[HandSkeleton], proxies: Optional[Sequence[HandProxy]]) -> List[HandProxy]:
    return list(proxies) if proxies is not None else [build_proxy(h) for h in hands]


def associate(contact: ContactMap, mesh: TriMesh, hands: Sequence[HandSkeleton], level: str = "phalange",
              proxies: Optional[Sequence[HandProxy]] = None, tau: float = CONTACT_THRESHOLD) -> PartAssociation:
    """
    Map each contacted vertex to its nearest hand part.

    Phalange level compares distances to the bone segments and the palm;
    point level uses the nearest canonical proxy surface sample. Ties go to
    the lowest hand, then the lowest part id.
    """
    if level not in LEVELS:
        raise AnalysisError(f"association level must be one of {LEVELS}")
    if len(contact) != len(mesh.vertices):
        raise AnalysisError("contact map and mesh differ in vertex count")
    proxies = _proxies(hands, proxies)
    points = np.flatnonzero(binarize(contact, tau))
    empty = np.zeros(0, dtype=np.int64)
    if len(points) == 0:
        return PartAssociation(level, empty, empty, empty, empty)
    query = mesh.vertices[points]

    if level == "phalange":
        distances = np.stack([part_axis_distances(p, query) for p in proxies], axis=1)  # (n, H, 21)
        flat = distances.reshape(len(points), -1)
        best = np.argmin(flat, axis=1)
        hand, part = np.divmod(best, NUM_PARTS)
        return PartAssociation(level, points, part, hand, part.copy())

    best_distance = np.full(len(points), np.inf)
    hand = np.zeros(len(points), dtype=np.int64)
    part = np.zeros(len(points), dtype=np.int64)
    phalange = np.zeros(len(points), dtype=np.int64)
    for h, proxy in enumerate(proxies):
        samples, sample_parts, _ = proxy_surface_points(proxy)
        distance, index = cKDTree(samples).query(query)
        better = distance < best_distance
        best_distance[better] = distance[better]
        hand[better], part[better], phalange[better] = h, index[better], sample_parts[index[better]]
    return PartAssociation(level, points, part, hand, phalange)


def grasp_association(grasp: Grasp, level: str = "phalange",
                      proxies: Optional[Sequence[HandProxy]] = None) -> PartAssociation:
    return associate(grasp.contact, grasp.mesh, grasp.hands, level, proxies)


def _part_count(level: str) -> int:
    if level == "phalange":
        return NUM_PARTS
    samples, _, _ = proxy_surface_points(build_proxy(_reference_skeleton()))
    return len(samples)


def _reference_skeleton() -> HandSkeleton:
    return forward_kinematics(KinematicHand())


def hand_contact_probability(grasps: Union[GraspSet, Sequence[Grasp]], level: str = "phalange",
                             by_intent: bool = False) -> Union[np.ndarray, Dict[str, np.ndarray]]:
    """
    Fraction of grasps in which each hand part is contacted.

    A part is contacted when at least one contacted object point is
    associated with it, on either hand.
    """
    grasps = list(grasps)
    if not grasps:
        raise AnalysisError("hand contact probability needs at least one grasp")
    if by_intent:
        return {intent: hand_contact_probability([g for g in grasps if g.intent == intent], level)
                for intent in INTENTS if any(g.intent == intent for g in grasps)}
    counts = np.zeros(_part_count(level))
    for grasp in grasps:
        association = grasp_association(grasp, level)
        counts[np.unique(association.parts)] += 1
    return counts / len(grasps)


def _shared_mesh(grasps: Sequence[Grasp]) -> TriMesh:
    mesh = grasps[0].mesh
    for grasp in grasps[1:]:
        other = grasp.mesh
        if other is not mesh and not (
            np.array_equal(other.faces, mesh.faces) and np.array_equal(other.vertices, mesh.vertices)
        ):
            raise AnalysisError(f"grasp {grasp.grasp_id or grasp.object_id} uses a different object mesh")
    return mesh


def active_areas(grasps: Union[GraspSet, Sequence[Grasp]], part: int, level: str = "phalange") -> np.ndarray:
    """Per-vertex fraction of grasps where the vertex is contacted and associated to the part."""
    grasps = list(grasps)
    if not grasps:
        raise AnalysisError("active areas need at least one grasp")
    mesh = _shared_mesh(grasps)
    counts = np.zeros(len(mesh.vertices))
    for grasp in grasps:
        association = grasp_association(grasp, level)
        counts[association.points[association.parts == part]] += 1
    return counts / len(grasps)


# =============================================================================
# CONTACT AREAS AND DISTANCE
# =============================================================================

def contact_area(grasp: Grasp, region: str = "whole-hand", association: Optional[PartAssociation] = None) -> float:
    """Vertex-area sum (cm^2) of contacted vertices associated with the fingertips or the whole hand."""
    if region not in ("fingertips", "whole-hand"):
        raise AnalysisError(f"unknown contact region {region!r}")
    if association is None:
        association = grasp_association(grasp, "phalange")
    points = association.points
    if region == "fingertips":
        points = points[np.isin(association.phalanges, FINGERTIP_PHALANGES)]
    return float(np.sum(grasp.mesh.vertex_areas[np.unique(points)]) * 1e4)


def phalange_area_vector(grasp: Grasp, association: Optional[PartAssociation] = None) -> np.ndarray:
    """
    Per-phalange sum (m^2) of the faces incident to its associated vertices.

    A face touching several vertices of the same phalange counts once.
    """
    if association is None:
        association = grasp_association(grasp, "phalange")
    mesh = grasp.mesh
    vector = np.zeros(NUM_PHALANGES)
    for k in range(NUM_PHALANGES):
        vertices = association.points[association.phalanges == k]
        if len(vertices) == 0:
            continue
        incident = np.any(np.isin(mesh.faces, vertices), axis=1)
        vector[k] = float(mesh.face_areas[incident].sum())
    return vector


def contact_distance(first, second) -> float:
    """L2 distance between phalange area vectors (grasps or precomputed vectors)."""
    a = phalange_area_vector(first) if isinstance(first, Grasp) else np.asarray(first, dtype=np.float64)
    b = phalange_area_vector(second) if isinstance(second, Grasp) else np.asarray(second, dtype=np.float64)
    return float(np.linalg.norm(a - b))


def contact_to_hand_distance(contact: ContactMap, mesh: TriMesh, proxies: Sequence[HandProxy],
                             tau: float = CONTACT_THRESHOLD) -> float:
    """Mean distance (m) from contacted vertices to the nearest hand proxy surface."""
    points = mesh.vertices[binarize(contact, tau)]
    if len(points) == 0:
        raise AnalysisError("no contacted vertices")
    distance = np.min(np.stack([np.abs(proxy_closest(p, points)[1]) for p in proxies]), axis=0)
    return float(distance.mean())


def contrasting_pairs(grasps: Sequence[Grasp], pose_threshold: float, k: int = 5,
                      axis: Optional[Sequence[float]] = None) -> List[Tuple[int, int, float, float]]:
    """
    Grasp pairs with similar hand pose but different contact.

    Pairs whose aligned first-hand joints lie within pose_threshold (L2 over
    the 63-d vector) are ranked by decreasing contact distance.

    Returns:
        up to k tuples (i, j, pose distance, contact distance)
    """
    aligned = np.stack([normalize_and_align(g.hands[0], axis).joints.ravel() for g in grasps])
    vectors = [phalange_area_vector(g) for g in grasps]
    pairs = []
    for i in range(len(grasps)):
        for j in range(i + 1, len(grasps)):
            pose = float(np.linalg.norm(aligned[i] - aligned[j]))
            if pose <= pose_threshold:
                pairs.append((i, j, pose, contact_distance(vectors[i], vectors[j])))
    pairs.sort(key=lambda p: (-p[3], p[2], p[0], p[1]))
    return pairs[:k]


# =============================================================================
# HAND POSE DIVERSITY
# =============================================================================

def _axis_rotation_angle(points: np.ndarray, reference: np.ndarray, axis: np.ndarray) -> float:
    """Angle about axis minimizing sum |R p - q|^2."""
    along = np.outer(points @ axis, axis)
    cosine_term = np.sum(reference * (points - along))
    sine_term = np.sum(reference * np.cross(axis, points))
    return float(np.arctan2(sine_term, cosine_term))


def normalize_and_align(skeleton: HandSkeleton, axis: Optional[Sequence[float]] = None,
                        reference: Optional[np.ndarray] = None) -> HandSkeleton:
    """
    Scale about the object origin so wrist-to-middle-knuckle is 0.1 m, then
    rotate about the symmetry axis to best match the reference palm joints.

    Without a reference the palm centroid is turned onto the direction of the
    axis-perpendicular part of +x (+y when the axis is x).

    Raises:
        AnalysisError: coincident wrist and middle knuckle
    """
    joints = skeleton.joints
    size = float(np.linalg.norm(joints[MIDDLE_KNUCKLE] - joints[0]))
    if size < 1e-12:
        raise AnalysisError("wrist and middle knuckle coincide")
    joints = joints * (REFERENCE_HAND_SIZE / size)
    if axis is None:
        return HandSkeleton(joints, skeleton.handedness)

    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    palm = joints[list(PALM_JOINTS)]
    if reference is None:
        seed = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        target = (seed - (seed @ axis) * axis)[None, :]
        source = palm.mean(axis=0, keepdims=True)
    else:
        reference = np.asarray(reference, dtype=np.float64)
        target = reference[list(PALM_JOINTS)] if reference.shape == (NUM_JOINTS, 3) else reference
        source = palm
    angle = _axis_rotation_angle(source, target, axis)
    rotation = Rotation.from_rotvec(axis * angle).as_matrix()
    return HandSkeleton(joints @ rotation.T, skeleton.handedness)


def align_corpus(skeletons: Sequence[HandSkeleton], axis: Optional[Sequence[float]] = None) -> List[HandSkeleton]:
    """Normalize every skeleton and align them all to the first one's palm."""
    if not skeletons:
        return []
    first = normalize_and_align(skeletons[0], axis)
    return [first] + [normalize_and_align(s, axis, first.joints) for s in skeletons[1:]]


def joint_stddev(skeletons: Sequence[HandSkeleton]) -> Tuple[np.ndarray, float]:
    """Per-joint sqrt of mean squared deviation from the joint's mean location, and their mean."""
    if len(skeletons) < 2:
        raise AnalysisError("joint standard deviation needs at least two grasps")
    stack = np.stack([s.joints for s in skeletons])
    deviation = np.sum((stack - stack.mean(axis=0)) ** 2, axis=2)
    per_joint = np.sqrt(deviation.mean(axis=0))
    return per_joint, float(per_joint.mean())


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    mean_intra_distance: float
    sizes: Dict[int, int] = field(default_factory=dict)


def cluster_poses(aligned: Sequence[HandSkeleton], threshold: float) -> ClusterResult:
    """
    Average-linkage clustering of flattened 63-d joint vectors cut at a distance.

    Labels are renumbered by first appearance in input order.
    """
    if len(aligned) < 2:
        raise AnalysisError("clustering needs at least two grasps")
    vectors = np.stack([s.joints.ravel() for s in aligned])
    distances = pdist(vectors)
    raw = fcluster(linkage(distances, method="average"), t=threshold, criterion="distance")
    mapping: Dict[int, int] = {}
    labels = np.array([mapping.setdefault(int(r), len(mapping)) for r in raw], dtype=np.int64)

    square = squareform(distances)
    same = (labels[:, None] == labels[None, :]) & ~np.eye(len(labels), dtype=bool)
    intra = float(square[same].mean()) if np.any(same) else 0.0
    sizes = {int(c): int(n) for c, n in zip(*np.unique(labels, return_counts=True))}
    logger.info(f"cluster_poses: {len(sizes)} clusters from {len(labels)} grasps at threshold {threshold}")
    return ClusterResult(labels, intra, sizes)


def cluster_statistics(intents: Sequence[str], aligned: Sequence[HandSkeleton],
                       threshold: float) -> Dict[str, ClusterResult]:
    """Cluster each intent's grasps separately to compare intra-cluster spread."""
    results = {}
    for intent in INTENTS:
        members = [s for s, i in zip(aligned, intents) if i == intent]
        if len(members) >= 2:
            results[intent] = cluster_poses(members, threshold)
    return results


# =============================================================================
# SPLITS AND FRAME SELECTION
# =============================================================================

def split(grasps: Union[GraspSet, Sequence[Grasp]], name: str) -> Dict[str, GraspSet]:
    """Hold out mug/pan/wine glass (object) or participants 5, 15, 25, 35, 45 (participant)."""
    grasps = list(grasps)
    if name == "object":
        held = [g.object_id in OBJECT_SPLIT for g in grasps]
    elif name == "participant":
        held = [g.participant in PARTICIPANT_SPLIT for g in grasps]
    else:
        raise AnalysisError(f"unknown split {name!r}; expected 'object' or 'participant'")
    return {
        "train": GraspSet(tuple(g for g, h in zip(grasps, held) if not h)),
        "test": GraspSet(tuple(g for g, h in zip(grasps, held) if h)),
    }


def equally_spaced_frames(n_frames: int, k: int) -> np.ndarray:
    """k frame indices spread evenly over [0, n_frames); all frames when k >= n_frames."""
    if n_frames < 1 or k < 1:
        raise AnalysisError("frame counts must be positive")
    if k >= n_frames:
        return np.arange(n_frames)
    return np.unique(np.round(np.linspace(0, n_frames - 1, k)).astype(np.int64))
