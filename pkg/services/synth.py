"""
Synthetic grasp generator.

Builds fully known grasps for end-to-end checks: a parametric object, one or
two kinematic hands closed onto it, a contact map derived from the hand
proxy, a ring of cameras, an object trajectory and noisy 2D detections with
planted outliers.

Key Features:
- Sphere / box / cylinder / torus objects with exact signed distance functions
- Hand placement by descent to a clearance, then staged finger closing
- Ground-truth contact from a 4 mm proxy distance falloff
- Detection noise, confidences tied to realized noise, keypoint dropout,
  corrupted detections and corrupted object poses
- Parameter sweeps reported as pandas DataFrames

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import trimesh
from scipy.spatial.transform import Rotation

from services.analysis import OBJECT_CATALOG, Grasp, GraspSet
from services.contact import ContactMap
from services.errors import ConfigError, GraspKitError, ScenarioInfeasibleError
from services.geom import CameraIntrinsics, RigidTransform, TriMesh, project_points
from services.handmodel import (
    FINGERTIP_PHALANGES,
    FLEXION_LIMITS,
    NUM_BETA,
    NUM_JOINTS,
    HandSkeleton,
    KinematicHand,
    ProxyConfig,
    build_proxy,
    forward_kinematics,
    proxy_signed_distance,
)
from services.reconstruct import (
    Camera,
    Detection2D,
    FramePose,
    GraspObservation,
    RansacParams,
    reconstruct_grasp,
)
from services.settings import thread_count

logger = logging.getLogger(__name__)

SHAPES = ("sphere", "box", "cylinder", "torus")
SHAPE_DIMENSIONS = {"sphere": 1, "box": 3, "cylinder": 2, "torus": 2}
MAX_EDGE = 0.004
CONTACT_FALLOFF = 0.004
CLEARANCE = 0.002
TOUCH_TOLERANCE = 5e-4
FLEX_STEP = np.radians(2.0)
AXIS_SAMPLES = 16
SWEEP_AXES = ("noise", "outliers", "cameras")
SWEEP_COLUMNS = ["axis", "value", "seed", "mean_error_m", "status", "error"]

# finger angle slots: mcp flexion, mcp abduction, pip flexion, dip flexion
FLEX_SLOTS = (0, 2, 3)


# =============================================================================
# OBJECTS
# =============================================================================

@dataclass(frozen=True)
class ObjectSpec:
    """
    Parametric object centered at the origin (meters).

    Dimensions: sphere (radius), box (x, y, z extents), cylinder (radius,
    height along z), torus (major radius, minor radius, around z).
    """

    shape: str = "sphere"
    dimensions: Tuple[float, ...] = (0.04,)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown object shape {self.shape!r}; expected one of {SHAPES}")
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != SHAPE_DIMENSIONS[self.shape] or min(dims) <= 0:
            raise ConfigError(f"{self.shape} needs {SHAPE_DIMENSIONS[self.shape]} positive dimensions")
        if self.shape == "torus" and dims[1] >= dims[0]:
            raise ConfigError("torus minor radius must be below the major radius")
        object.__setattr__(self, "dimensions", dims)

    @property
    def symmetry_axis(self) -> Optional[Tuple[float, float, float]]:
        return None if self.shape == "box" else (0.0, 0.0, 1.0)

    @property
    def bounding_radius(self) -> float:
        d = self.dimensions
        if self.shape == "sphere":
            return d[0]
        if self.shape == "box":
            return 0.5 * float(np.linalg.norm(d))
        if self.shape == "cylinder":
            return float(np.hypot(d[0], 0.5 * d[1]))
        return d[0] + d[1]

    def sdf(self, points) -> np.ndarray:
        """Exact signed distance, negative inside."""
        p = np.asarray(points, dtype=np.float64)
        d = self.dimensions
        if self.shape == "sphere":
            return np.linalg.norm(p, axis=-1) - d[0]
        if self.shape == "box":
            q = np.abs(p) - 0.5 * np.asarray(d)
            return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)
        radial = np.linalg.norm(p[..., :2], axis=-1)
        if self.shape == "cylinder":
            q = np.stack([radial - d[0], np.abs(p[..., 2]) - 0.5 * d[1]], axis=-1)
            return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)
        return np.hypot(radial - d[0], p[..., 2]) - d[1]

    def mesh(self) -> TriMesh:
        """Watertight triangulation with edges no longer than 4 mm."""
        d = self.dimensions
        if self.shape == "sphere":
            base = trimesh.creation.icosphere(subdivisions=3, radius=d[0])
        elif self.shape == "box":
            base = trimesh.creation.box(extents=d)
        elif self.shape == "cylinder":
            base = trimesh.creation.cylinder(radius=d[0], height=d[1], sections=64)
        else:
            base = trimesh.creation.torus(major_radius=d[0], minor_radius=d[1],
                                          major_sections=64, minor_sections=24)
        vertices, faces = trimesh.remesh.subdivide_to_size(base.vertices, base.faces, max_edge=MAX_EDGE)
        # merge the duplicated edge midpoints so the surface stays closed
        merged = trimesh.Trimesh(vertices=vertices, faces=faces, process=True)
        return TriMesh.from_trimesh(merged)


def catalog_object(name: str) -> ObjectSpec:
    """Stand-in shape for a catalog object; the same name always maps to the same shape."""
    names = list(OBJECT_CATALOG)
    if name not in names:
        raise ConfigError(f"{name!r} is not a catalog object")
    index = names.index(name)
    shape = SHAPES[index % len(SHAPES)]
    variant = 0.004 * (index // len(SHAPES) % 3)
    if shape == "sphere":
        return ObjectSpec("sphere", (0.035 + variant,))
    if shape == "box":
        return ObjectSpec("box", (0.06 + variant, 0.045, 0.09))
    if shape == "cylinder":
        return ObjectSpec("cylinder", (0.03 + variant, 0.1))
    return ObjectSpec("torus", (0.045 + variant, 0.016))


# =============================================================================
# SCENARIOS
# =============================================================================

@dataclass(frozen=True)
class ScenarioNoise:
    """Detection noise (pixels) and outlier rates (fractions)."""

    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    dropout_rate: float = 0.0
    corrupted_fraction: float = 0.0

    def __post_init__(self):
        if min(self.pixel_sigma, self.outlier_fraction, self.dropout_rate, self.corrupted_fraction) < 0:
            raise ConfigError("noise parameters must be non-negative")
        if max(self.outlier_fraction, self.dropout_rate, self.corrupted_fraction) > 1:
            raise ConfigError("noise fractions must not exceed 1")


@dataclass(frozen=True)
class RigSpec:
    radius: float = 0.8
    height: float = 0.4
    width: int = 1920
    image_height: int = 1080
    focal: float = 1050.0


@dataclass(frozen=True)
class SynthScenario:
    object: ObjectSpec = field(default_factory=ObjectSpec)
    hands: Tuple[str, ...] = ("right",)
    beta: Tuple[float, ...] = (1.0,) * NUM_BETA
    cameras: int = 3
    frames: int = 50
    noise: ScenarioNoise = field(default_factory=ScenarioNoise)
    rig: RigSpec = field(default_factory=RigSpec)
    seed: int = 0
    contact_falloff: float = CONTACT_FALLOFF
    object_id: str = ""
    intent: str = "use"
    participant: int = 1

    def __post_init__(self):
        if self.frames < 2 or self.cameras < 1:
            raise ConfigError("a scenario needs at least 2 frames and 1 camera")
        hands = tuple(self.hands)
        if not hands or len(set(hands)) != len(hands) or not set(hands) <= {"right", "left"}:
            raise ConfigError("hands must be 'right', 'left' or both, each at most once")
        if len(self.beta) != NUM_BETA or min(self.beta) <= 0:
            raise ConfigError(f"beta needs {NUM_BETA} positive values")
        if self.contact_falloff <= 0:
            raise ConfigError("contact falloff must be positive")
        object.__setattr__(self, "hands", hands)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthScenario":
        """Build from a JSON mapping; unknown keys raise ConfigError."""
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        values = dict(payload)
        try:
            if "object" in values:
                values["object"] = ObjectSpec(**values["object"])
            if "noise" in values:
                values["noise"] = ScenarioNoise(**values["noise"])
            if "rig" in values:
                values["rig"] = RigSpec(**values["rig"])
            for key in ("hands", "beta"):
                if key in values:
                    values[key] = tuple(values[key])
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"malformed scenario: {e}")


# =============================================================================
# HAND PLACEMENT
# =============================================================================

def _hand_frame(direction: np.ndarray, fingers: np.ndarray) -> np.ndarray:
    """Root rotation sending the template's finger axis to `fingers` and its back (+z) to `direction`."""
    return np.column_stack([np.cross(fingers, direction), fingers, direction])


def _kinematic(beta, rotation: np.ndarray, wrist: np.ndarray, angles: np.ndarray, handedness: str) -> KinematicHand:
    theta = np.concatenate([Rotation.from_matrix(rotation).as_rotvec(), wrist, angles.ravel()])
    return KinematicHand(np.asarray(beta), theta, handedness)


def _capsule_gaps(spec: ObjectSpec, skeleton: HandSkeleton, radii: np.ndarray) -> np.ndarray:
    """Per-capsule signed gap to the object, sampled along each bone."""
    segments = skeleton.segments
    t = np.linspace(0.0, 1.0, AXIS_SAMPLES)[None, :, None]
    samples = segments[:, None, 0] + t * (segments[:, None, 1] - segments[:, None, 0])
    return spec.sdf(samples).min(axis=1) - radii


def _hand_gap(spec: ObjectSpec, skeleton: HandSkeleton, config: ProxyConfig) -> float:
    proxy = build_proxy(skeleton, config)
    capsules = _capsule_gaps(spec, skeleton, proxy.radii).min()
    if not proxy.has_palm:
        return float(capsules)
    # palm slab: test its two faces on a fan of palm-joint combinations
    weights = np.vstack([np.eye(6), np.full((1, 6), 1.0 / 6.0), 0.5 * (np.eye(6) + np.roll(np.eye(6), 1, axis=1))])
    inner = weights @ proxy.palm_points
    offsets = 0.5 * proxy.palm_thickness * proxy.palm_normal
    palm = spec.sdf(np.vstack([inner + offsets, inner - offsets])).min()
    return float(min(capsules, palm))


def _descend(spec: ObjectSpec, beta, rotation, direction, fingers, offset, angles, handedness,
             config) -> Optional[np.ndarray]:
    """Wrist position that leaves the straight hand CLEARANCE above the object, or None."""
    def gap(h: float) -> float:
        wrist = direction * h - fingers * offset
        return _hand_gap(spec, forward_kinematics(_kinematic(beta, rotation, wrist, angles, handedness)), config)

    lo, hi = 0.0, spec.bounding_radius + 0.3
    if gap(lo) >= CLEARANCE or gap(hi) <= CLEARANCE:
        return None
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if gap(mid) > CLEARANCE:
            hi = mid
        else:
            lo = mid
    return direction * hi - fingers * offset


def _close_finger(spec, beta, rotation, wrist, angles, finger, handedness, radii) -> bool:
    """
    Flex one finger until its distal capsule touches the object.

    All three flexion joints move together in 2 degree steps; a joint whose
    bone would penetrate first is frozen. The final step is bisected.
    """
    upper = FLEXION_LIMITS[1]
    first = 4 * finger

    def gaps(candidate: np.ndarray) -> np.ndarray:
        skeleton = forward_kinematics(_kinematic(beta, rotation, wrist, candidate, handedness))
        return _capsule_gaps(spec, skeleton, radii)[first:first + 4]

    active = list(FLEX_SLOTS)
    while active:
        trial = angles.copy()
        row = trial[finger]
        row[active] = np.minimum(row[active] + FLEX_STEP, upper)
        if np.allclose(trial[finger], angles[finger]):
            return False
        finger_gaps = gaps(trial)
        if finger_gaps[3] <= 0:
            lo, hi = 0.0, 1.0
            start, stop = angles[finger].copy(), trial[finger].copy()
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                angles[finger] = start + mid * (stop - start)
                if gaps(angles)[3] > 0:
                    lo = mid
                else:
                    hi = mid
            angles[finger] = start + hi * (stop - start)
            return abs(gaps(angles)[3]) <= TOUCH_TOLERANCE
        if finger_gaps[1] < 0 and 0 in active:
            active.remove(0)
            continue
        if finger_gaps[2] < 0 and 2 in active:
            for slot in (0, 2):
                if slot in active:
                    active.remove(slot)
            continue
        angles[finger] = trial[finger]
    return False


def _approaches(rng: np.random.Generator, flip: bool) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Seeded approach first, then the canonical axes."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    fingers = np.cross(direction, rng.normal(size=3))
    fingers /= np.linalg.norm(fingers)
    candidates = [(direction, fingers)]
    for d, f in (((1, 0, 0), (0, 0, 1)), ((0, 1, 0), (0, 0, 1)), ((-1, 0, 0), (0, 0, 1)),
                 ((0, -1, 0), (0, 0, 1)), ((0, 0, 1), (0, 1, 0)), ((0, 0, -1), (1, 0, 0))):
        candidates.append((np.array(d, dtype=np.float64), np.array(f, dtype=np.float64)))
    if flip:
        candidates = [(-d, f) for d, f in candidates]
    return candidates


def pose_hand(spec: ObjectSpec, handedness: str, beta: Sequence[float], rng: np.random.Generator,
              flip: bool = False, config: ProxyConfig = ProxyConfig()) -> KinematicHand:
    """
    Place a hand on the object with at least three fingertips touching.

    Raises:
        ScenarioInfeasibleError: no approach closes three fingertips onto the object
    """
    radii = config.radii()
    for direction, fingers in _approaches(rng, flip):
        rotation = _hand_frame(direction, fingers)
        for offset in (0.05, 0.035, 0.065):
            angles = np.zeros((5, 4))
            wrist = _descend(spec, beta, rotation, direction, fingers, offset, angles, handedness, config)
            if wrist is None:
                continue
            touching = [f for f in range(5)
                        if _close_finger(spec, beta, rotation, wrist, angles, f, handedness, radii)]
            if len(touching) >= 3:
                logger.debug(f"pose_hand: {handedness} touches with fingers {touching} at offset {offset}")
                return _kinematic(beta, rotation, wrist, angles, handedness)
    raise ScenarioInfeasibleError(f"no {handedness} hand pose reaches three fingertip contacts on the {spec.shape}")


def fingertip_gaps(spec: ObjectSpec, skeleton: HandSkeleton, config: ProxyConfig = ProxyConfig()) -> np.ndarray:
    return _capsule_gaps(spec, skeleton, config.radii())[list(FINGERTIP_PHALANGES)]


def ground_truth_contact(mesh: TriMesh, skeletons: Sequence[HandSkeleton],
                         falloff: float = CONTACT_FALLOFF) -> ContactMap:
    """clamp((d0 - s) / d0, 0, 1) with s the proxy signed distance of each vertex."""
    distance = np.min([proxy_signed_distance(build_proxy(s), mesh.vertices) for s in skeletons], axis=0)
    return ContactMap(np.clip((falloff - distance) / falloff, 0.0, 1.0))


# =============================================================================
# CAMERAS, TRAJECTORY AND DETECTIONS
# =============================================================================

def look_at(position: np.ndarray, target: np.ndarray = np.zeros(3)) -> RigidTransform:
    """camera_T_world for a camera at position looking at target (x right, y down)."""
    forward = target - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return RigidTransform(rotation, -rotation @ position)


def camera_rig(count: int, rig: RigSpec = RigSpec()) -> Tuple[Camera, ...]:
    intrinsics = CameraIntrinsics(rig.focal, rig.focal, 0.5 * rig.width, 0.5 * rig.image_height,
                                  rig.width, rig.image_height)
    cameras = []
    for c in range(count):
        angle = 2.0 * np.pi * c / count
        position = np.array([rig.radius * np.cos(angle), rig.radius * np.sin(angle), rig.height])
        cameras.append(Camera(c, intrinsics, look_at(position)))
    return tuple(cameras)


def trajectory(frames: int, rng: np.random.Generator) -> List[RigidTransform]:
    """Half a turn about z with a seeded wobble and drift."""
    phase = rng.uniform(0.0, 2.0 * np.pi)
    poses = []
    for i in range(frames):
        s = 2.0 * np.pi * i / frames
        rotation = Rotation.from_euler("zxy", [0.5 * s, 0.35 * np.sin(s + phase), 0.25 * np.cos(s)])
        translation = [0.03 * np.sin(s), 0.03 * np.cos(s + phase), 0.02 * np.sin(2.0 * s)]
        poses.append(RigidTransform(rotation.as_matrix(), translation))
    return poses


def _pose_error(rng: np.random.Generator) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(30.0, 180.0))
    return RigidTransform(Rotation.from_rotvec(axis * angle).as_matrix(), np.zeros(3))


@dataclass(frozen=True, eq=False)
class SynthResult:
    scenario: SynthScenario
    observation: GraspObservation
    hands: Tuple[KinematicHand, ...]
    skeletons: Tuple[HandSkeleton, ...]
    contact: ContactMap
    mesh: TriMesh
    grasp: Grasp
    true_poses: Tuple[RigidTransform, ...]
    outlier_frames: Tuple[int, ...] = ()
    corrupted_detections: Tuple[Tuple[int, int], ...] = ()

    @cached_property
    def joints(self) -> Dict[str, np.ndarray]:
        return {s.handedness: s.joints for s in self.skeletons}


def build_grasp(scenario: SynthScenario, rng: Optional[np.random.Generator] = None):
    """Posed hands, mesh, contact and the GraspSet entry of a scenario."""
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    mesh = scenario.object.mesh()
    hands = tuple(pose_hand(scenario.object, h, scenario.beta, rng, flip=k > 0)
                  for k, h in enumerate(scenario.hands))
    skeletons = tuple(forward_kinematics(h) for h in hands)
    contact = ground_truth_contact(mesh, skeletons, scenario.contact_falloff)
    grasp = Grasp(scenario.object_id or scenario.object.shape, scenario.intent, scenario.participant,
                  contact, skeletons, mesh, grasp_id=f"synth-{scenario.seed}",
                  symmetry_axis=scenario.object.symmetry_axis)
    return hands, skeletons, mesh, contact, grasp


def generate(scenario: SynthScenario) -> SynthResult:
    """
    Generate a complete synthetic grasp and its multi-view observation.

    Raises:
        ScenarioInfeasibleError: the hand cannot be closed onto the object
    """
    rng = np.random.default_rng(scenario.seed)
    hands, skeletons, mesh, contact, grasp = build_grasp(scenario, rng)
    noise = scenario.noise

    cameras = camera_rig(scenario.cameras, scenario.rig)
    poses = trajectory(scenario.frames, rng)
    n_outliers = int(round(noise.outlier_fraction * scenario.frames))
    outliers = tuple(sorted(int(i) for i in rng.choice(scenario.frames, size=n_outliers, replace=False)))
    frames = []
    for i, pose in enumerate(poses):
        recorded = pose @ _pose_error(rng) if i in outliers else pose
        frames.append(FramePose(i, recorded))

    keys = [(i, camera.camera_id) for i in range(scenario.frames) for camera in cameras]
    n_corrupt = int(round(noise.corrupted_fraction * len(keys)))
    corrupted = tuple(sorted(keys[int(k)] for k in rng.choice(len(keys), size=n_corrupt, replace=False)))

    detections = []
    for (i, camera_id) in keys:
        camera = cameras[camera_id]
        for skeleton in skeletons:
            world = poses[i].apply(skeleton.joints)
            pixels, _ = project_points(world, camera.intrinsics, camera.extrinsics)
            offset = rng.normal(size=(NUM_JOINTS, 2)) * noise.pixel_sigma
            if noise.pixel_sigma > 0:
                confidence = np.exp(-np.sum(offset ** 2, axis=1) / (2.0 * noise.pixel_sigma ** 2))
            else:
                confidence = np.ones(NUM_JOINTS)
            confidence = np.clip(confidence, 0.1, 1.0)
            keypoints = pixels + offset
            if (i, camera_id) in corrupted:
                keypoints = rng.uniform([0.0, 0.0], [scenario.rig.width, scenario.rig.image_height],
                                        size=(NUM_JOINTS, 2))
            dropped = rng.random(NUM_JOINTS) < noise.dropout_rate
            keypoints[dropped] = np.nan
            confidence[dropped] = 0.0
            detections.append(Detection2D(i, camera_id, keypoints, confidence, skeleton.handedness))

    observation = GraspObservation(cameras, tuple(frames), tuple(detections))
    logger.info(f"generate: seed {scenario.seed}, {len(detections)} detections, "
                f"{len(outliers)} corrupted poses, {len(corrupted)} corrupted detections")
    return SynthResult(scenario, observation, hands, skeletons, contact, mesh, grasp, tuple(poses),
                       outliers, corrupted)


# =============================================================================
# SWEEPS AND CORPORA
# =============================================================================

def _with_axis(template: SynthScenario, axis: str, value: float, seed: int) -> SynthScenario:
    if axis == "noise":
        return replace(template, noise=replace(template.noise, pixel_sigma=float(value)), seed=seed)
    if axis == "outliers":
        return replace(template, noise=replace(template.noise, outlier_fraction=float(value)), seed=seed)
    return replace(template, cameras=int(value), seed=seed)


def reconstruction_error(result: SynthResult, params: RansacParams = RansacParams()) -> float:
    """Mean joint error (m) of the reconstructed hands against ground truth."""
    estimates = reconstruct_grasp(result.observation, params)
    errors = [np.linalg.norm(estimates[h].joints - joints, axis=1).mean() for h, joints in result.joints.items()]
    return float(np.mean(errors))


def _sweep_cell(template: SynthScenario, axis: str, value: float, seed: int, params: RansacParams) -> dict:
    row = {"axis": axis, "value": value, "seed": seed, "mean_error_m": np.nan, "status": "success", "error": ""}
    try:
        row["mean_error_m"] = reconstruction_error(generate(_with_axis(template, axis, value, seed)), params)
    except GraspKitError as e:
        logger.warning(f"sweep: {axis}={value} seed {seed} failed: {e}")
        row["status"], row["error"] = "error", str(e)
    return row


def sweep(template: SynthScenario, axis: str, values: Sequence[float], seeds: Sequence[int] = (0,),
          params: RansacParams = RansacParams()) -> pd.DataFrame:
    """One generate + reconstruct per (value, seed); failing cells are recorded and skipped."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    cells = [(v, s) for v in values for s in seeds]
    if not cells:
        return pd.DataFrame(columns=SWEEP_COLUMNS)
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        rows = list(pool.map(lambda cell: _sweep_cell(template, axis, cell[0], cell[1], params), cells))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def summarize_sweep(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean reconstruction error and success count per swept value."""
    if frame.empty:
        return pd.DataFrame(columns=["value", "mean_error_m", "succeeded"])
    ok = frame[frame["status"] == "success"]
    summary = ok.groupby("value")["mean_error_m"].agg(["mean", "count"]).reset_index()
    return summary.rename(columns={"mean": "mean_error_m", "count": "succeeded"})


def generate_corpus(template: SynthScenario, n_grasps: int, seed: int = 0, max_attempts: int = 10) -> GraspSet:
    """
    Synthetic GraspSet over catalog objects, intents and participants 1..50.

    Objects map to fixed stand-in shapes so grasps of one object share a mesh.
    """
    rng = np.random.default_rng(seed)
    names = list(OBJECT_CATALOG)
    grasps = []
    for index in range(n_grasps):
        for attempt in range(max_attempts):
            name = names[int(rng.integers(len(names)))]
            intents = OBJECT_CATALOG[name]
            scenario = replace(template, object=catalog_object(name), object_id=name,
                               intent=intents[int(rng.integers(len(intents)))],
                               participant=int(rng.integers(1, 51)), seed=int(rng.integers(2 ** 31)))
            try:
                grasps.append(build_grasp(scenario)[4])
                break
            except ScenarioInfeasibleError as e:
                logger.debug(f"generate_corpus: grasp {index} attempt {attempt} infeasible: {e}")
        else:
            raise ScenarioInfeasibleError(f"grasp {index} stayed infeasible after {max_attempts} attempts")
    return GraspSet(tuple(grasps))
