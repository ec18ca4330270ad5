"""
File formats for GraspKit artifacts.

This module reads and writes everything the command layer exchanges on disk:
- JSON documents (observations, skeletons, results, calibrations, scenarios)
- Binary little-endian PLY point clouds and contact maps
- Meshes in any format trimesh understands (OBJ, PLY, STL, ...)
- Feature matrices as flat float32 plus a JSON sidecar
- MLP checkpoints (magic, version, JSON header, float32 tensors)

Loaders raise StorageError for missing files and MalformedInputError (with
line/column when known) for unreadable content.

Author: GraspKit Team
Version: 1.0.0
"""

import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import trimesh

from services.analysis import Grasp
from services.contact import ContactMap
from services.errors import GraspKitError, MalformedInputError, StorageError
from services.features import DropoutRecord, FeatureMatrix
from services.geom import CameraIntrinsics, PointCloud, RigidTransform, TriMesh
from services.handmodel import HandSkeleton
from services.learner import MlpModel
from services.reconstruct import Camera, Detection2D, FramePose, GraspObservation, ReconstructionResult
from services.settings import GRASPKIT_OUTPUT_PRECISION

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GKMLP\x00"
CHECKPOINT_VERSION = 1


# =============================================================================
# JSON
# =============================================================================

def json_serializer(obj: Any) -> Any:
    """
    JSON serializer for numpy values.

    Raises:
        TypeError: If object type is not supported
    """
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, np.bool_)):
        return obj.item()
    raise TypeError(f"Object of type {type(obj)} is not JSON serializable")


def _rounded(value: Any, digits: int) -> Any:
    if isinstance(value, dict):
        return {k: _rounded(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return _rounded(value.tolist(), digits)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return None
        return float(f"{value:.{digits}g}")
    return value


def write_json(path: str, payload: Any, precision: int = GRASPKIT_OUTPUT_PRECISION) -> None:
    """Write JSON with floats cut to `precision` significant digits; NaN and inf become null."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(_rounded(payload, precision), handle, indent=2, sort_keys=True, default=json_serializer)
        handle.write("\n")


def _require(path: str) -> None:
    if not os.path.exists(path):
        raise StorageError(f"missing input file: {path}")


def read_json(path: str) -> Any:
    _require(path)
    with open(path) as handle:
        text = handle.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedInputError(path, e.msg, e.lineno, e.colno)


def _field(payload: dict, key: str, path: str = "<json>"):
    try:
        return payload[key]
    except (KeyError, TypeError):
        raise MalformedInputError(path, f"missing field {key!r}")


def transform_to_dict(transform: RigidTransform) -> dict:
    return {"rotation": transform.rotation, "translation": transform.translation}


def transform_from_dict(payload: dict, path: str = "<json>") -> RigidTransform:
    """Rotations are re-orthonormalized, text round trips lose a few digits."""
    rotation = np.asarray(_field(payload, "rotation", path), dtype=np.float64)
    translation = np.asarray(_field(payload, "translation", path), dtype=np.float64)
    if rotation.shape != (3, 3) or translation.shape != (3,):
        raise MalformedInputError(path, "transform needs a 3x3 rotation and a 3-vector translation")
    u, _, vt = np.linalg.svd(rotation)
    if np.linalg.det(u @ vt) < 0:
        raise MalformedInputError(path, "rotation is a reflection")
    return RigidTransform(u @ vt, translation)


# =============================================================================
# OBSERVATIONS AND RESULTS
# =============================================================================

def observation_to_dict(observation: GraspObservation) -> dict:
    return {
        "cameras": [{
            "id": c.camera_id,
            "intrinsics": {"fx": c.intrinsics.fx, "fy": c.intrinsics.fy, "cx": c.intrinsics.cx,
                           "cy": c.intrinsics.cy, "width": c.intrinsics.width, "height": c.intrinsics.height},
            "camera_T_world": transform_to_dict(c.extrinsics),
        } for c in observation.cameras],
        "frames": [{"id": f.frame_id, "world_T_object": transform_to_dict(f.world_T_object), "valid": f.valid}
                   for f in observation.frames],
        "detections": [{
            "frame": d.frame_id,
            "camera": d.camera_id,
            "hand": d.handedness,
            "keypoints": [None if w == 0 else list(k) for k, w in zip(d.keypoints.tolist(), d.confidence)],
            "confidence": d.confidence,
        } for d in observation.detections],
    }


def observation_from_dict(payload: dict, path: str = "<json>") -> GraspObservation:
    try:
        cameras = []
        for c in _field(payload, "cameras", path):
            k = _field(c, "intrinsics", path)
            intrinsics = CameraIntrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                                          int(k["width"]), int(k["height"]))
            cameras.append(Camera(int(c["id"]), intrinsics, transform_from_dict(c["camera_T_world"], path)))
        frames = [FramePose(int(f["id"]), transform_from_dict(f["world_T_object"], path), bool(f.get("valid", True)))
                  for f in _field(payload, "frames", path)]
        detections = []
        for d in _field(payload, "detections", path):
            keypoints = np.array([[np.nan, np.nan] if k is None else k for k in d["keypoints"]], dtype=np.float64)
            detections.append(Detection2D(int(d["frame"]), int(d["camera"]), keypoints,
                                          np.asarray(d["confidence"], dtype=np.float64), d.get("hand", "right")))
        return GraspObservation(tuple(cameras), tuple(frames), tuple(detections))
    except MalformedInputError:
        raise
    except (KeyError, TypeError, ValueError, GraspKitError) as e:
        raise MalformedInputError(path, f"invalid observation: {e}")


def skeletons_to_dict(skeletons) -> dict:
    return {"hands": {s.handedness: s.joints for s in skeletons}}


def skeletons_from_dict(payload: dict, path: str = "<json>") -> List[HandSkeleton]:
    hands = _field(payload, "hands", path)
    try:
        return [HandSkeleton(np.asarray(joints, dtype=np.float64), hand) for hand, joints in sorted(hands.items())]
    except (TypeError, ValueError, GraspKitError) as e:
        raise MalformedInputError(path, f"invalid skeleton: {e}")


def result_to_dict(results: Dict[str, ReconstructionResult]) -> dict:
    return {"hands": {
        hand: {
            "joints": r.joints,
            "inliers": [list(k) for k in r.inliers],
            "inlier_errors_px": r.inlier_errors,
            "mean_inlier_error_px": r.mean_inlier_error,
            "rescued_poses": {str(f): transform_to_dict(t) for f, t in sorted(r.rescued_poses.items())},
            "outlier_frames": list(r.outlier_frames),
        } for hand, r in sorted(results.items())
    }}


# =============================================================================
# PLY POINT CLOUDS AND CONTACT MAPS
# =============================================================================

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass(frozen=True, eq=False)
class PlyData:
    vertices: np.ndarray
    normals: Optional[np.ndarray] = None
    contact: Optional[np.ndarray] = None
    faces: Optional[np.ndarray] = None


def write_ply(path: str, vertices, normals=None, contact=None, faces=None) -> None:
    """Binary little-endian PLY with float32 positions and optional normals, contact and triangles."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    names = ["x", "y", "z"]
    columns = [vertices]
    if normals is not None:
        names += ["nx", "ny", "nz"]
        columns.append(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    if contact is not None:
        values = contact.values if isinstance(contact, ContactMap) else np.asarray(contact, dtype=np.float64)
        names.append("contact")
        columns.append(values.reshape(-1, 1))
    records = np.zeros(len(vertices), dtype=[(n, "<f4") for n in names])
    stacked = np.hstack(columns)
    for i, name in enumerate(names):
        records[name] = stacked[:, i]

    header = ["ply", "format binary_little_endian 1.0", "comment GraspKit",
              f"element vertex {len(vertices)}"]
    header += [f"property float {n}" for n in names]
    face_records = None
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        face_records = np.zeros(len(faces), dtype=[("count", "u1"), ("indices", "<i4", (3,))])
        face_records["count"] = 3
        face_records["indices"] = faces
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("ascii"))
        handle.write(records.tobytes())
        if face_records is not None:
            handle.write(face_records.tobytes())


def _ply_header(path: str, lines: List[str]) -> List[Tuple[str, int, list, int]]:
    """Elements as (name, count, properties, header line); every malformed line is reported by position."""
    elements: List[Tuple[str, int, list, int]] = []
    for number, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] != "binary_little_endian":
                raise MalformedInputError(path, f"unsupported PLY format {' '.join(parts[1:]) or '(none)'}", number, 1)
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise MalformedInputError(path, f"bad element declaration {line.strip()!r}", number, 1)
            elements.append((parts[1], int(parts[2]), [], number))
        elif parts[0] == "property":
            if not elements:
                raise MalformedInputError(path, "property before any element", number, 1)
            is_list = len(parts) == 5 and parts[1] == "list"
            types = parts[2:4] if is_list else parts[1:2]
            if not (is_list or len(parts) == 3) or any(t not in _PLY_TYPES for t in types):
                raise MalformedInputError(path, f"bad property declaration {line.strip()!r}", number, 1)
            elements[-1][2].append(parts[1:])
        else:
            raise MalformedInputError(path, f"unknown header keyword {parts[0]!r}", number, 1)
    return elements


def read_ply(path: str) -> PlyData:
    """Read a binary little-endian PLY with a vertex element and optional triangle faces."""
    _require(path)
    with open(path, "rb") as handle:
        data = handle.read()
    end = data.find(b"end_header")
    newline = data.find(b"\n", end)
    if not data.startswith(b"ply") or end < 0 or newline < 0:
        raise MalformedInputError(path, "not a PLY file")
    body = newline + 1
    elements = _ply_header(path, data[:end].decode("ascii", errors="replace").splitlines())

    offset = body
    result: Dict[str, Any] = {}
    for name, count, properties, number in elements:
        if not properties:
            raise MalformedInputError(path, f"element {name} has no properties", number, 1)
        if properties[0][0] == "list":
            if len(properties) != 1:
                raise MalformedInputError(path, f"{name} mixes a list with other properties", number, 1)
            _, count_type, index_type, _ = properties[0]
            dtype = np.dtype([("count", _PLY_TYPES[count_type]), ("indices", "<" + _PLY_TYPES[index_type], (3,))])
        else:
            if any(p[0] == "list" for p in properties):
                raise MalformedInputError(path, f"{name} mixes a list with other properties", number, 1)
            dtype = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in properties])
        if offset + dtype.itemsize * count > len(data):
            raise MalformedInputError(path, f"truncated {name} element")
        result[name] = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        if dtype.names[0] == "count" and count and np.any(result[name]["count"] != 3):
            raise MalformedInputError(path, "only triangle faces are supported")
        offset += dtype.itemsize * count

    if "vertex" not in result:
        raise MalformedInputError(path, "PLY has no vertex element")
    vertex = result["vertex"]
    names = vertex.dtype.names
    if not all(k in names for k in ("x", "y", "z")):
        raise MalformedInputError(path, "vertex element needs x, y and z")
    if "face" in result and "indices" not in result["face"].dtype.names:
        raise MalformedInputError(path, "face element needs a vertex index list")

    def columns(keys):
        return np.column_stack([vertex[k].astype(np.float64) for k in keys]) if all(k in names for k in keys) else None

    contact = vertex["contact"].astype(np.float64) if "contact" in names else None
    faces = result["face"]["indices"].astype(np.int64) if "face" in result else None
    return PlyData(columns(("x", "y", "z")), columns(("nx", "ny", "nz")), contact, faces)


def write_point_cloud(path: str, cloud: PointCloud, contact: Optional[ContactMap] = None) -> None:
    write_ply(path, cloud.points, cloud.normals, contact)


def read_point_cloud(path: str) -> PointCloud:
    ply = read_ply(path)
    if ply.normals is None:
        raise MalformedInputError(path, "point cloud has no normals")
    norms = np.linalg.norm(ply.normals, axis=1, keepdims=True)
    return PointCloud(ply.vertices, ply.normals / np.where(norms > 0, norms, 1.0))


def read_contact(path: str) -> ContactMap:
    """Contact values from a PLY `contact` property or a JSON array."""
    if path.lower().endswith(".json"):
        payload = read_json(path)
        values = payload.get("contact") if isinstance(payload, dict) else payload
        try:
            return ContactMap(np.asarray(values, dtype=np.float64))
        except (TypeError, ValueError, GraspKitError) as e:
            raise MalformedInputError(path, f"invalid contact values: {e}")
    ply = read_ply(path)
    if ply.contact is None:
        raise MalformedInputError(path, "PLY has no contact property")
    # float32 storage can push values a hair past the unit interval
    return ContactMap(np.clip(ply.contact, 0.0, 1.0))


# =============================================================================
# MESHES
# =============================================================================

def load_mesh(path: str) -> TriMesh:
    """Any mesh trimesh can read, vertex order preserved."""
    _require(path)
    try:
        mesh = trimesh.load(path, force="mesh", process=False)
    except Exception as e:
        raise MalformedInputError(path, f"cannot read mesh: {e}")
    return TriMesh.from_trimesh(mesh)


def save_mesh(path: str, mesh: TriMesh, contact: Optional[ContactMap] = None) -> None:
    """PLY keeps per-vertex contact; other extensions go through trimesh."""
    if path.lower().endswith(".ply"):
        write_ply(path, mesh.vertices, mesh.vertex_normals, contact, mesh.faces)
        return
    mesh.to_trimesh().export(path)


# =============================================================================
# FEATURE MATRICES
# =============================================================================

def write_features(path: str, features: FeatureMatrix) -> None:
    """`path` holds float32 rows; `path`.json describes them."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(np.ascontiguousarray(features.values, dtype="<f4").tobytes())
    sidecar = {
        "rows": len(features), "columns": features.dims, "family": features.family,
        "occupancy": features.occupancy, "dtype": "float32", "byte_order": "little",
        "hand_index": features.hand_index,
        "target_mask": features.target_mask,
        "dropout": None if features.dropout is None else {
            "dropped_joints": [list(j) for j in features.dropout.dropped_joints],
            "camera_position": list(features.dropout.camera_position),
        },
    }
    write_json(path + ".json", sidecar)


def read_features(path: str) -> FeatureMatrix:
    meta = read_json(path + ".json")
    _require(path)
    raw = np.fromfile(path, dtype="<f4")
    rows, cols = int(_field(meta, "rows", path)), int(_field(meta, "columns", path))
    if raw.size != rows * cols:
        raise MalformedInputError(path, f"expected {rows}x{cols} float32 values, found {raw.size}")
    dropout = meta.get("dropout")
    record = None if dropout is None else DropoutRecord(
        tuple(tuple(j) for j in dropout["dropped_joints"]), tuple(dropout["camera_position"]))
    mask = meta.get("target_mask")
    return FeatureMatrix(raw.reshape(rows, cols).astype(np.float64), meta["family"],
                         np.asarray(meta["hand_index"], dtype=np.int64), None, bool(meta.get("occupancy")),
                         None if mask is None else np.asarray(mask, dtype=bool), record)


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(path: str, model: MlpModel, config_hash: str = "", family: str = "") -> None:
    """Magic, uint32 version, uint32 header length, JSON header, little-endian float32 tensors."""
    tensors = [("param:" + k, v) for k, v in sorted(model.params.items())]
    tensors += [("buffer:" + k, v) for k, v in sorted(model.buffers.items())]
    header = json.dumps({
        "input_dim": model.input_dim,
        "hidden": list(model.hidden),
        "num_classes": model.num_classes,
        "config_hash": config_hash,
        "family": family,
        "tensors": [{"name": name, "shape": list(value.shape)} for name, value in tensors],
    }, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        handle.write(header)
        for _, value in tensors:
            handle.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> Tuple[MlpModel, str, str]:
    """Model (float64 tensors), the config hash it was trained with and its feature family ("" if unrecorded)."""
    _require(path)
    with open(path, "rb") as handle:
        data = handle.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise MalformedInputError(path, "not a GraspKit checkpoint")
    start = len(CHECKPOINT_MAGIC)
    version, length = struct.unpack_from("<II", data, start)
    if version != CHECKPOINT_VERSION:
        raise MalformedInputError(path, f"unsupported checkpoint version {version}")
    start += 8
    try:
        header = json.loads(data[start:start + length].decode("utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedInputError(path, f"checkpoint header: {e.msg}", e.lineno, e.colno)
    offset = start + length
    params, buffers = {}, {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(data):
            raise MalformedInputError(path, "truncated checkpoint")
        value = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 4 * count
        kind, name = entry["name"].split(":", 1)
        (params if kind == "param" else buffers)[name] = value
    model = MlpModel(int(header["input_dim"]), tuple(header["hidden"]), params, buffers,
                     int(header.get("num_classes", 10)))
    return model, header.get("config_hash", ""), header.get("family", "")


# =============================================================================
# GRASP DIRECTORIES
# =============================================================================

GRASP_MESH = "object.ply"
GRASP_JOINTS = "gt_joints.json"
GRASP_META = "grasp.json"


def write_grasp(directory: str, grasp: Grasp, extra: Optional[Dict[str, Any]] = None) -> None:
    """object.ply (mesh + contact), gt_joints.json and grasp.json."""
    os.makedirs(directory, exist_ok=True)
    save_mesh(os.path.join(directory, GRASP_MESH), grasp.mesh, grasp.contact)
    write_json(os.path.join(directory, GRASP_JOINTS), skeletons_to_dict(grasp.hands))
    meta = {"object_id": grasp.object_id, "intent": grasp.intent, "participant": grasp.participant,
            "grasp_id": grasp.grasp_id, "symmetry_axis": grasp.symmetry_axis}
    if extra:
        meta.update(extra)
    write_json(os.path.join(directory, GRASP_META), meta)


def read_grasp(directory: str) -> Grasp:
    mesh_path = os.path.join(directory, GRASP_MESH)
    ply = read_ply(mesh_path)
    if ply.faces is None or ply.contact is None:
        raise MalformedInputError(mesh_path, "grasp mesh needs faces and a contact property")
    mesh = TriMesh(ply.vertices, ply.faces)
    skeletons = skeletons_from_dict(read_json(os.path.join(directory, GRASP_JOINTS)), directory)
    meta_path = os.path.join(directory, GRASP_META)
    meta = read_json(meta_path) if os.path.exists(meta_path) else {}
    axis = meta.get("symmetry_axis")
    try:
        return Grasp(meta.get("object_id", os.path.basename(directory.rstrip(os.sep))), meta.get("intent", "use"),
                     int(meta.get("participant", 0)), ContactMap(np.clip(ply.contact, 0.0, 1.0)), tuple(skeletons),
                     mesh, meta.get("grasp_id", ""), None if axis is None else tuple(axis))
    except GraspKitError as e:
        raise MalformedInputError(directory, f"invalid grasp: {e}")


def grasp_directories(corpus: str) -> List[str]:
    """Sorted sub-directories of a corpus that contain a grasp mesh."""
    if not os.path.isdir(corpus):
        raise StorageError(f"missing corpus directory: {corpus}")
    return [os.path.join(corpus, name) for name in sorted(os.listdir(corpus))
            if os.path.exists(os.path.join(corpus, name, GRASP_MESH))]
