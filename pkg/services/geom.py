"""
Geometry primitives shared by every GraspKit service.

This module owns the immutable geometry types (meshes, point clouds, rigid
transforms, pinhole intrinsics, voxel grids) and the spatial queries the rest
of the pipeline is built on: nearest point on a triangle set, point-to-segment
distance, camera projection, surface sampling, inside/outside tests and
64-cubed voxelization.

Key Features:
- Area-weighted vertex normals with degenerate-star reporting
- Deterministic, area-uniform surface sampling
- Exact closest-point queries accelerated by a centroid KD-tree
- Ray-parity inside tests and interior fill with jitter-and-retry
- Separating-axis triangle/voxel overlap for surface voxels

Units are meters everywhere; conversion to mm or cm2 happens only in reports.

Author: GraspKit Team
Version: 1.0.0
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import trimesh
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from services.errors import BehindCameraError, EmptyMeshError, GeometryError

logger = logging.getLogger(__name__)

NORMAL_TOLERANCE = 1e-6
ROTATION_TOLERANCE = 1e-9
VOXEL_RESOLUTION = 64

# Sampling density used to size point clouds: 25 points per cm2, clamped
POINTS_PER_SQUARE_METER = 25.0e4
MIN_SURFACE_POINTS = 1000
MAX_SURFACE_POINTS = 30000


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _normalize_rows(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return unit rows and the original norms."""
    norms = np.linalg.norm(vectors, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    return vectors / safe[..., None], norms


# =============================================================================
# RIGID TRANSFORMS AND CAMERAS
# =============================================================================

@dataclass(frozen=True)
class RigidTransform:
    """
    Proper rigid motion p -> R p + t.

    Attributes:
        rotation: 3x3 proper orthogonal matrix
        translation: 3-vector in meters
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(rotation)) or not np.all(np.isfinite(translation)):
            raise GeometryError("rigid transform contains non-finite values")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE or not np.allclose(
            rotation @ rotation.T, np.eye(3), atol=ROTATION_TOLERANCE, rtol=0.0
        ):
            raise GeometryError("rotation is not proper orthogonal")
        object.__setattr__(self, "rotation", _readonly(rotation))
        object.__setattr__(self, "translation", _readonly(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise GeometryError(f"expected a 4x4 matrix, got shape {matrix.shape}")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "RigidTransform":
        rotation = Rotation.from_rotvec(np.array(rotvec, dtype=np.float64)).as_matrix()
        return cls(rotation, translation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def as_rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        rotation = self.rotation @ other.rotation
        # re-orthonormalize so long chains stay within tolerance
        u, _, vt = np.linalg.svd(rotation)
        return RigidTransform(u @ vt, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_direction(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise GeometryError("principal point lies outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project_points(points, intrinsics: CameraIntrinsics,
                   transform: RigidTransform) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pinhole projection without the depth check.

    Returns:
        (pixels (n,2), depths (n,)); pixels are undefined where depth <= 0
    """
    camera_points = transform.apply(np.atleast_2d(points))
    depth = camera_points[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    u = intrinsics.fx * camera_points[:, 0] / safe + intrinsics.cx
    v = intrinsics.fy * camera_points[:, 1] / safe + intrinsics.cy
    return np.stack([u, v], axis=1), depth


def project(point, intrinsics: CameraIntrinsics, transform: RigidTransform) -> np.ndarray:
    """
    Project world points to pixels through the camera transform.

    Raises:
        BehindCameraError: if any transformed point has non-positive depth
    """
    single = np.asarray(point).ndim == 1
    pixels, depth = project_points(point, intrinsics, transform)
    if np.any(depth <= 0):
        raise BehindCameraError(f"{int(np.sum(depth <= 0))} point(s) behind the camera")
    return pixels[0] if single else pixels


def backproject(pixel, depth, intrinsics: CameraIntrinsics,
                transform: RigidTransform) -> np.ndarray:
    """Inverse of project for a known camera-frame depth."""
    single = np.asarray(pixel).ndim == 1
    pixel = np.atleast_2d(np.asarray(pixel, dtype=np.float64))
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (pixel.shape[0],))
    x = (pixel[:, 0] - intrinsics.cx) / intrinsics.fx * depth
    y = (pixel[:, 1] - intrinsics.cy) / intrinsics.fy * depth
    world = transform.inverse().apply(np.stack([x, y, depth], axis=1))
    return world[0] if single else world


# =============================================================================
# SEGMENTS
# =============================================================================

def point_segment_distance(p, a, b) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distance from points to closed segments [a, b]; all arguments broadcast.

    Returns:
        (distance (...), closest point on the segment (..., 3))
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    safe = np.where(denom > 0, denom, 1.0)
    t = np.where(denom > 0, np.sum((p - a) * ab, axis=-1) / safe, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1), closest


# =============================================================================
# MESHES AND POINT CLOUDS
# =============================================================================

@dataclass(frozen=True)
class PointCloud:
    """
    Points sampled from (or aligned with) an object surface.

    Attributes:
        points: (n,3) positions in meters
        normals: (n,3) unit normals
        face_ids: optional source face per point
    """

    points: np.ndarray
    normals: np.ndarray
    face_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        normals = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(points) != len(normals):
            raise GeometryError("points and normals differ in length")
        if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > NORMAL_TOLERANCE:
            raise GeometryError("point cloud normals are not unit length")
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "normals", _readonly(normals))
        if self.face_ids is not None:
            face_ids = np.array(self.face_ids, dtype=np.int64).reshape(-1)
            if len(face_ids) != len(points):
                raise GeometryError("face provenance differs in length from points")
            object.__setattr__(self, "face_ids", _readonly(face_ids))

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, transform: RigidTransform) -> "PointCloud":
        return PointCloud(transform.apply(self.points),
                          transform.apply_direction(self.normals), self.face_ids)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Immutable triangle mesh in meters.

    Derived quantities (normals, areas, spatial index) are computed lazily
    and cached on the instance.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(vertices) == 0 or len(faces) == 0:
            raise EmptyMeshError("mesh has no vertices or no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise GeometryError("face index out of range")
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("mesh vertices contain non-finite values")
        object.__setattr__(self, "vertices", _readonly(vertices))
        object.__setattr__(self, "faces", _readonly(faces))

    @classmethod
    def from_trimesh(cls, mesh: trimesh.Trimesh) -> "TriMesh":
        return cls(np.asarray(mesh.vertices), np.asarray(mesh.faces))

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices.copy(), faces=self.faces.copy(), process=False)

    @cached_property
    def triangles(self) -> np.ndarray:
        return _readonly(self.vertices[self.faces])

    @cached_property
    def _face_cross(self) -> np.ndarray:
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _readonly(0.5 * np.linalg.norm(self._face_cross, axis=1))

    @cached_property
    def face_normals(self) -> np.ndarray:
        normals, norms = _normalize_rows(self._face_cross)
        normals[norms == 0] = (0.0, 0.0, 1.0)
        return _readonly(normals)

    @cached_property
    def _normals_and_flags(self) -> Tuple[np.ndarray, np.ndarray]:
        return compute_vertex_normals(self)

    @property
    def vertex_normals(self) -> np.ndarray:
        return self._normals_and_flags[0]

    @property
    def degenerate_vertices(self) -> np.ndarray:
        return self._normals_and_flags[1]

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """One third of the incident face areas per vertex."""
        areas = np.zeros(len(self.vertices))
        np.add.at(areas, self.faces.ravel(), np.repeat(self.face_areas / 3.0, 3))
        return _readonly(areas)

    @cached_property
    def bounds(self) -> np.ndarray:
        return _readonly(np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)]))

    @cached_property
    def is_watertight(self) -> bool:
        return bool(self.to_trimesh().is_watertight)

    @cached_property
    def index(self) -> "TriangleIndex":
        return TriangleIndex(self)

    def transformed(self, transform: RigidTransform) -> "TriMesh":
        return TriMesh(transform.apply(self.vertices), self.faces)


def compute_vertex_normals(mesh: TriMesh) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-weighted vertex normals.

    Vertices whose incident faces have zero total area (or that belong to no
    face) get the arbitrary unit normal (0, 0, 1) and are reported.

    Returns:
        (normals (n,3), flagged vertex indices)
    """
    # the unnormalized cross product already carries twice the face area
    accumulated = np.zeros_like(mesh.vertices)
    for corner in range(3):
        np.add.at(accumulated, mesh.faces[:, corner], mesh._face_cross)
    normals, norms = _normalize_rows(accumulated)
    scale = max(float(np.max(mesh.face_areas)), np.finfo(float).tiny)
    flagged = np.flatnonzero(norms <= 1e-12 * scale)
    if len(flagged):
        logger.warning(f"{len(flagged)} degenerate vertex star(s); normals set to +z")
        normals[flagged] = (0.0, 0.0, 1.0)
    return _readonly(normals), _readonly(flagged)


def surface_point_count(mesh: TriMesh) -> int:
    """Point-cloud size for a mesh: proportional to area, clamped to [1K, 30K]."""
    count = int(round(float(mesh.face_areas.sum()) * POINTS_PER_SQUARE_METER))
    return int(np.clip(count, MIN_SURFACE_POINTS, MAX_SURFACE_POINTS))


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform samples; bit-identical for a fixed seed."""
    if n < 1:
        raise GeometryError("sample count must be at least 1")
    areas = mesh.face_areas
    total = float(areas.sum())
    if total <= 0:
        raise EmptyMeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face_ids]
    points = ((1.0 - r1)[:, None] * tri[:, 0]
              + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
              + (r1 * r2)[:, None] * tri[:, 2])
    return PointCloud(points, mesh.face_normals[face_ids], face_ids)


# =============================================================================
# CLOSEST-POINT QUERIES
# =============================================================================

class TriangleIndex:
    """
    Exact closest-point index over a triangle set.

    Triangle centroids live in a KD-tree; each triangle is bounded by the
    sphere around its centroid. A first pass over the nearest centroids gives
    an upper bound on the distance, and every triangle whose bounding sphere
    can still beat it is tested exactly.
    """

    SEED_CANDIDATES = 8
    CHUNK = 4096

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        triangles = mesh.triangles
        self.centroids = triangles.mean(axis=1)
        self.radii = np.linalg.norm(triangles - self.centroids[:, None, :], axis=2).max(axis=1)
        self.max_radius = float(self.radii.max())
        self.tree = cKDTree(self.centroids)

    def _exact(self, query: np.ndarray, face_ids: np.ndarray):
        closest = trimesh.triangles.closest_point(self.mesh.triangles[face_ids], query)
        return closest, np.linalg.norm(closest - query, axis=1)

    def query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        closest = np.empty_like(points)
        distance = np.empty(len(points))
        face = np.empty(len(points), dtype=np.int64)
        for start in range(0, len(points), self.CHUNK):
            block = slice(start, start + self.CHUNK)
            closest[block], distance[block], face[block] = self._query_block(points[block])
        return closest, distance, face

    def _query_block(self, points: np.ndarray):
        k = min(self.SEED_CANDIDATES, len(self.centroids))
        _, seeds = self.tree.query(points, k=k)
        seeds = np.asarray(seeds).reshape(len(points), k)
        seed_query = np.repeat(points, k, axis=0)
        _, seed_distance = self._exact(seed_query, seeds.ravel())
        bound = seed_distance.reshape(len(points), k).min(axis=1)

        candidates = self.tree.query_ball_point(points, bound + self.max_radius + 1e-12)
        counts = np.array([len(c) for c in candidates])
        owners = np.repeat(np.arange(len(points)), counts)
        faces = np.concatenate([np.sort(np.asarray(c, dtype=np.int64)) for c in candidates])
        # drop triangles whose own bounding sphere cannot beat the bound
        reach = np.linalg.norm(self.centroids[faces] - points[owners], axis=1) - self.radii[faces]
        keep = reach <= bound[owners] + 1e-12
        owners, faces = owners[keep], faces[keep]

        pair_closest, pair_distance = self._exact(points[owners], faces)
        # first minimum per owner; faces are sorted so ties go to the lowest id
        order = np.lexsort((faces, pair_distance, owners))
        first = np.ones(len(order), dtype=bool)
        first[1:] = owners[order][1:] != owners[order][:-1]
        best = order[first]
        return pair_closest[best], pair_distance[best], faces[best]


def nearest_on_mesh(mesh: TriMesh, query) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact closest point on the mesh surface.

    Args:
        mesh: the triangle mesh
        query: a 3-vector or an (n,3) array

    Returns:
        (closest point, distance, face id), batched like the query
    """
    query = np.asarray(query, dtype=np.float64)
    closest, distance, face = mesh.index.query(query)
    if query.ndim == 1:
        return closest[0], distance[0], face[0]
    return closest, distance, face


# =============================================================================
# INSIDE TESTS
# =============================================================================

_JITTER_DIRECTIONS = np.array([[0.6180339887, 0.4142135623], [-0.3183098861, 0.7071067811],
                               [0.5772156649, -0.2718281828]])


def _ray_hits(tri: np.ndarray, xy: np.ndarray):
    """
    Crossings of +z rays through xy with triangles; arguments broadcast.

    Args:
        tri: (..., 3, 3) triangles
        xy: (..., 2) ray origins in the xy plane

    Returns:
        (clean hit, hit z, ambiguous) where ambiguous marks rays grazing an
        edge or vertex of a triangle they cross
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    det = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1])
    dx, dy = xy[..., 0] - a[..., 0], xy[..., 1] - a[..., 1]
    safe = np.where(np.abs(det) > 0, det, 1.0)
    l1 = (dx * (c[..., 1] - a[..., 1]) - dy * (c[..., 0] - a[..., 0])) / safe
    l2 = ((b[..., 0] - a[..., 0]) * dy - (b[..., 1] - a[..., 1]) * dx) / safe
    l0 = 1.0 - l1 - l2
    eps = 1e-10
    crossed = (np.abs(det) > 1e-18) & (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
    ambiguous = crossed & ((l0 <= eps) | (l1 <= eps) | (l2 <= eps))
    z = l0 * a[..., 2] + l1 * b[..., 2] + l2 * c[..., 2]
    return crossed & ~ambiguous, z, ambiguous


def points_inside(mesh: TriMesh, points, chunk: int = 256) -> np.ndarray:
    """
    Ray-parity inside test for a closed mesh.

    Rays run along +z; queries whose ray grazes an edge or vertex are retried
    with a small xy jitter.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    triangles = mesh.triangles
    extent = float(np.max(mesh.bounds[1] - mesh.bounds[0])) or 1.0
    lo, hi = mesh.bounds
    inside = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        result = np.zeros(len(block), dtype=bool)
        pending = np.all((block >= lo) & (block <= hi), axis=1)
        for attempt in range(len(_JITTER_DIRECTIONS) + 1):
            if not pending.any():
                break
            idx = np.flatnonzero(pending)
            xy = block[idx, :2]
            if attempt:
                xy = xy + 1e-7 * extent * _JITTER_DIRECTIONS[attempt - 1]
            hit, z, ambiguous = _ray_hits(triangles[None], xy[:, None, :])
            crossings = np.sum(hit & (z > block[idx, 2][:, None]), axis=1)
            settled = ~ambiguous.any(axis=1)
            if attempt == len(_JITTER_DIRECTIONS):
                settled[:] = True
            result[idx[settled]] = (crossings[settled] % 2) == 1
            pending[idx[settled]] = False
        inside[start:start + chunk] = result
    return inside



# =============================================================================
# VOXELIZATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """
    Cubic occupancy grid over a mesh's bounding box.

    Attributes:
        origin: corner of voxel (0,0,0) in meters
        cell_size: isotropic edge length in meters
        occupancy: (R,R,R) bool, surface or interior
        surface: (R,R,R) bool, voxels intersecting a triangle
        watertight: False when only the surface shell could be filled
    """

    origin: np.ndarray
    cell_size: float
    occupancy: np.ndarray
    surface: np.ndarray
    watertight: bool

    def __post_init__(self):
        if np.any(self.surface & ~self.occupancy):
            raise GeometryError("surface voxel not marked occupied")

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def surface_indices(self) -> np.ndarray:
        return np.argwhere(self.surface)

    @property
    def interior(self) -> np.ndarray:
        return self.occupancy & ~self.surface

    def centers(self, indices=None) -> np.ndarray:
        """Voxel centers in meters; all voxels in C order when indices is None."""
        if indices is None:
            indices = np.indices(self.occupancy.shape).reshape(3, -1).T
        return self.origin + (np.asarray(indices, dtype=np.float64) + 0.5) * self.cell_size

    def occupied_volume(self) -> float:
        return float(self.occupancy.sum()) * self.cell_size ** 3


def _enumerate_cells(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """All integer cells in per-row boxes [lo, hi]; returns (owner row, cell)."""
    sizes = hi - lo + 1
    counts = np.prod(sizes, axis=1)
    owner = np.repeat(np.arange(len(lo)), counts)
    offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cells = np.empty((len(owner), lo.shape[1]), dtype=np.int64)
    size = sizes[owner]
    for axis in range(lo.shape[1] - 1, -1, -1):
        cells[:, axis] = offset % size[:, axis]
        offset = offset // size[:, axis]
    return owner, cells + lo[owner]


def _triangle_box_overlap(tri: np.ndarray, centers: np.ndarray, half: float) -> np.ndarray:
    """Separating-axis test between triangles (k,3,3) and axis-aligned boxes."""
    v = tri - centers[:, None, :]
    eps = 1e-9
    overlap = np.all(v.min(axis=1) <= half + eps, axis=1) & np.all(v.max(axis=1) >= -half - eps, axis=1)
    edges = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
    normal = np.cross(edges[:, 0], edges[:, 1])
    radius = half * np.abs(normal).sum(axis=1)
    overlap &= np.abs(np.einsum("ij,ij->i", normal, v[:, 0])) <= radius + eps
    for e in range(3):
        for axis in np.eye(3):
            direction = np.cross(edges[:, e], axis)
            proj = np.einsum("ikj,ij->ik", v, direction)
            radius = half * np.abs(direction).sum(axis=1)
            overlap &= (proj.min(axis=1) <= radius + eps) & (proj.max(axis=1) >= -radius - eps)
    return overlap


def _surface_voxels(grid_tri: np.ndarray, resolution: int, budget: int = 2_000_000) -> np.ndarray:
    surface = np.zeros((resolution,) * 3, dtype=bool)
    lo = np.clip(np.floor(grid_tri.min(axis=1)).astype(np.int64), 0, resolution - 1)
    hi = np.clip(np.floor(grid_tri.max(axis=1)).astype(np.int64), 0, resolution - 1)
    counts = np.prod(hi - lo + 1, axis=1)
    start = 0
    while start < len(grid_tri):
        stop = start + 1
        total = counts[start]
        while stop < len(grid_tri) and total + counts[stop] <= budget:
            total += counts[stop]
            stop += 1
        owner, cells = _enumerate_cells(lo[start:stop], hi[start:stop])
        hit = _triangle_box_overlap(grid_tri[start:stop][owner], cells + 0.5, 0.5)
        surface[tuple(cells[hit].T)] = True
        start = stop
    return surface


def _parity_fill(grid_tri: np.ndarray, resolution: int) -> Tuple[np.ndarray, int]:
    """Interior by +z ray parity through every column; returns (filled, unresolved columns)."""
    below = np.zeros((resolution, resolution, resolution + 1), dtype=np.int64)
    lo = np.clip(np.floor(grid_tri[:, :, :2].min(axis=1)).astype(np.int64), 0, resolution - 1)
    hi = np.clip(np.floor(grid_tri[:, :, :2].max(axis=1)).astype(np.int64), 0, resolution - 1)
    owner, cells = _enumerate_cells(lo, hi)
    pending = np.zeros((resolution, resolution), dtype=bool)
    pending[tuple(cells.T)] = True
    for attempt in range(len(_JITTER_DIRECTIONS) + 1):
        active = pending[tuple(cells.T)]
        o, c = owner[active], cells[active]
        xy = c + 0.5
        if attempt:
            xy = xy + 1e-6 * _JITTER_DIRECTIONS[attempt - 1]
        hit, z, ambiguous = _ray_hits(grid_tri[o], xy)
        unsettled = np.zeros((resolution, resolution), dtype=bool)
        unsettled[tuple(c[ambiguous].T)] = True
        per_column = np.zeros((resolution, resolution), dtype=np.int64)
        np.add.at(per_column, tuple(c[hit].T), 1)
        unsettled |= (per_column % 2) == 1
        settled = pending & ~unsettled
        use = hit & settled[tuple(c.T)]
        # index of the first voxel whose center lies above the crossing
        first_above = np.clip(np.floor(z[use] - 0.5).astype(np.int64) + 1, 0, resolution)
        np.add.at(below, (c[use, 0], c[use, 1], first_above), 1)
        pending &= ~settled
        if not pending.any():
            break
    inside = (np.cumsum(below, axis=2)[:, :, :resolution] % 2) == 1
    return inside, int(pending.sum())


def voxelize(mesh: TriMesh, resolution: int = VOXEL_RESOLUTION) -> VoxelGrid:
    """
    Occupancy grid with isotropic cells sized by the largest bounding-box extent.

    Surface voxels are those overlapping any triangle. The interior is filled
    by ray parity only when the mesh is watertight; otherwise the grid holds
    the surface shell and `watertight` is False.
    """
    lo, hi = mesh.bounds
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise GeometryError("mesh has zero extent")
    cell = extent / resolution
    origin = (lo + hi) / 2.0 - cell * resolution / 2.0
    grid_tri = (mesh.triangles - origin) / cell

    surface = _surface_voxels(grid_tri, resolution)
    occupancy = surface.copy()
    watertight = mesh.is_watertight
    if watertight:
        interior, bad = _parity_fill(grid_tri, resolution)
        if bad:
            logger.warning(f"voxelize: {bad} column(s) left unfilled after jitter retries")
        occupancy |= interior
    else:
        logger.warning("voxelize: mesh is not watertight, returning surface-only occupancy")
    logger.debug(f"voxelize: {int(surface.sum())} surface / {int(occupancy.sum())} occupied voxels")
    return VoxelGrid(origin, cell, occupancy, surface, watertight)
