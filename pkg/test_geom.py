"""
Geometry primitive tests: normals, sampling, closest points, projection and voxels.
"""

import numpy as np
import pytest
from scipy import ndimage

from services.errors import BehindCameraError, EmptyMeshError, GeometryError
from services.geom import (
    CameraIntrinsics,
    RigidTransform,
    TriMesh,
    backproject,
    compute_vertex_normals,
    nearest_on_mesh,
    point_segment_distance,
    points_inside,
    project,
    sample_surface,
    surface_point_count,
    voxelize,
)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


# =============================================================================
# TRANSFORMS AND PROJECTION
# =============================================================================

def test_rigid_transform_rejects_reflection():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_transform_inverse_round_trip():
    transform = RigidTransform.from_rotvec([0.3, -0.2, 0.9], [0.1, 0.2, -0.3])
    points = np.random.default_rng(0).normal(size=(10, 3))
    np.testing.assert_allclose(transform.inverse().apply(transform.apply(points)), points, atol=1e-12)


def test_project_on_axis_hits_principal_point():
    np.testing.assert_allclose(project([0.0, 0.0, 2.0], K, RigidTransform.identity()), [320.0, 240.0])


def test_project_pinhole_formula():
    np.testing.assert_allclose(project([0.1, 0.0, 1.0], K, RigidTransform.identity()), [370.0, 240.0])


def test_project_behind_camera_raises():
    with pytest.raises(BehindCameraError):
        project([0.0, 0.0, -1.0], K, RigidTransform.identity())


def test_backproject_then_project_is_identity():
    camera_T_world = RigidTransform.from_rotvec([0.1, 0.2, -0.1], [0.05, -0.02, 0.8])
    pixels = np.array([[10.0, 20.0], [320.0, 240.0], [600.5, 470.25]])
    world = backproject(pixels, np.array([0.5, 1.0, 2.5]), K, camera_T_world)
    np.testing.assert_allclose(project(world, K, camera_T_world), pixels, atol=1e-9)


# =============================================================================
# SEGMENTS
# =============================================================================

def test_point_segment_distance_interior():
    distance, closest = point_segment_distance([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert distance == pytest.approx(1.0)
    np.testing.assert_allclose(closest, [0.0, 0.0, 0.0])


def test_point_segment_distance_clamps_to_endpoint():
    p, b = np.array([3.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])
    distance, closest = point_segment_distance(p, [-1.0, 0.0, 0.0], b)
    assert distance == pytest.approx(np.linalg.norm(p - b))
    np.testing.assert_allclose(closest, b)


def test_point_segment_distance_degenerate_segment():
    distance, _ = point_segment_distance([0.0, 0.0, 2.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert distance == pytest.approx(2.0)


def test_point_segment_distance_matches_dense_sampling():
    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 1.0, 200001)[:, None]
    for _ in range(5):
        p, a, b = rng.normal(size=(3, 3))
        distance, _ = point_segment_distance(p, a, b)
        brute = np.min(np.linalg.norm(a + t * (b - a) - p, axis=1))
        assert distance <= brute + 1e-12
        assert brute - distance < 1e-6


# =============================================================================
# NORMALS AND SAMPLING
# =============================================================================

def test_cube_corner_normal(unit_cube):
    normals, flagged = compute_vertex_normals(unit_cube)
    np.testing.assert_allclose(normals[7], np.ones(3) / np.sqrt(3.0), atol=1e-12)
    np.testing.assert_allclose(normals[0], -np.ones(3) / np.sqrt(3.0), atol=1e-12)
    assert len(flagged) == 0


def test_flat_square_normals(unit_square):
    np.testing.assert_allclose(unit_square.vertex_normals, np.tile([0.0, 0.0, 1.0], (4, 1)), atol=1e-12)


def test_sphere_normals_match_radial_direction(unit_sphere):
    radial = unit_sphere.vertices / np.linalg.norm(unit_sphere.vertices, axis=1, keepdims=True)
    assert np.max(np.linalg.norm(unit_sphere.vertex_normals - radial, axis=1)) < 1e-2


def test_unreferenced_vertex_is_flagged():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]])
    mesh = TriMesh(vertices, np.array([[0, 1, 2]]))
    assert mesh.degenerate_vertices.tolist() == [3]
    assert np.linalg.norm(mesh.vertex_normals[3]) == pytest.approx(1.0)


def test_empty_mesh_rejected():
    with pytest.raises(EmptyMeshError):
        TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))


def test_sample_square_centroid(unit_square):
    cloud = sample_surface(unit_square, 100000, seed=0)
    np.testing.assert_allclose(cloud.points.mean(axis=0), [0.5, 0.5, 0.0], atol=1e-2)
    np.testing.assert_allclose(cloud.normals, np.tile([0.0, 0.0, 1.0], (len(cloud), 1)))


def test_sample_single_triangle_point_inside():
    mesh = TriMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([[0, 1, 2]]))
    point = sample_surface(mesh, 1, seed=42).points[0]
    assert point[0] >= 0 and point[1] >= 0 and point[0] + point[1] <= 1.0 + 1e-12
    assert point[2] == 0.0


def test_sample_is_deterministic(unit_sphere):
    first = sample_surface(unit_sphere, 500, seed=9)
    second = sample_surface(unit_sphere, 500, seed=9)
    assert np.array_equal(first.points, second.points)
    assert np.array_equal(first.face_ids, second.face_ids)


def test_sample_sphere_octants_balanced(unit_sphere):
    n = 100000
    points = sample_surface(unit_sphere, n, seed=5).points
    octant = (points[:, 0] > 0) * 4 + (points[:, 1] > 0) * 2 + (points[:, 2] > 0)
    counts = np.bincount(octant, minlength=8)
    sigma = np.sqrt(n * 0.125 * 0.875)
    assert np.all(np.abs(counts - n / 8) < 4 * sigma)


def test_surface_point_count_is_clamped(unit_cube):
    assert surface_point_count(unit_cube) == 30000
    tiny = TriMesh(np.array([[0.0, 0, 0], [0.001, 0, 0], [0, 0.001, 0]]), np.array([[0, 1, 2]]))
    assert surface_point_count(tiny) == 1000


def test_sample_rejects_zero_count(unit_square):
    with pytest.raises(GeometryError):
        sample_surface(unit_square, 0, seed=0)


# =============================================================================
# CLOSEST POINTS AND INSIDE TESTS
# =============================================================================

def test_nearest_from_sphere_center(unit_sphere):
    _, distance, _ = nearest_on_mesh(unit_sphere, np.zeros(3))
    assert 0.98 < distance <= 1.0


def test_nearest_at_vertex_is_zero(unit_sphere):
    _, distance, _ = nearest_on_mesh(unit_sphere, unit_sphere.vertices[17])
    assert distance == pytest.approx(0.0, abs=1e-12)


def test_nearest_above_square(unit_square):
    closest, distance, _ = nearest_on_mesh(unit_square, [0.3, 0.6, 0.25])
    assert distance == pytest.approx(0.25)
    np.testing.assert_allclose(closest, [0.3, 0.6, 0.0], atol=1e-12)


def test_nearest_is_lower_bound_for_samples(unit_sphere):
    samples = sample_surface(unit_sphere, 10000, seed=2).points
    queries = np.random.default_rng(3).uniform(-1.5, 1.5, size=(50, 3))
    _, distance, _ = nearest_on_mesh(unit_sphere, queries)
    brute = np.min(np.linalg.norm(queries[:, None, :] - samples[None], axis=2), axis=1)
    assert np.all(distance <= brute + 1e-12)


def test_points_inside_cube(unit_cube):
    points = np.array([[0.5, 0.5, 0.5], [0.25, 0.75, 0.1], [1.5, 0.5, 0.5], [0.5, 0.5, -0.1]])
    assert points_inside(unit_cube, points).tolist() == [True, True, False, False]


# =============================================================================
# VOXELIZATION
# =============================================================================

def test_voxelize_cube_fills_grid(unit_cube):
    grid = voxelize(unit_cube)
    assert grid.resolution == 64
    assert grid.watertight
    assert grid.occupancy.mean() > 0.99


def test_voxelize_sphere_volume_brackets_mesh_volume(unit_sphere):
    grid = voxelize(unit_sphere)
    volume = unit_sphere.to_trimesh().volume
    interior = float(grid.interior.sum()) * grid.cell_size ** 3
    assert interior <= volume <= grid.occupied_volume()
    assert grid.occupied_volume() == pytest.approx(volume, rel=0.15)


def test_voxel_surface_is_occupied_and_connected(unit_sphere):
    grid = voxelize(unit_sphere, resolution=32)
    assert not np.any(grid.surface & ~grid.occupancy)
    _, components = ndimage.label(grid.surface, structure=np.ones((3, 3, 3)))
    assert components == 1


def test_voxelize_open_patch_has_no_interior(unit_square):
    grid = voxelize(unit_square, resolution=16)
    assert not grid.watertight
    assert grid.interior.sum() == 0
    assert grid.surface.sum() > 0
