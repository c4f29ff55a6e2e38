import numpy as np
import pytest

from kfields.errors import OpenSurfaceError
from kfields.meshes import TriangleMesh, box_mesh, mesh_occupancy, uv_sphere_mesh


@pytest.fixture
def unit_sphere():
    return uv_sphere_mesh(radius=1.0, n_lat=32, n_lon=64)


def test_box_mesh_basic():
    mesh = box_mesh(half=(0.5, 0.5, 0.5))
    assert len(mesh) == 12
    assert mesh.is_watertight()
    assert mesh.area == pytest.approx(6.0)
    lo, hi = mesh.bounds()
    assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)


def test_box_mesh_outward_normals():
    mesh = box_mesh(half=(1.0, 2.0, 3.0))
    centers = mesh.vertices[mesh.triangles].mean(axis=1)
    # outward winding: face normal agrees with center-to-face direction
    dots = np.einsum("ij,ij->i", mesh.face_normals, centers)
    assert (dots > 0).all()


def test_sphere_mesh_watertight_and_round(unit_sphere):
    assert unit_sphere.is_watertight()
    r = np.linalg.norm(unit_sphere.vertices, axis=1)
    assert np.abs(r - 1.0).max() < 1e-12
    assert unit_sphere.area == pytest.approx(4.0 * np.pi, rel=5e-3)


def test_watertight_rejects_open_fan():
    mesh = TriangleMesh(
        np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]]),
        np.array([[0, 1, 2], [0, 1, 3]]),
    )
    assert not mesh.is_watertight()
    assert not TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))).is_watertight()


def test_triangle_index_validation():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, -2]]))


def test_vertex_normals_unit_and_outward(unit_sphere):
    vn = unit_sphere.vertex_normals
    assert np.abs(np.linalg.norm(vn, axis=1) - 1.0).max() < 1e-12
    # for a sphere the area-weighted normal approximates the radial one
    dots = np.einsum("ij,ij->i", vn, unit_sphere.vertices)
    assert dots.min() > 0.99


def test_explicit_vertex_normals_pass_through():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    vn = np.array([[0.0, 0, 1]] * 3)
    mesh = TriangleMesh(verts, np.array([[0, 1, 2]]), vertex_normals=vn)
    assert np.array_equal(mesh.vertex_normals, vn)
    with pytest.raises(ValueError):
        TriangleMesh(verts, np.array([[0, 1, 2]]), vertex_normals=vn[:2])


def test_sample_surface_on_surface(unit_sphere):
    rng = np.random.default_rng(0)
    pts, normals = unit_sphere.sample_surface(2000, rng)
    r = np.linalg.norm(pts, axis=1)
    # samples lie on the faceted sphere, slightly inside radius 1
    assert r.max() <= 1.0 + 1e-12
    assert r.min() > 0.98
    dots = np.einsum("ij,ij->i", normals, pts / r[:, None])
    assert dots.min() > 0.99


def test_sample_surface_area_weighting():
    # two faces with area ratio 4:1 should be hit in that proportion
    verts = np.array([
        [0.0, 0, 0], [2.0, 0, 0], [0.0, 2, 0],
        [10.0, 0, 0], [11.0, 0, 0], [10.0, 1, 0],
    ])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
    rng = np.random.default_rng(1)
    pts, _ = mesh.sample_surface(20000, rng)
    frac_big = np.mean(pts[:, 0] < 5.0)
    assert abs(frac_big - 0.8) < 0.02


def test_occupancy_sphere(unit_sphere):
    rng = np.random.default_rng(2)
    q = rng.uniform(-1.3, 1.3, size=(2000, 3))
    occ = mesh_occupancy(unit_sphere, q)
    r = np.linalg.norm(q, axis=1)
    # stay away from the faceting band around r = 1
    assert np.all(occ[r < 0.97] == 1)
    assert np.all(occ[r > 1.03] == 0)


def test_occupancy_box_queries_on_axes():
    mesh = box_mesh(half=(0.5, 0.5, 0.5))
    q = np.array([
        [0.0, 0.0, 0.0],
        [0.49, 0.49, 0.49],
        [0.51, 0.0, 0.0],
        [10.0, 10.0, 10.0],
        [-0.49, 0.2, -0.3],
    ])
    assert np.array_equal(mesh.occupancy(q), [1, 1, 0, 0, 1])


def test_occupancy_on_surface_is_outside():
    mesh = box_mesh(half=(0.5, 0.5, 0.5))
    onface = np.array([[0.5, 0.1, 0.1], [0.0, -0.5, 0.2]])
    assert np.array_equal(mesh.occupancy(onface), [0, 0])


def test_occupancy_open_mesh_raises():
    mesh = TriangleMesh(
        np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
        np.array([[0, 1, 2]]),
    )
    with pytest.raises(OpenSurfaceError):
        mesh_occupancy(mesh, np.zeros((1, 3)))


def test_occupancy_volume_estimate(unit_sphere):
    rng = np.random.default_rng(3)
    q = rng.uniform(-1.0, 1.0, size=(40000, 3))
    occ = mesh_occupancy(unit_sphere, q)
    vol = occ.mean() * 8.0
    assert vol == pytest.approx(4.0 / 3.0 * np.pi, rel=0.02)


def test_transformed_rigid_motion(unit_sphere):
    from kfields.primitives import random_rotation

    rot = random_rotation(np.random.default_rng(4))
    shift = np.array([1.0, -2.0, 3.0])
    moved = unit_sphere.transformed(rotation=rot, translation=shift)
    assert moved.area == pytest.approx(unit_sphere.area)
    assert moved.is_watertight()
    center = moved.vertices.mean(axis=0)
    assert np.abs(center - shift).max() < 1e-6
