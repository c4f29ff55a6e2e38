import numpy as np
import pytest

from kfields import features as F
from kfields import metrics, pipeline
from kfields.errors import StageError, UsageError
from kfields.geometry import OrientedPointCloud
from kfields.meshes import uv_sphere_mesh


def _sphere_cloud(n=400, radius=0.4, center=(0.0, 0.0, 0.0), seed=0):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return OrientedPointCloud(np.asarray(center) + radius * dirs, dirs)


def test_build_field_rejects_unknown_mode():
    with pytest.raises(UsageError, match="unknown mode"):
        pipeline.build_field(_sphere_cloud(20), mode="magic")


def test_build_field_learned_needs_params():
    with pytest.raises(UsageError, match="checkpoint"):
        pipeline.build_field(_sphere_cloud(20), mode="learned")


def test_reconstruct_sphere_fixed():
    cloud = _sphere_cloud(600)
    result = pipeline.reconstruct_cloud(cloud, mode="fixed", lam=0.0,
                                        grid_resolution=64)
    mesh = result.mesh
    assert mesh.is_watertight()
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(np.median(r) - 0.4) < 0.01
    target = uv_sphere_mesh(radius=0.4, n_lat=48, n_lon=96)
    assert metrics.iou(mesh, target, n=20000, seed=0) > 0.95
    assert metrics.chamfer_l2(mesh, target, n=20000, seed=0) < 0.01


def test_reconstruct_off_center_cloud_roundtrips_world_space():
    center = np.array([5.0, -3.0, 2.0])
    cloud = _sphere_cloud(500, radius=1.5, center=center, seed=1)
    result = pipeline.reconstruct_cloud(cloud, grid_resolution=48)
    mesh = result.mesh
    got_center = mesh.vertices.mean(axis=0)
    assert np.abs(got_center - center).max() < 0.05
    r = np.linalg.norm(mesh.vertices - center, axis=1)
    assert abs(np.median(r) - 1.5) < 0.05
    # the transform maps world to normalized coordinates
    norm_pts = result.transform.apply(cloud.points)
    assert np.abs(norm_pts).max() <= 0.5 + 1e-9


def test_reconstruct_records_stage_timings():
    seen = []
    result = pipeline.reconstruct_cloud(
        _sphere_cloud(150), grid_resolution=24,
        on_stage=lambda name, dt: seen.append(name))
    want = ["normalize", "solve", "evaluate", "extract", "denormalize"]
    assert [name for name, _ in result.timings] == want
    assert seen == want
    assert all(dt >= 0 for _, dt in result.timings)


def test_reconstruct_default_epsilon_scales_with_cloud():
    result = pipeline.reconstruct_cloud(_sphere_cloud(200), grid_resolution=24)
    # normalized sphere of diameter ~1: bbox diagonal ~sqrt(3)
    assert result.epsilon == pytest.approx(0.01 * np.sqrt(3), rel=0.05)
    explicit = pipeline.reconstruct_cloud(
        _sphere_cloud(200), epsilon=0.02, grid_resolution=24)
    assert explicit.epsilon == 0.02


def test_field_sign_convention_outside_positive():
    result = pipeline.reconstruct_cloud(_sphere_cloud(300), grid_resolution=32)
    # normalized space: the surface sits near radius 0.5
    inside = result.field.evaluate(np.zeros((1, 3)))
    outside = result.field.evaluate(np.array([[0.7, 0.0, 0.0]]))
    assert inside[0] < 0 < outside[0]


def test_mesh_normals_point_outward():
    result = pipeline.reconstruct_cloud(_sphere_cloud(400), grid_resolution=48)
    mesh = result.mesh
    centers = mesh.vertices[mesh.triangles].mean(axis=1)
    dirs = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    dots = np.einsum("ij,ij->i", mesh.face_normals, dirs)
    assert np.mean(dots > 0) > 0.99


def test_learned_mode_zero_params_matches_fixed():
    cloud = _sphere_cloud(200, seed=2)
    params = F.FeatureNetworkParams(8)  # all-zero parameters
    fixed = pipeline.build_field(cloud, "fixed", epsilon=0.01, lam=1e-6)
    learned = pipeline.build_field(cloud, "learned", epsilon=0.01, lam=1e-6,
                                   params=params, feature_resolution=8)
    q = np.random.default_rng(3).uniform(-0.5, 0.5, size=(200, 3))
    assert np.abs(fixed.evaluate(q) - learned.evaluate(q)).max() < 1e-8


def test_learned_weighted_mode_runs():
    cloud = _sphere_cloud(150, seed=4)
    params = F.FeatureNetworkParams.initialized(4, seed=0)
    field = pipeline.build_field(cloud, "learned-weighted", epsilon=0.01,
                                 lam=1e-3, params=params,
                                 feature_resolution=8)
    assert field.system.weights is not None
    assert len(field.system.weights) == 3 * cloud.count
    q = np.random.default_rng(5).uniform(-0.5, 0.5, size=(50, 3))
    assert np.isfinite(field.evaluate(q)).all()


def test_no_zero_crossing_reports_extract_stage(monkeypatch):
    from kfields.meshes import TriangleMesh

    monkeypatch.setattr(
        pipeline, "marching_cubes",
        lambda grid, iso=0.0: TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))))
    with pytest.raises(StageError) as info:
        pipeline.reconstruct_cloud(_sphere_cloud(100), grid_resolution=16)
    assert info.value.stage == "extract"
    assert "no zero crossing" in str(info.value)


def test_stage_error_carries_cause():
    class Boom(Exception):
        pass

    watch = pipeline._Stopwatch()
    with pytest.raises(StageError) as info:
        with watch.stage("solve"):
            raise Boom("inner")
    assert info.value.stage == "solve"
    assert isinstance(info.value.cause, Boom)
    assert "solve" in str(info.value)
    # UsageError passes through unwrapped
    with pytest.raises(UsageError):
        with watch.stage("solve"):
            raise UsageError("bad flag")
