import numpy as np
import pytest

from kfields import autodiff as ad
from kfields import features as F
from kfields.errors import UsageError
from kfields.geometry import OrientedPointCloud


def _cloud(n=64, seed=0):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return OrientedPointCloud(0.35 * dirs, dirs)


def test_params_layout_and_segments():
    p = F.FeatureNetworkParams(4)
    assert p.vector.shape == (p.count,)
    total = sum(int(np.prod(shape)) for _, shape in p.layout)
    assert total == p.count
    # segment views alias the flat vector
    p.segment("enc.b1")[0] = 7.0
    assert 7.0 in p.vector
    segs = p.segments()
    assert set(segs) == {name for name, _ in p.layout}
    with pytest.raises(ValueError):
        F.FeatureNetworkParams(4, np.zeros(3))
    with pytest.raises(ValueError):
        F.FeatureNetworkParams(0)


def test_initialized_final_layers_near_zero():
    p = F.FeatureNetworkParams.initialized(8, seed=1)
    out_w = p.segment("out.w")
    enc_w1 = p.segment("enc.w1")
    assert np.abs(out_w).max() < 0.01 * np.abs(enc_w1).max() * 5
    assert np.abs(out_w).max() > 0.0  # near zero, not at the saddle
    assert np.all(p.segment("rho.w2") == 0.0)
    assert np.all(p.segment("enc.b1") == 0.0)
    # deterministic per seed
    q = F.FeatureNetworkParams.initialized(8, seed=1)
    assert np.array_equal(p.vector, q.vector)


def test_voxelize_indices_and_offsets():
    m = 4
    pts = np.array([
        [-0.5 + 0.5 / m, -0.5 + 0.5 / m, -0.5 + 0.5 / m],  # center cell 0
        [0.5 - 0.25 / m, 0.5 - 0.25 / m, 0.5 - 0.25 / m],  # last cell
    ])
    linear, offsets = F.voxelize(pts, m)
    assert linear[0] == 0
    assert linear[1] == m**3 - 1
    assert np.abs(offsets[0]).max() < 1e-12
    assert np.allclose(offsets[1], 0.25)
    # out-of-cube points clamp to border cells
    far, off = F.voxelize(np.array([[2.0, 2.0, 2.0]]), m)
    assert far[0] == m**3 - 1


def test_encode_shape_and_empty_cells():
    cloud = _cloud(10)
    p = F.FeatureNetworkParams.initialized(4, seed=0)
    grid = F.encode(cloud, p, 4)
    vals = ad.value_of(grid)
    assert vals.shape == (4, 4, 4, 4)
    occupied, _ = F.voxelize(cloud.points, 4)
    empty = np.setdiff1d(np.arange(64), occupied)
    flat = vals.reshape(64, 4)
    assert np.all(flat[empty] == 0.0)
    assert np.any(flat[occupied] != 0.0)


def test_encode_normals_toggle():
    cloud = _cloud(20)
    p = F.FeatureNetworkParams.initialized(4, seed=0)
    with_n = ad.value_of(F.encode(cloud, p, 4, use_normals=True))
    without = ad.value_of(F.encode(cloud, p, 4, use_normals=False))
    assert not np.array_equal(with_n, without)
    with pytest.raises(ValueError):
        F.encode(cloud, p, 1)


def test_backbone_zero_final_layer_outputs_bias():
    cloud = _cloud(30)
    p = F.FeatureNetworkParams.initialized(4, seed=0)
    p.segment("out.w")[...] = 0.0
    p.segment("out.b")[...] = 0.0
    grid = F.feature_grid(cloud, p, 8)
    assert np.all(ad.value_of(grid) == 0.0)
    p.segment("out.b")[...] = [1.0, 2.0, 3.0, 4.0]
    grid = F.feature_grid(cloud, p, 8)
    assert np.allclose(ad.value_of(grid)[2, 5, 1], [1.0, 2.0, 3.0, 4.0])


def test_backbone_resolution_divisibility():
    cloud = _cloud(10)
    p = F.FeatureNetworkParams.initialized(4, seed=0)
    with pytest.raises(ValueError):
        F.feature_grid(cloud, p, 6)


def test_interpolate_single_and_batch():
    rng = np.random.default_rng(2)
    grid = rng.normal(size=(4, 4, 4, 3))
    q = rng.uniform(-0.4, 0.4, size=(10, 3))
    batch = F.interpolate(grid, q)
    assert batch.shape == (10, 3)
    single = F.interpolate(grid, q[0])
    assert single.shape == (3,)
    assert np.allclose(single, batch[0])


def test_point_weights_zero_head_gives_half():
    cloud = _cloud(25)
    p = F.FeatureNetworkParams.initialized(4, seed=3)
    field = F.FeatureField(p, cloud, 8)
    w = ad.value_of(field.input_weights())
    assert w.shape == (25,)
    assert np.allclose(w, 0.5)
    # a biased head moves the weights off 0.5 but keeps them in (0, 1)
    p.segment("rho.b2")[...] = 2.0
    field = F.FeatureField(p, cloud, 8)
    w = ad.value_of(field.input_weights())
    assert np.all((w > 0.5) & (w < 1.0))


def test_feature_field_callable():
    cloud = _cloud(40)
    p = F.FeatureNetworkParams.initialized(6, seed=4)
    field = F.FeatureField(p, cloud, 8)
    q = np.random.default_rng(5).uniform(-0.45, 0.45, size=(20, 3))
    feats = field(q)
    assert ad.value_of(feats).shape == (20, 6)
    assert np.isfinite(ad.value_of(feats)).all()


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    p = F.FeatureNetworkParams.initialized(8, seed=6)
    p.vector += np.random.default_rng(7).normal(size=p.count) * 0.1
    path = tmp_path / "model.nkf"
    F.save_checkpoint(path, p, 32)
    back, res = F.load_checkpoint(path)
    assert res == 32
    assert back.d == 8
    assert np.array_equal(back.vector, p.vector)


def test_checkpoint_rejects_corruption(tmp_path):
    p = F.FeatureNetworkParams.initialized(4, seed=8)
    path = tmp_path / "model.nkf"
    F.save_checkpoint(path, p, 16)
    blob = bytearray(path.read_bytes())

    bad_magic = tmp_path / "bad_magic.nkf"
    bad_magic.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(UsageError, match="magic"):
        F.load_checkpoint(bad_magic)

    truncated = tmp_path / "trunc.nkf"
    truncated.write_bytes(bytes(blob[:-10]))
    with pytest.raises(UsageError, match="truncated"):
        F.load_checkpoint(truncated)

    trailing = tmp_path / "trail.nkf"
    trailing.write_bytes(bytes(blob) + b"\x00")
    with pytest.raises(UsageError, match="trailing"):
        F.load_checkpoint(trailing)


def test_feature_grid_deterministic():
    cloud = _cloud(30, seed=9)
    p = F.FeatureNetworkParams.initialized(4, seed=10)
    a = ad.value_of(F.feature_grid(cloud, p, 8))
    b = ad.value_of(F.feature_grid(cloud, p, 8))
    assert np.array_equal(a, b)
