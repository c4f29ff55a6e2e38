import numpy as np
import pytest

from kfields import nnops


def _fd(f, x, idx, h=1e-6):
    hi = x.copy(); hi[idx] += h
    lo = x.copy(); lo[idx] -= h
    return (f(hi) - f(lo)) / (2 * h)


def test_conv3_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 4, 4, 3))
    w = np.zeros((27, 3, 3))
    w[13] = np.eye(3)  # center tap: offsets enumerate z-major, 13 is (1,1,1)
    y = nnops.conv3(x, w, np.zeros(3))
    assert np.allclose(y, x)


def test_conv3_bias_only():
    x = np.zeros((3, 3, 3, 2))
    w = np.zeros((27, 2, 4))
    b = np.array([1.0, -2.0, 3.0, 0.5])
    y = nnops.conv3(x, w, b)
    # replication padding of zeros stays zero, so output is pure bias
    assert np.allclose(y, np.broadcast_to(b, (3, 3, 3, 4)))


def test_conv3_constant_field_replication_padding():
    # with edge padding a constant input stays constant: every tap sees
    # the same value, so y = sum_k w_k^T c + b everywhere
    rng = np.random.default_rng(1)
    c = np.array([0.7, -1.2])
    x = np.broadcast_to(c, (5, 5, 5, 2)).copy()
    w = rng.normal(size=(27, 2, 3))
    b = rng.normal(size=3)
    y = nnops.conv3(x, w, b)
    want = w.sum(axis=0).T @ c + b
    assert np.abs(y - want).max() < 1e-12


def test_conv3_backward_central_difference():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 3, 3, 2))
    w = rng.normal(size=(27, 2, 2))
    b = rng.normal(size=2)
    gy = rng.normal(size=(3, 3, 3, 2))
    gx, gw, gb = nnops.conv3_backward(x, w, gy)

    def value(xx=None, ww=None, bb=None):
        return float(np.sum(gy * nnops.conv3(
            x if xx is None else xx, w if ww is None else ww,
            b if bb is None else bb)))

    for idx in [(0, 0, 0, 0), (1, 2, 0, 1), (2, 2, 2, 0)]:
        fd = _fd(lambda a: value(xx=a), x, idx)
        assert gx[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)
    for idx in [(0, 0, 0), (13, 1, 1), (26, 0, 1)]:
        fd = _fd(lambda a: value(ww=a), w, idx)
        assert gw[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)
    fd = _fd(lambda a: value(bb=a), b, (1,))
    assert gb[1] == pytest.approx(fd, rel=1e-6)


def test_avgpool_upsample_exact():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 4, 4, 2))
    y = nnops.avgpool2(x)
    assert y.shape == (2, 2, 2, 2)
    assert y[0, 0, 0, 0] == pytest.approx(x[:2, :2, :2, 0].mean())
    u = nnops.upsample2(y)
    assert u.shape == (4, 4, 4, 2)
    assert np.array_equal(u[:2, :2, :2, 1],
                          np.broadcast_to(y[0, 0, 0, 1], (2, 2, 2)))


def test_avgpool_backward_is_upsample_scaled():
    rng = np.random.default_rng(4)
    gy = rng.normal(size=(2, 2, 2, 3))
    g = nnops.avgpool2_backward(gy)
    assert np.allclose(g, nnops.upsample2(gy) / 8.0)


def test_upsample_backward_is_blockwise_sum():
    rng = np.random.default_rng(5)
    gy = rng.normal(size=(4, 4, 4, 2))
    g = nnops.upsample2_backward(gy)
    assert g.shape == (2, 2, 2, 2)
    assert g[0, 0, 0, 0] == pytest.approx(gy[:2, :2, :2, 0].sum())


def test_pool_upsample_adjoint_identity():
    # <pool(x), gy> == <x, pool_backward(gy)> and likewise for upsample
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 4, 4, 3))
    gy = rng.normal(size=(2, 2, 2, 3))
    lhs = np.sum(nnops.avgpool2(x) * gy)
    rhs = np.sum(x * nnops.avgpool2_backward(gy))
    assert lhs == pytest.approx(rhs)
    gy_big = rng.normal(size=(4, 4, 4, 3))
    x_small = rng.normal(size=(2, 2, 2, 3))
    lhs = np.sum(nnops.upsample2(x_small) * gy_big)
    rhs = np.sum(x_small * nnops.upsample2_backward(gy_big))
    assert lhs == pytest.approx(rhs)


def test_trilinear_reproduces_linear_functions():
    # a trilinear interpolant is exact for f(x) = a + b.x inside the
    # cell-center hull
    m = 8
    centers = -0.5 + (np.arange(m) + 0.5) / m
    zz, yy, xx = np.meshgrid(centers, centers, centers, indexing="ij")
    coef = np.array([0.3, -0.7, 0.2])
    grid = (0.5 + coef[0] * zz + coef[1] * yy + coef[2] * xx)[..., None]
    rng = np.random.default_rng(7)
    q = rng.uniform(-0.4, 0.4, size=(200, 3))
    got = nnops.trilinear(grid, q)[:, 0]
    want = 0.5 + q @ coef
    assert np.abs(got - want).max() < 1e-12


def test_trilinear_at_cell_centers():
    rng = np.random.default_rng(8)
    m = 4
    grid = rng.normal(size=(m, m, m, 2))
    centers = -0.5 + (np.arange(m) + 0.5) / m
    q = np.array([[centers[i], centers[j], centers[k]]
                  for i, j, k in [(0, 1, 2), (3, 3, 3), (2, 0, 1)]])
    got = nnops.trilinear(grid, q)
    want = np.array([grid[0, 1, 2], grid[3, 3, 3], grid[2, 0, 1]])
    assert np.abs(got - want).max() < 1e-12


def test_trilinear_clamps_outside_queries():
    rng = np.random.default_rng(9)
    grid = rng.normal(size=(4, 4, 4, 1))
    far = np.array([[5.0, 5.0, 5.0], [-5.0, -5.0, -5.0]])
    got = nnops.trilinear(grid, far)
    assert got[0, 0] == pytest.approx(grid[3, 3, 3, 0])
    assert got[1, 0] == pytest.approx(grid[0, 0, 0, 0])


def test_trilinear_backward_adjoint_identity():
    rng = np.random.default_rng(10)
    grid = rng.normal(size=(4, 4, 4, 2))
    q = rng.uniform(-0.5, 0.5, size=(50, 3))
    gy = rng.normal(size=(50, 2))
    lhs = np.sum(nnops.trilinear(grid, q) * gy)
    ggrid = nnops.trilinear_backward(grid.shape, q, gy)
    rhs = np.sum(grid * ggrid)
    assert lhs == pytest.approx(rhs)


def test_segment_max_basic():
    values = np.array([[1.0, 5.0], [3.0, 2.0], [2.0, 7.0], [0.0, 1.0]])
    segments = np.array([0, 0, 1, 1])
    out, winner = nnops.segment_max(values, segments, 3)
    assert np.array_equal(out, [[3.0, 5.0], [2.0, 7.0], [0.0, 0.0]])
    assert np.array_equal(winner, [[1, 0], [2, 2], [-1, -1]])


def test_segment_max_tie_picks_lowest_row():
    values = np.array([[2.0], [2.0]])
    out, winner = nnops.segment_max(values, np.array([0, 0]), 1)
    assert winner[0, 0] == 0


def test_segment_max_backward_routes_to_winner():
    values = np.array([[1.0, 5.0], [3.0, 2.0], [2.0, 7.0]])
    segments = np.array([0, 0, 1])
    out, winner = nnops.segment_max(values, segments, 2)
    gy = np.array([[10.0, 20.0], [30.0, 40.0]])
    g = nnops.segment_max_backward(winner, gy, 3)
    assert np.array_equal(g, [[0.0, 20.0], [10.0, 0.0], [30.0, 40.0]])


def test_segment_max_backward_empty_segment_drops_gradient():
    values = np.array([[1.0]])
    out, winner = nnops.segment_max(values, np.array([0]), 2)
    g = nnops.segment_max_backward(winner, np.array([[5.0], [7.0]]), 1)
    assert np.array_equal(g, [[5.0]])
