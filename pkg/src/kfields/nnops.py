"""Numeric kernels for the feature network.

Plain forward/backward array functions with no tape awareness; the
autodiff module wraps them and the feature module calls them eagerly
for inference.  Conventions:

- dense grids are (m, m, m, channels) float64 arrays
- conv weights are (27, c_in, c_out): one GEMM per neighbor offset,
  offsets enumerated z-major to match the weight layout
- spatial padding replicates the border cell (edge padding), so the
  backward pass folds the padded ring back onto the boundary
"""

import numpy as np

__all__ = [
    "conv3", "conv3_backward",
    "avgpool2", "avgpool2_backward",
    "upsample2", "upsample2_backward",
    "trilinear", "trilinear_backward",
    "segment_max", "segment_max_backward",
]


def _edge_pad(x):
    return np.pad(x, ((1, 1), (1, 1), (1, 1), (0, 0)), mode="edge")


def _fold_pad(g):
    """Adjoint of _edge_pad: accumulate the pad ring onto the border."""
    g = g.copy()
    g[1] += g[0]
    g[-2] += g[-1]
    g = g[1:-1]
    g[:, 1] += g[:, 0]
    g[:, -2] += g[:, -1]
    g = g[:, 1:-1]
    g[:, :, 1] += g[:, :, 0]
    g[:, :, -2] += g[:, :, -1]
    return g[:, :, 1:-1]


def conv3(x, w, b):
    """3x3x3 convolution with replication padding, stride 1."""
    m = x.shape[0]
    cout = w.shape[2]
    xp = _edge_pad(x)
    y = np.empty((m * m * m, cout))
    y[:] = b
    k = 0
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                sl = xp[dz:dz + m, dy:dy + m, dx:dx + m].reshape(-1, x.shape[3])
                y += sl @ w[k]
                k += 1
    return y.reshape(m, m, m, cout)


def conv3_backward(x, w, gy):
    m = x.shape[0]
    cin = x.shape[3]
    xp = _edge_pad(x)
    gyf = gy.reshape(-1, gy.shape[3])
    gb = gyf.sum(axis=0)
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    k = 0
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                sl = xp[dz:dz + m, dy:dy + m, dx:dx + m].reshape(-1, cin)
                gw[k] = sl.T @ gyf
                gxp[dz:dz + m, dy:dy + m, dx:dx + m] += (gyf @ w[k].T).reshape(
                    m, m, m, cin)
                k += 1
    return _fold_pad(gxp), gw, gb


def avgpool2(x):
    m = x.shape[0]
    h = m // 2
    return x.reshape(h, 2, h, 2, h, 2, -1).mean(axis=(1, 3, 5))


def avgpool2_backward(gy):
    h = gy.shape[0]
    g = np.broadcast_to(
        gy[:, None, :, None, :, None, :] / 8.0,
        (h, 2, h, 2, h, 2, gy.shape[3]),
    )
    return g.reshape(2 * h, 2 * h, 2 * h, -1).copy()


def upsample2(x):
    """Nearest-neighbor 2x upsampling."""
    h = x.shape[0]
    g = np.broadcast_to(
        x[:, None, :, None, :, None, :],
        (h, 2, h, 2, h, 2, x.shape[3]),
    )
    return g.reshape(2 * h, 2 * h, 2 * h, -1).copy()


def upsample2_backward(gy):
    m = gy.shape[0]
    h = m // 2
    return gy.reshape(h, 2, h, 2, h, 2, -1).sum(axis=(1, 3, 5))


def _trilinear_coords(m, queries):
    """Cell-center lattice coordinates, clamped to the boundary.

    The grid spans [-0.5, 0.5]^3 with cell centers at -0.5 + (i+0.5)/m.
    """
    u = (np.asarray(queries, dtype=np.float64) + 0.5) * m - 0.5
    u = np.clip(u, 0.0, m - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), m - 2)
    t = u - i0
    return i0, t


def trilinear(grid, queries):
    """Trilinear interpolation of an (m,m,m,c) grid at (n,3) points."""
    m = grid.shape[0]
    i0, t = _trilinear_coords(m, queries)
    out = np.zeros((len(queries), grid.shape[3]))
    for cz in range(2):
        for cy in range(2):
            for cx in range(2):
                wz = t[:, 0] if cz else 1.0 - t[:, 0]
                wy = t[:, 1] if cy else 1.0 - t[:, 1]
                wx = t[:, 2] if cx else 1.0 - t[:, 2]
                vals = grid[i0[:, 0] + cz, i0[:, 1] + cy, i0[:, 2] + cx]
                out += (wz * wy * wx)[:, None] * vals
    return out


def trilinear_backward(grid_shape, queries, gy):
    """Scatter adjoint of trilinear into a zero grid of grid_shape."""
    m = grid_shape[0]
    i0, t = _trilinear_coords(m, queries)
    ggrid = np.zeros(grid_shape)
    for cz in range(2):
        for cy in range(2):
            for cx in range(2):
                wz = t[:, 0] if cz else 1.0 - t[:, 0]
                wy = t[:, 1] if cy else 1.0 - t[:, 1]
                wx = t[:, 2] if cx else 1.0 - t[:, 2]
                np.add.at(
                    ggrid,
                    (i0[:, 0] + cz, i0[:, 1] + cy, i0[:, 2] + cx),
                    (wz * wy * wx)[:, None] * gy,
                )
    return ggrid


def segment_max(values, segments, n_segments):
    """Per-segment channelwise max; segments with no members get zero.

    Returns (out, winner) where winner holds the lowest contributing row
    index per (segment, channel), or -1 for empty segments.  The winner
    array routes gradients in the backward pass.
    """
    n, k = values.shape
    out = np.full((n_segments, k), -np.inf)
    np.maximum.at(out, segments, values)
    cand = np.where(values == out[segments], np.arange(n)[:, None], n)
    winner = np.full((n_segments, k), n, dtype=np.int64)
    np.minimum.at(winner, segments, cand)
    empty = winner == n
    winner[empty] = -1
    out[empty] = 0.0
    return out, winner


def segment_max_backward(winner, gy, n_values):
    gvals = np.zeros((n_values, gy.shape[1]))
    valid = winner >= 0
    cols = np.broadcast_to(np.arange(gy.shape[1]), winner.shape)
    np.add.at(gvals, (winner[valid], cols[valid]), gy[valid])
    return gvals
