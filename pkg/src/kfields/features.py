"""Learned conditioning features for the kernel.

An input cloud is voxelized into an M^3 grid over the normalized cube;
a shared point encoder is max-pooled per cell, a small convolutional
encoder-decoder spreads context across the grid, and queries read the
result by trilinear interpolation.  A separate head maps per-point
features to solve weights in (0, 1).

The forward passes are written with the polymorphic autodiff ops, so
the same code serves eager inference and tape-recorded training.  The
final backbone layer and the final weight-head layer start at zero:
an untrained model produces the zero feature everywhere (the kernel
then reduces to its position-only form) and uniform weights of 0.5.
"""

import struct

import numpy as np

from . import autodiff as ad
from .errors import UsageError

__all__ = [
    "FeatureNetworkParams", "voxelize", "encode", "backbone",
    "interpolate", "point_weights", "feature_grid", "FeatureField",
    "save_checkpoint", "load_checkpoint",
]

_MAGIC = b"NKF1"
_HIDDEN = 64
_ENCODER_IN = 6


def _layout(d, hidden=_HIDDEN):
    h = hidden
    return [
        ("enc.w1", (_ENCODER_IN, h)), ("enc.b1", (h,)),
        ("enc.w2", (h, h)), ("enc.b2", (h,)),
        ("enc.w3", (h, d)), ("enc.b3", (d,)),
        ("down0.w", (27, d, d)), ("down0.b", (d,)),
        ("down1.w", (27, d, 2 * d)), ("down1.b", (2 * d,)),
        ("mid.w", (27, 2 * d, 4 * d)), ("mid.b", (4 * d,)),
        ("up1.w", (27, 4 * d, 2 * d)), ("up1.b", (2 * d,)),
        ("up0.w", (27, 2 * d, d)), ("up0.b", (d,)),
        ("out.w", (d, d)), ("out.b", (d,)),
        ("rho.w1", (d, h)), ("rho.b1", (h,)),
        ("rho.w2", (h, 1)), ("rho.b2", (1,)),
    ]


class FeatureNetworkParams:
    """Flat float64 parameter vector with named segment views."""

    def __init__(self, d, vector=None):
        if d < 1:
            raise ValueError("channel count must be positive")
        self.d = int(d)
        self.layout = _layout(self.d)
        self._offsets = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self._offsets[name] = (off, shape)
            off += size
        self.count = off
        if vector is None:
            vector = np.zeros(self.count)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.count,):
            raise ValueError(
                f"expected {self.count} parameters, got {vector.size}")
        self.vector = vector

    def segment(self, name):
        off, shape = self._offsets[name]
        return self.vector[off:off + int(np.prod(shape))].reshape(shape)

    def segments(self):
        return {name: self.segment(name) for name, _ in self.layout}

    def copy(self):
        return FeatureNetworkParams(self.d, self.vector.copy())

    @classmethod
    def initialized(cls, d, seed=0):
        """Fan-in uniform init; final layers start near (not at) zero.

        The kernel consumes features quadratically, so the exact-zero
        feature field is a stationary point of any downstream loss:
        a hard-zero final layer would leave every parameter gradient
        identically zero and training could never move.  Scaling the
        final backbone layer down by 100 instead keeps the initial
        model within ~1e-6 of the position-only kernel while leaving
        the saddle.  The weight head's final layer stays at zero so
        untrained solve weights are exactly 0.5.
        """
        params = cls(d)
        rng = np.random.default_rng(seed)
        for name, shape in params.layout:
            if ".b" in name or name == "rho.w2":
                continue
            seg = params.segment(name)
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            if name == "out.w":
                bound *= 0.01
            seg[...] = rng.uniform(-bound, bound, size=shape)
        return params


def voxelize(points, resolution):
    """Cell index and in-cell offset for points in the normalized cube.

    Cell centers sit at -0.5 + (i + 0.5)/M; offsets are measured from
    the center in cell units, so they lie in [-0.5, 0.5] for in-domain
    points.  Out-of-cube points clamp to the border cell.
    """
    m = int(resolution)
    p = np.asarray(points, dtype=np.float64)
    u = (p + 0.5) * m
    idx = np.clip(np.floor(u).astype(np.int64), 0, m - 1)
    offsets = u - idx - 0.5
    linear = (idx[:, 0] * m + idx[:, 1]) * m + idx[:, 2]
    return linear, offsets


def encode(cloud, params, resolution, use_normals=True):
    """Per-cell max-pooled point features; empty cells hold zeros."""
    m = int(resolution)
    if m < 2:
        raise ValueError("resolution must be at least 2")
    linear, offsets = voxelize(cloud.points, m)
    if use_normals:
        inputs = np.hstack([offsets, cloud.normals])
    else:
        inputs = np.hstack([offsets, np.zeros_like(offsets)])
    seg = params if isinstance(params, dict) else params.segments()
    h = ad.relu(ad.add(ad.matmul(_const(inputs), seg["enc.w1"]),
                       seg["enc.b1"]))
    h = ad.relu(ad.add(ad.matmul(h, seg["enc.w2"]), seg["enc.b2"]))
    z = ad.add(ad.matmul(h, seg["enc.w3"]), seg["enc.b3"])
    pooled = ad.segment_max(z, linear, m ** 3)
    d = ad.value_of(seg["enc.b3"]).shape[0]
    return ad.reshape(pooled, (m, m, m, d))


def _const(x):
    return np.asarray(x, dtype=np.float64)


def backbone(grid, params):
    """Three-level encoder-decoder with additive skips; output channels d."""
    m = ad.value_of(grid).shape[0]
    if m % 4 != 0:
        raise ValueError("resolution must be divisible by 4")
    seg = params if isinstance(params, dict) else params.segments()
    d = ad.value_of(seg["out.b"]).shape[0]
    e0 = ad.relu(ad.conv3(grid, seg["down0.w"], seg["down0.b"]))
    e1 = ad.relu(ad.conv3(ad.avgpool2(e0), seg["down1.w"], seg["down1.b"]))
    mid = ad.relu(ad.conv3(ad.avgpool2(e1), seg["mid.w"], seg["mid.b"]))
    d1 = ad.relu(ad.conv3(mid, seg["up1.w"], seg["up1.b"]))
    u1 = ad.add(ad.upsample2(d1), e1)
    d2 = ad.relu(ad.conv3(u1, seg["up0.w"], seg["up0.b"]))
    u2 = ad.add(ad.upsample2(d2), e0)
    flat = ad.reshape(u2, (m ** 3, d))
    out = ad.add(ad.matmul(flat, seg["out.w"]), seg["out.b"])
    return ad.reshape(out, (m, m, m, d))


def interpolate(grid, queries):
    """Trilinear read of the feature grid, clamped at the boundary."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        out = ad.trilinear(grid, queries[None, :])
        return ad.reshape(out, (ad.value_of(out).shape[1],))
    return ad.trilinear(grid, queries)


def point_weights(features, params):
    """Solve weights in (0, 1) from per-point features."""
    seg = params if isinstance(params, dict) else params.segments()
    h = ad.relu(ad.add(ad.matmul(features, seg["rho.w1"]), seg["rho.b1"]))
    w = ad.sigmoid(ad.add(ad.matmul(h, seg["rho.w2"]), seg["rho.b2"]))
    return ad.reshape(w, (ad.value_of(features).shape[0],))


def feature_grid(cloud, params, resolution, use_normals=True):
    """encode + backbone in one call."""
    return backbone(encode(cloud, params, resolution, use_normals), params)


class FeatureField:
    """Inference-time feature function for a fixed cloud and parameters."""

    def __init__(self, params, cloud, resolution, use_normals=True):
        self.params = params
        self.resolution = int(resolution)
        self.grid = feature_grid(cloud, params, self.resolution, use_normals)
        self._cloud = cloud

    def __call__(self, queries):
        return interpolate(self.grid, queries)

    def input_weights(self):
        """Solve weights for the cloud this field was built from."""
        feats = interpolate(self.grid, self._cloud.points)
        return point_weights(feats, self.params)


def save_checkpoint(path, params, resolution):
    """Write the NKF1 parameter file (bit-exact round trip)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", int(resolution), params.d,
                             len(params.layout)))
        for name, shape in params.layout:
            data = params.segment(name)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.size))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise UsageError(f"truncated checkpoint: {path}")
    return buf


def load_checkpoint(path):
    """Read an NKF1 file; returns (params, resolution)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise UsageError(
                f"bad checkpoint magic: expected {_MAGIC!r}, got {magic!r}")
        resolution, d, nseg = struct.unpack(
            "<III", _read_exact(fh, 12, path))
        params = FeatureNetworkParams(d)
        if nseg != len(params.layout):
            raise UsageError(f"unexpected segment count in {path}")
        for name, shape in params.layout:
            nlen, = struct.unpack("<I", _read_exact(fh, 4, path))
            got = _read_exact(fh, nlen, path).decode("utf-8")
            if got != name:
                raise UsageError(
                    f"unexpected segment {got!r} (wanted {name!r}) in {path}")
            count, = struct.unpack("<I", _read_exact(fh, 4, path))
            size = int(np.prod(shape))
            if count != size:
                raise UsageError(f"segment {name} has wrong size in {path}")
            raw = _read_exact(fh, 8 * size, path)
            params.segment(name)[...] = np.frombuffer(
                raw, dtype="<f8").reshape(shape)
        if fh.read(1):
            raise UsageError(f"trailing bytes in checkpoint {path}")
    return params, int(resolution)
