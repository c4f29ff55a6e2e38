"""Neural Spline kernel on homogeneous coordinates.

The closed form for extended points u, v (position, optionally with
concatenated feature coordinates) is

    K(u, v) = (|u~| |v~| / pi) (sin t + 2 (pi - t) cos t)

with u~ = (u, 1), v~ = (v, 1) and t the angle between u~ and v~,
evaluated through the Kahan formula

    t = 2 atan( || |v~| u~ - |u~| v~ || / || |v~| u~ + |u~| v~ || )

which stays accurate for nearly parallel arguments where acos of the
normalized dot product loses half the significant digits.
"""

import numpy as np

from . import _backend
from . import _kernel_numpy as _np_impl

__all__ = [
    "stable_angle",
    "k_ns",
    "k_learned",
    "extend",
    "gram",
    "cross_kernel",
    "evaluate_sum",
    "kernel_backward",
]

_EVAL_CHUNK = 4096


def stable_angle(u, v):
    """Angle between two vectors in [0, pi] via the Kahan formula."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal dimension")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero-norm input")
    num = np.linalg.norm(nv * u - nu * v)
    den = np.linalg.norm(nv * u + nu * v)
    return 2.0 * float(np.arctan2(num, den))


def _pair(u_ext, v_ext):
    """Kernel between two extended points given as plain 1-d arrays."""
    uh = np.append(u_ext, 1.0)
    vh = np.append(v_ext, 1.0)
    r = np.linalg.norm(uh)
    s = np.linalg.norm(vh)
    t = stable_angle(uh, vh)
    return r * s / np.pi * (np.sin(t) + 2.0 * (np.pi - t) * np.cos(t))


def k_ns(x, z):
    """Neural Spline kernel between two 3-d positions."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if not (np.isfinite(x).all() and np.isfinite(z).all()):
        raise ValueError("non-finite input")
    return _pair(x, z)


def k_learned(p_pos, p_feat, q_pos, q_feat):
    """Data-dependent kernel: Neural Spline on [position : feature]."""
    p_feat = np.asarray(p_feat, dtype=np.float64).reshape(-1)
    q_feat = np.asarray(q_feat, dtype=np.float64).reshape(-1)
    if p_feat.shape != q_feat.shape:
        raise ValueError("feature dimension mismatch")
    u = np.concatenate([np.asarray(p_pos, dtype=np.float64).reshape(-1), p_feat])
    v = np.concatenate([np.asarray(q_pos, dtype=np.float64).reshape(-1), q_feat])
    return _pair(u, v)


def extend(positions, features=None):
    """Stack positions (n, 3) and optional features (n, d) into the
    extended coordinate array the batched paths consume."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if features is None:
        return positions
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(positions):
        raise ValueError("features must be (n, d) matching positions")
    if features.shape[1] == 0:
        return positions
    return np.ascontiguousarray(np.hstack([positions, features]))


def gram(positions, features=None):
    """Symmetric Gram matrix over extended points."""
    pts = extend(positions, features)
    if len(pts) == 0:
        raise ValueError("empty point set")
    if _backend.HAVE_COMPILED:
        return _backend._core.gram_extended(pts)
    return _np_impl.gram_extended(pts)


def cross_kernel(q_positions, q_features, b_positions, b_features):
    """Kernel matrix (m, n) between query and basis point sets."""
    q = extend(q_positions, q_features)
    b = extend(b_positions, b_features)
    if q.shape[1] != b.shape[1]:
        raise ValueError("extended dimension mismatch")
    if _backend.HAVE_COMPILED:
        return _backend._core.cross_kernel(q, b)
    return _np_impl.cross_kernel(q, b)


def evaluate_sum(q_positions, q_features, b_positions, b_features, coef,
                 chunk=_EVAL_CHUNK):
    """sum_j coef_j K(q_i, b_j) for every query, chunked over queries.

    The inner products come from a BLAS matmul; the kernel itself is
    applied by the fused compiled loop (or its NumPy equivalent).
    """
    q = extend(q_positions, q_features)
    b = extend(b_positions, b_features)
    if q.shape[1] != b.shape[1]:
        raise ValueError("extended dimension mismatch")
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    bt = np.ascontiguousarray(b.T)
    rb = np.sqrt(1.0 + np.einsum("ij,ij->i", b, b))
    out = np.zeros(len(q), dtype=np.float64)
    for lo in range(0, len(q), chunk):
        qc = q[lo:lo + chunk]
        dots = qc @ bt + 1.0
        rq = np.sqrt(1.0 + np.einsum("ij,ij->i", qc, qc))
        if _backend.HAVE_COMPILED:
            _backend._core.fused_matvec(dots, rq, rb, coef, out[lo:lo + chunk])
        else:
            _np_impl.fused_matvec(dots, rq, rb, coef, out[lo:lo + chunk])
    return out


def kernel_backward(a_ext, b_ext, gbar):
    """Adjoints of the pairwise kernel matrix K_ij = k(a_i, b_j).

    Returns (abar, bbar) with the same extended dimension as the inputs;
    position and feature gradients are the respective slices.
    """
    a_ext = np.ascontiguousarray(a_ext, dtype=np.float64)
    b_ext = np.ascontiguousarray(b_ext, dtype=np.float64)
    gbar = np.ascontiguousarray(gbar, dtype=np.float64)
    abar = np.zeros_like(a_ext)
    bbar = np.zeros_like(b_ext)
    if _backend.HAVE_COMPILED:
        _backend._core.kernel_backward(a_ext, b_ext, gbar, abar, bbar)
    else:
        _np_impl.kernel_backward(a_ext, b_ext, gbar, abar, bbar)
    return abar, bbar
