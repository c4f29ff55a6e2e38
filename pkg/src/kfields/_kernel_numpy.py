"""NumPy fallback for the compiled kernel core.

Batched paths use the norm-expanded form of the Kahan angle:

    || |v|u - |u|v ||^2 = 2 |u||v| (|u||v| - <u,v>)
    || |v|u + |u|v ||^2 = 2 |u||v| (|u||v| + <u,v>)

so theta = 2 atan2(sqrt(rs - D), sqrt(rs + D)) with rs = |u||v| and
D = <u,v>.  Algebraically identical to the component-wise form the
compiled core uses, but rs - D cancels in float for nearly parallel
pairs, costing ~1e-9 relative accuracy there.  Gram diagonals are
written in closed form, and the scalar entry points in kernel.py keep
full accuracy, so only off-grid near-duplicate queries see the loss.
"""

import numpy as np

_SIN_GUARD = 1e-7


def _norms_sq(pts):
    return 1.0 + np.einsum("ij,ij->i", pts, pts)


def _kernel_from_dots(rs, dots):
    """K given rs = r*s and homogeneous inner products; uses
    K = (Q + 2 (pi - theta) D) / pi with Q = rs sin(theta)."""
    lo = np.sqrt(np.maximum(rs - dots, 0.0))
    hi = np.sqrt(np.maximum(rs + dots, 0.0))
    theta = 2.0 * np.arctan2(lo, hi)
    return (lo * hi + 2.0 * (np.pi - theta) * dots) / np.pi


def gram_extended(pts):
    """Dense Gram over extended points (n, k); exact diagonal."""
    sq = _norms_sq(pts)
    r = np.sqrt(sq)
    dots = pts @ pts.T + 1.0
    out = _kernel_from_dots(np.outer(r, r), dots)
    np.fill_diagonal(out, 2.0 * sq)
    return out


def cross_kernel(qpts, bpts):
    """Kernel matrix (m, n) between query and basis extended points."""
    if qpts.shape[1] != bpts.shape[1]:
        raise ValueError("extended dimension mismatch")
    rq = np.sqrt(_norms_sq(qpts))
    rb = np.sqrt(_norms_sq(bpts))
    dots = qpts @ bpts.T + 1.0
    return _kernel_from_dots(np.outer(rq, rb), dots)


def fused_matvec(dots, rq, rb, coef, out):
    """out += K @ coef with K built from dots and norms (see above)."""
    out += _kernel_from_dots(rq[:, None] * rb[None, :], dots) @ coef


def kernel_backward(apts, bpts, gbar, abar, bbar):
    """Accumulate kernel-matrix adjoints into abar (m, k), bbar (n, k).

    Coefficient algebra (per pair, homogeneous vectors a~, b~):
        dK/da~ = ca_a * a~ + ca_b * b~,    dK/db~ = cb_b * b~ + ca_b * a~
        ca_a = (Q^2 - D^2) / (pi Q ra^2),  cb_b likewise with rb
        ca_b = (D + 2 (pi - theta) Q) / (pi Q)
    with Q = rs sin(theta).  Near-parallel pairs (Q <= guard * rs) drop
    the angle term: ca_a = 2 rb / ra, ca_b = 0.
    """
    ra2 = _norms_sq(apts)
    rb2 = _norms_sq(bpts)
    ra = np.sqrt(ra2)
    rb = np.sqrt(rb2)
    rs = np.outer(ra, rb)
    dots = apts @ bpts.T + 1.0
    lo = np.sqrt(np.maximum(rs - dots, 0.0))
    hi = np.sqrt(np.maximum(rs + dots, 0.0))
    theta = 2.0 * np.arctan2(lo, hi)
    q = lo * hi
    guarded = q <= _SIN_GUARD * rs
    qsafe = np.where(guarded, 1.0, q)
    ca_a = (q * q - dots * dots) / (np.pi * qsafe * ra2[:, None])
    cb_b = (q * q - dots * dots) / (np.pi * qsafe * rb2[None, :])
    ca_b = (dots + 2.0 * (np.pi - theta) * q) / (np.pi * qsafe)
    ca_a = np.where(guarded, 2.0 * rb[None, :] / ra[:, None], ca_a)
    cb_b = np.where(guarded, 2.0 * ra[:, None] / rb[None, :], cb_b)
    ca_b = np.where(guarded, 0.0, ca_b)

    wa = gbar * ca_a
    wb = gbar * cb_b
    wc = gbar * ca_b
    # homogeneous component gradients are discarded by construction
    abar += wa.sum(axis=1)[:, None] * apts + wc @ bpts
    bbar += wb.sum(axis=0)[:, None] * bpts + wc.T @ apts
