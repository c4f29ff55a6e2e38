# cython: language_level=3
"""Compiled hot loops: pairwise kernel evaluation, Gram assembly, the
fused field-evaluation kernel, the pairwise kernel backward, and exact
nearest-neighbor queries on a uniform grid.

Pairwise entry points evaluate the angle with the component-wise Kahan
formula (two extra passes over the coordinates, worth it near theta = 0).
The fused evaluation path receives inner products from a BLAS GEMM and
uses the algebraically identical norm-expanded form; see kernel.py for
the accuracy discussion.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, floor, sin, sqrt

cnp.import_array()

cdef double PI = 3.14159265358979323846264338327950288

# Below this sin(theta), pairs are treated as parallel in the backward
# pass and the angle term is dropped (cone subgradient; the symmetric
# sum then gives the exact diagonal gradient d(2r^2)/du = 4u).
cdef double SIN_GUARD = 1e-7


cdef inline double _pair_kernel(const double* a, const double* b,
                                Py_ssize_t k) noexcept nogil:
    """Neural Spline kernel between extended points a, b of length k
    (position plus feature coordinates; the homogeneous 1 is implicit)."""
    cdef double ra2 = 1.0, rb2 = 1.0
    cdef double ra, rb, x, y, num, den, theta
    cdef Py_ssize_t t
    for t in range(k):
        ra2 += a[t] * a[t]
        rb2 += b[t] * b[t]
    ra = sqrt(ra2)
    rb = sqrt(rb2)
    num = 0.0
    den = 0.0
    for t in range(k):
        x = rb * a[t] - ra * b[t]
        num += x * x
        y = rb * a[t] + ra * b[t]
        den += y * y
    x = rb - ra
    num += x * x
    y = rb + ra
    den += y * y
    theta = 2.0 * atan2(sqrt(num), sqrt(den))
    return ra * rb / PI * (sin(theta) + 2.0 * (PI - theta) * cos(theta))


def gram_extended(const double[:, ::1] pts):
    """Dense Gram matrix over extended points (n, k).

    The diagonal is written in closed form, 2 * ||x_tilde||^2, which the
    general path only reaches to ~1e-9 relative.
    """
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t k = pts.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] g = out
    cdef Py_ssize_t i, j, t
    cdef double r2, v
    with nogil:
        for i in range(n):
            r2 = 1.0
            for t in range(k):
                r2 += pts[i, t] * pts[i, t]
            g[i, i] = 2.0 * r2
            for j in range(i + 1, n):
                v = _pair_kernel(&pts[i, 0], &pts[j, 0], k)
                g[i, j] = v
                g[j, i] = v
    return out


def cross_kernel(const double[:, ::1] qpts, const double[:, ::1] bpts):
    """Full kernel matrix (m, n) between query and basis extended points."""
    cdef Py_ssize_t m = qpts.shape[0]
    cdef Py_ssize_t n = bpts.shape[0]
    cdef Py_ssize_t k = qpts.shape[1]
    if bpts.shape[1] != k:
        raise ValueError("extended dimension mismatch")
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] km = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                km[i, j] = _pair_kernel(&qpts[i, 0], &bpts[j, 0], k)
    return out


def fused_matvec(const double[:, ::1] dots, const double[::1] rq,
                 const double[::1] rb, const double[::1] coef,
                 double[::1] out):
    """out[i] += sum_j K_ij * coef[j] with K built in place from
    homogeneous inner products dots (m, n) and norms rq (m), rb (n).

    K = (Q + 2 (pi - theta) D) / pi with Q = sqrt(max(r^2 s^2 - D^2, 0))
    and theta = atan2(Q, D); this is the norm-expanded Kahan form.
    """
    cdef Py_ssize_t m = dots.shape[0]
    cdef Py_ssize_t n = dots.shape[1]
    cdef Py_ssize_t i, j
    cdef double d, rs, q2, q, theta, acc
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(n):
                d = dots[i, j]
                rs = rq[i] * rb[j]
                q2 = rs * rs - d * d
                q = sqrt(q2) if q2 > 0.0 else 0.0
                theta = atan2(q, d)
                acc += (q + 2.0 * (PI - theta) * d) / PI * coef[j]
            out[i] += acc
    return None


def kernel_backward(const double[:, ::1] apts, const double[:, ::1] bpts,
                    const double[:, ::1] gbar,
                    double[:, ::1] abar, double[:, ::1] bbar):
    """Accumulate adjoints of the pairwise kernel matrix.

    Given upstream gbar (m, n) for K_ij = k(a_i, b_j), adds dK/da_i and
    dK/db_j contributions into abar (m, k) and bbar (n, k).  Gradients
    with respect to the implicit homogeneous coordinate are discarded.
    Near-parallel pairs (sin theta below the guard) drop the angle term.
    """
    cdef Py_ssize_t m = apts.shape[0]
    cdef Py_ssize_t n = bpts.shape[0]
    cdef Py_ssize_t k = apts.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double ra2, rb2, dd, ra, rb, x, y, num, den, theta
    cdef double g, gp, sin_t, cos_t, up, ca_a, ca_b, cb_b, cb_a
    with nogil:
        for i in range(m):
            for j in range(n):
                up = gbar[i, j]
                if up == 0.0:
                    continue
                ra2 = 1.0
                rb2 = 1.0
                dd = 1.0
                for t in range(k):
                    ra2 += apts[i, t] * apts[i, t]
                    rb2 += bpts[j, t] * bpts[j, t]
                    dd += apts[i, t] * bpts[j, t]
                ra = sqrt(ra2)
                rb = sqrt(rb2)
                num = 0.0
                den = 0.0
                for t in range(k):
                    x = rb * apts[i, t] - ra * bpts[j, t]
                    num += x * x
                    y = rb * apts[i, t] + ra * bpts[j, t]
                    den += y * y
                x = rb - ra
                num += x * x
                y = rb + ra
                den += y * y
                theta = 2.0 * atan2(sqrt(num), sqrt(den))
                sin_t = sin(theta)
                if sin_t <= SIN_GUARD:
                    ca_a = 2.0 * rb / ra
                    cb_b = 2.0 * ra / rb
                    for t in range(k):
                        abar[i, t] += up * ca_a * apts[i, t]
                        bbar[j, t] += up * cb_b * bpts[j, t]
                else:
                    cos_t = cos(theta)
                    g = sin_t + 2.0 * (PI - theta) * cos_t
                    gp = -cos_t - 2.0 * (PI - theta) * sin_t
                    # dK/da = (s g / (pi r)) a - (gp / (pi sin)) (b - cos (s/r) a)
                    ca_a = rb * g / (PI * ra) + gp * cos_t * rb / (PI * sin_t * ra)
                    ca_b = -gp / (PI * sin_t)
                    cb_b = ra * g / (PI * rb) + gp * cos_t * ra / (PI * sin_t * rb)
                    cb_a = -gp / (PI * sin_t)
                    for t in range(k):
                        abar[i, t] += up * (ca_a * apts[i, t] + ca_b * bpts[j, t])
                        bbar[j, t] += up * (cb_b * bpts[j, t] + cb_a * apts[i, t])
    return None


def grid_nearest(const double[:, ::1] ref, const double[:, ::1] query,
                 const double[::1] origin, double cell, Py_ssize_t nx,
                 Py_ssize_t ny, Py_ssize_t nz,
                 const long long[::1] starts, const long long[::1] order):
    """Exact nearest neighbor of each query among ref points.

    The caller buckets ref points into an nx*ny*nz grid (starts is the
    CSR offset array over linearized cells, order the point permutation).
    Cells are scanned in Chebyshev shells around the query's cell; after
    finishing shell s the search stops once the best distance is at most
    s * cell, which no unscanned point can beat.
    """
    cdef Py_ssize_t nq = query.shape[0]
    cdef cnp.ndarray[long long, ndim=1] out_idx = np.empty(nq, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] out_dist = np.empty(nq, dtype=np.float64)
    cdef long long[::1] oi = out_idx
    cdef double[::1] od = out_dist
    cdef Py_ssize_t q, cx, cy, cz, s, send, b, ix, iy, iz, lo, hi, p, t
    cdef Py_ssize_t x0, x1, y0, y1, z0, z1
    cdef long long best_i
    cdef double qx, qy, qz, best_d2, dx, dy, dz, d2, inv, bound
    cdef bint shell_face
    inv = 1.0 / cell
    with nogil:
        for q in range(nq):
            qx = query[q, 0]
            qy = query[q, 1]
            qz = query[q, 2]
            cx = <Py_ssize_t>floor((qx - origin[0]) * inv)
            cy = <Py_ssize_t>floor((qy - origin[1]) * inv)
            cz = <Py_ssize_t>floor((qz - origin[2]) * inv)
            # clamp the scan center into the grid; the shell bound stays
            # a lower bound and the ring count stays capped by the dims
            if cx < 0:
                cx = 0
            elif cx > nx - 1:
                cx = nx - 1
            if cy < 0:
                cy = 0
            elif cy > ny - 1:
                cy = ny - 1
            if cz < 0:
                cz = 0
            elif cz > nz - 1:
                cz = nz - 1
            # largest shell that still touches the grid from this cell
            send = cx if cx > nx - 1 - cx else nx - 1 - cx
            b = cy if cy > ny - 1 - cy else ny - 1 - cy
            if b > send:
                send = b
            b = cz if cz > nz - 1 - cz else nz - 1 - cz
            if b > send:
                send = b
            best_d2 = 1e300
            best_i = -1
            for s in range(send + 1):
                x0 = cx - s if cx - s > 0 else 0
                x1 = cx + s if cx + s < nx - 1 else nx - 1
                y0 = cy - s if cy - s > 0 else 0
                y1 = cy + s if cy + s < ny - 1 else ny - 1
                z0 = cz - s if cz - s > 0 else 0
                z1 = cz + s if cz + s < nz - 1 else nz - 1
                for ix in range(x0, x1 + 1):
                    for iy in range(y0, y1 + 1):
                        for iz in range(z0, z1 + 1):
                            # only the new shell, not the filled cube
                            shell_face = (ix == cx - s or ix == cx + s or
                                          iy == cy - s or iy == cy + s or
                                          iz == cz - s or iz == cz + s)
                            if not shell_face:
                                continue
                            p = (ix * ny + iy) * nz + iz
                            lo = <Py_ssize_t>starts[p]
                            hi = <Py_ssize_t>starts[p + 1]
                            for t in range(lo, hi):
                                dx = ref[order[t], 0] - qx
                                dy = ref[order[t], 1] - qy
                                dz = ref[order[t], 2] - qz
                                d2 = dx * dx + dy * dy + dz * dz
                                if d2 < best_d2:
                                    best_d2 = d2
                                    best_i = order[t]
                bound = <double>s * cell
                if best_i >= 0 and best_d2 <= bound * bound:
                    break
            oi[q] = best_i
            od[q] = sqrt(best_d2)
    return out_idx, out_dist
