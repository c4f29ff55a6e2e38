"""Exact nearest-neighbor queries between point sets.

Reference points are bucketed into a uniform grid; queries scan
Chebyshev shells outward and stop once no unscanned cell can hold a
closer point, so results match brute force exactly.  The compiled core
runs the scan per query; the NumPy fallback advances all queries shell
by shell.
"""

import numpy as np

from . import _backend

__all__ = ["nearest_neighbors", "brute_force_nearest"]

_MAX_CELLS_PER_AXIS = 160


def brute_force_nearest(ref, query, chunk=1024):
    """O(n m) reference implementation used as the oracle in tests."""
    ref = np.asarray(ref, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    idx = np.empty(len(query), dtype=np.int64)
    dist = np.empty(len(query), dtype=np.float64)
    for lo in range(0, len(query), chunk):
        q = query[lo:lo + chunk]
        d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        idx[lo:lo + chunk] = best
        dist[lo:lo + chunk] = np.sqrt(d2[np.arange(len(q)), best])
    return idx, dist


def _build_grid(ref):
    lo = ref.min(axis=0)
    hi = ref.max(axis=0)
    extent = np.maximum(hi - lo, 1e-12)
    cell = float(max((extent.prod() / max(len(ref), 1)) ** (1.0 / 3.0), 1e-9))
    dims = np.clip(np.ceil(extent / cell).astype(np.int64), 1, _MAX_CELLS_PER_AXIS)
    cell = float((extent / dims).max()) * (1.0 + 1e-12)
    cells = np.clip(((ref - lo) / cell).astype(np.int64), 0, dims - 1)
    lin = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    order = np.argsort(lin, kind="stable").astype(np.int64)
    ncells = int(dims.prod())
    counts = np.bincount(lin, minlength=ncells)
    starts = np.zeros(ncells + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return lo, cell, dims, starts, order


def nearest_neighbors(ref, query):
    """Index into ref and distance of the closest ref point per query."""
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    if len(ref) == 0:
        raise ValueError("empty reference set")
    if len(query) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    lo, cell, dims, starts, order = _build_grid(ref)
    if _backend.HAVE_COMPILED:
        return _backend._core.grid_nearest(
            ref, query, lo, cell, int(dims[0]), int(dims[1]), int(dims[2]),
            starts, order,
        )
    return _numpy_grid_nearest(ref, query, lo, cell, dims, starts, order)


def _shell_offsets(s):
    if s == 0:
        return np.zeros((1, 3), dtype=np.int64)
    r = np.arange(-s, s + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).max(axis=1) == s]


def _numpy_grid_nearest(ref, query, origin, cell, dims, starts, order):
    nq = len(query)
    best_d2 = np.full(nq, np.inf)
    best_i = np.full(nq, -1, dtype=np.int64)
    qcell = np.floor((query - origin) / cell).astype(np.int64)
    # clamp the scan center into the grid; the shell bound stays a lower
    # bound and the ring count stays capped by the dims
    qcell = np.clip(qcell, 0, dims[None, :] - 1)
    send = np.maximum(qcell, dims[None, :] - 1 - qcell).max(axis=1)
    smax = int(send.max())
    active = np.arange(nq)
    for s in range(smax + 1):
        if len(active) == 0:
            break
        qa = qcell[active]
        for off in _shell_offsets(s):
            cellpos = qa + off
            valid = ((cellpos >= 0) & (cellpos < dims[None, :])).all(axis=1)
            if not valid.any():
                continue
            lin = (
                cellpos[valid, 0] * dims[1] + cellpos[valid, 1]
            ) * dims[2] + cellpos[valid, 2]
            st = starts[lin]
            en = starts[lin + 1]
            kmax = int((en - st).max())
            act = active[valid]
            for t in range(kmax):
                has = st + t < en
                if not has.any():
                    break
                sub = act[has]
                ridx = order[st[has] + t]
                d2 = ((query[sub] - ref[ridx]) ** 2).sum(axis=1)
                upd = d2 < best_d2[sub]
                tgt = sub[upd]
                best_d2[tgt] = d2[upd]
                best_i[tgt] = ridx[upd]
        bound = (s * cell) ** 2
        done = (best_i[active] >= 0) & (best_d2[active] <= bound)
        active = active[~done]
    return best_i, np.sqrt(best_d2)
