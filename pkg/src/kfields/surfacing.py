"""Dense field evaluation on grids and marching-cubes extraction.

The extractor computes one vertex per crossed lattice edge (global edge
indexing), so triangles of neighboring cells share vertices exactly and
the result is watertight wherever the surface does not leave the grid.
"""

import numpy as np

from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .meshes import TriangleMesh

__all__ = ["ScalarGrid", "evaluate_grid", "marching_cubes", "domain_with_margin"]


class ScalarGrid:
    """Scalar samples at the cell centers of an R^3 grid over a box."""

    def __init__(self, values, lo, hi):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("values must be a 3-d array")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite grid values")
        self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(3)
        if not (self.hi > self.lo).all():
            raise ValueError("degenerate domain")

    @property
    def resolution(self):
        return self.values.shape

    def centers(self, axis):
        r = self.values.shape[axis]
        step = (self.hi[axis] - self.lo[axis]) / r
        return self.lo[axis] + (np.arange(r) + 0.5) * step


def domain_with_margin(points, margin=0.05):
    """Axis-aligned box around the points, padded by the given fraction
    of the largest extent on every side."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = margin * max(float((hi - lo).max()), 1e-9)
    return lo - pad, hi + pad


def evaluate_grid(field, resolution, lo, hi, chunk=4096):
    """Evaluate an implicit field at all cell centers of the grid."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo = np.asarray(lo, dtype=np.float64).reshape(3)
    hi = np.asarray(hi, dtype=np.float64).reshape(3)
    axes = [lo[a] + (np.arange(resolution) + 0.5) * (hi[a] - lo[a]) / resolution
            for a in range(3)]
    queries = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = field.evaluate(queries, chunk=chunk)
    return ScalarGrid(values.reshape(resolution, resolution, resolution), lo, hi)


# local edge id -> (axis of the edge, lattice offset of its low corner)
_EDGE_AXIS = np.empty(12, dtype=np.int64)
_EDGE_BASE = np.empty((12, 3), dtype=np.int64)
for _e, (_a, _b) in enumerate(EDGE_CORNERS):
    _oa = CORNER_OFFSETS[_a]
    _ob = CORNER_OFFSETS[_b]
    _EDGE_AXIS[_e] = int(np.nonzero(_oa != _ob)[0][0])
    _EDGE_BASE[_e] = np.minimum(_oa, _ob)


def marching_cubes(grid, iso=0.0):
    """Extract the iso-surface as a triangle mesh.

    Corner values below iso are inside; triangles are wound so their
    normals point toward values above iso.  A field with no sign change
    yields an empty mesh.
    """
    v = grid.values - iso
    rx, ry, rz = v.shape
    if min(rx, ry, rz) < 2:
        raise ValueError("grid too small for surface extraction")
    inside = v < 0.0

    cube_index = np.zeros((rx - 1, ry - 1, rz - 1), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        cube_index |= (
            inside[ox:rx - 1 + ox, oy:ry - 1 + oy, oz:rz - 1 + oz].astype(np.int64)
            << bit
        )
    active = np.nonzero(EDGE_TABLE[cube_index] != 0)
    if len(active[0]) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    ci = np.stack(active, axis=1)  # (na, 3) cube lattice coords
    codes = EDGE_TABLE[cube_index[active]]  # (na,)

    # global lattice edge ids: x edges, then y edges, then z edges
    nx_edges = (rx - 1) * ry * rz
    ny_edges = rx * (ry - 1) * rz

    def edge_ids(local_edge):
        base = ci + _EDGE_BASE[local_edge]
        axis = _EDGE_AXIS[local_edge]
        if axis == 0:
            return (base[:, 0] * ry + base[:, 1]) * rz + base[:, 2]
        if axis == 1:
            return nx_edges + (base[:, 0] * (ry - 1) + base[:, 1]) * rz + base[:, 2]
        return (nx_edges + ny_edges
                + (base[:, 0] * ry + base[:, 1]) * (rz - 1) + base[:, 2])

    per_edge_ids = np.stack([edge_ids(e) for e in range(12)], axis=1)  # (na, 12)

    # vertices: one per unique crossed edge
    crossed = (codes[:, None] & (1 << np.arange(12))[None, :]) != 0
    unique_ids = np.unique(per_edge_ids[crossed])

    axes_c = [grid.centers(a) for a in range(3)]

    def decode(ids):
        axis = np.full(len(ids), 2, dtype=np.int64)
        axis[ids < nx_edges] = 0
        axis[(ids >= nx_edges) & (ids < nx_edges + ny_edges)] = 1
        i = np.empty(len(ids), dtype=np.int64)
        j = np.empty_like(i)
        k = np.empty_like(i)
        for a, (off, jdim, kdim) in enumerate(
            ((0, ry, rz), (nx_edges, ry - 1, rz), (nx_edges + ny_edges, ry, rz - 1))
        ):
            m = axis == a
            rem = ids[m] - off
            i[m] = rem // (jdim * kdim)
            j[m] = (rem % (jdim * kdim)) // kdim
            k[m] = rem % kdim
        return axis, i, j, k

    axis, i, j, k = decode(unique_ids)
    p1 = np.stack([axes_c[0][i], axes_c[1][j], axes_c[2][k]], axis=1)
    i2 = i + (axis == 0)
    j2 = j + (axis == 1)
    k2 = k + (axis == 2)
    p2 = np.stack([axes_c[0][i2], axes_c[1][j2], axes_c[2][k2]], axis=1)
    v1 = v[i, j, k]
    v2 = v[i2, j2, k2]
    t = -v1 / (v2 - v1)
    verts = p1 + t[:, None] * (p2 - p1)

    # triangles from the case table, remapped to unique vertex ids
    tri_entries = TRI_TABLE[cube_index[active]]  # (na, 15)
    valid = tri_entries >= 0
    rows, cols = np.nonzero(valid)
    flat_ids = per_edge_ids[rows, tri_entries[rows, cols]]
    flat_verts = np.searchsorted(unique_ids, flat_ids)
    tris = flat_verts.reshape(-1, 3)
    # table winding encloses the negative side; flip so normals point
    # toward f > iso
    tris = tris[:, [0, 2, 1]]

    # degenerate slivers (corner values at the iso level collapse several
    # edge vertices onto one point) are kept: they carry no area but
    # removing them would open the edge pairing
    return TriangleMesh(verts, tris)
