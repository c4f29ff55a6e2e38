"""Point cloud readers (ASCII PLY, XYZ text), mesh writers (OBJ, binary
little-endian PLY) and matching mesh readers."""

import struct
import warnings

import numpy as np

from .errors import UsageError
from .geometry import OrientedPointCloud

__all__ = [
    "read_point_cloud",
    "read_ply_cloud",
    "read_xyz_cloud",
    "read_mesh",
    "read_obj_mesh",
    "read_ply_mesh",
    "write_obj",
    "write_ply",
]

_REQUIRED = ("x", "y", "z", "nx", "ny", "nz")


def read_ply_cloud(path):
    """Read an oriented cloud from an ASCII PLY with x y z nx ny nz."""
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        first = fh.readline().strip()
        if first != "ply":
            raise UsageError(f"{path}: not a PLY file")
        count = None
        names = []
        in_vertex = False
        for line in fh:
            tok = line.split()
            if not tok or tok[0] == "comment":
                continue
            if tok[0] == "format":
                if tok[1] != "ascii":
                    raise UsageError(f"{path}: only ascii PLY input is supported")
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                names.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if count is None:
            raise UsageError(f"{path}: no vertex element")
        missing = [n for n in _REQUIRED if n not in names]
        if missing:
            raise UsageError(f"{path}: missing properties {missing}")
        rows = np.loadtxt(fh, dtype=np.float64, max_rows=count, ndmin=2)
    if rows.shape[0] != count or rows.shape[1] < len(names):
        raise UsageError(f"{path}: truncated vertex data")
    cols = [names.index(n) for n in _REQUIRED]
    data = rows[:, cols]
    if len(data) == 0:
        raise UsageError(f"{path}: no points parsed")
    return OrientedPointCloud(data[:, :3], data[:, 3:])


def read_xyz_cloud(path):
    """Read an oriented cloud from whitespace text: x y z nx ny nz."""
    try:
        with warnings.catch_warnings():
            # empty files get our own error below, not numpy's warning
            warnings.simplefilter("ignore", UserWarning)
            rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if rows.size == 0:
        raise UsageError(f"{path}: no points parsed")
    if rows.shape[1] != 6:
        raise UsageError(f"{path}: expected 6 columns, got {rows.shape[1]}")
    return OrientedPointCloud(rows[:, :3], rows[:, 3:])


def read_point_cloud(path):
    """Dispatch on content: PLY magic if present, XYZ text otherwise."""
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"ply":
        return read_ply_cloud(path)
    return read_xyz_cloud(path)


def read_obj_mesh(path):
    """Read vertices and (fan-triangulated) faces from an ASCII OBJ."""
    from .meshes import TriangleMesh

    verts = []
    tris = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise UsageError(f"{path}:{lineno}: short vertex line")
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                try:
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                except ValueError as exc:
                    raise UsageError(f"{path}:{lineno}: {exc}") from exc
                if len(idx) < 3 or any(i == 0 for i in idx):
                    raise UsageError(f"{path}:{lineno}: bad face")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not tris:
        raise UsageError(f"{path}: no mesh data")
    return TriangleMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def read_ply_mesh(path):
    """Read a triangle mesh from a binary little-endian PLY (float32
    vertex properties, `list uchar int` faces), the layout write_ply
    emits."""
    from .meshes import TriangleMesh

    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise UsageError(f"{path}: not a PLY file")
        nv = nf = None
        vprops = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise UsageError(f"{path}: truncated header")
            tok = line.split()
            if not tok or tok[0] == b"comment":
                continue
            if tok[0] == b"format":
                if tok[1] != b"binary_little_endian":
                    raise UsageError(
                        f"{path}: only binary little-endian PLY meshes are "
                        "supported")
            elif tok[0] == b"element":
                in_vertex = tok[1] == b"vertex"
                if in_vertex:
                    nv = int(tok[2])
                elif tok[1] == b"face":
                    nf = int(tok[2])
            elif tok[0] == b"property" and in_vertex:
                if tok[1] != b"float":
                    raise UsageError(f"{path}: non-float vertex property")
                vprops.append(tok[-1].decode())
            elif tok[0] == b"end_header":
                break
        if nv is None or nf is None:
            raise UsageError(f"{path}: missing vertex or face element")
        for name in ("x", "y", "z"):
            if name not in vprops:
                raise UsageError(f"{path}: missing vertex property {name}")
        raw = fh.read(4 * len(vprops) * nv)
        if len(raw) != 4 * len(vprops) * nv:
            raise UsageError(f"{path}: truncated vertex data")
        rows = np.frombuffer(raw, dtype="<f4").reshape(nv, len(vprops))
        cols = [vprops.index(n) for n in ("x", "y", "z")]
        verts = rows[:, cols].astype(np.float64)
        tris = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            head = fh.read(1)
            if len(head) != 1:
                raise UsageError(f"{path}: truncated face data")
            n = head[0]
            body = fh.read(4 * n)
            if len(body) != 4 * n:
                raise UsageError(f"{path}: truncated face data")
            if n != 3:
                raise UsageError(f"{path}: only triangle faces are supported")
            tris[i] = struct.unpack("<3i", body)
    if nv == 0 or nf == 0:
        raise UsageError(f"{path}: no mesh data")
    return TriangleMesh(verts, tris)


def read_mesh(path):
    """Dispatch on content: PLY magic if present, OBJ text otherwise."""
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"ply":
        return read_ply_mesh(path)
    return read_obj_mesh(path)


def write_obj(path, mesh):
    """Write vertices, per-vertex normals, and faces as ASCII OBJ."""
    normals = mesh.vertex_normals
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in normals:
            fh.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def write_ply(path, mesh):
    """Write a binary little-endian PLY with positions and normals."""
    normals = mesh.vertex_normals
    nv = len(mesh.vertices)
    nf = len(mesh.triangles)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {nv}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        f"element face {nf}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    vdata = np.hstack([mesh.vertices, normals]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vdata.tobytes())
        for tri in mesh.triangles:
            fh.write(struct.pack("<B3i", 3, *(int(t) for t in tri)))
