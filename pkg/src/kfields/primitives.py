"""Analytic solid primitives and procedural shape generation.

Each primitive knows its exact signed distance, occupancy, surface area
and an area-uniform surface sampler with analytic normals, so ground
truth for synthetic experiments never depends on a mesh discretization.
Shapes can still be meshed (marching cubes on the signed distance) when
a triangle representation is needed.

Sign convention matches the implicit fields: signed distance is negative
inside, occupancy is 1 strictly inside.
"""

import numpy as np

from .meshes import TriangleMesh
from .surfacing import ScalarGrid, marching_cubes

__all__ = [
    "Primitive",
    "Sphere",
    "Box",
    "Capsule",
    "Torus",
    "Union",
    "random_rotation",
    "random_primitive",
    "random_shape",
    "shape_dataset",
]


def random_rotation(rng):
    """Uniform random rotation matrix (normalized quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class Primitive:
    """Rigidly placed solid.  Subclasses implement the local-frame API:
    _local_sdf, _local_sample, _local_bounds, surface_area."""

    def __init__(self, rotation=None, translation=None):
        self.rotation = (np.eye(3) if rotation is None
                         else np.asarray(rotation, dtype=np.float64))
        self.translation = (np.zeros(3) if translation is None
                            else np.asarray(translation, dtype=np.float64).reshape(3))

    def _to_local(self, points):
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def sdf(self, points):
        """Signed distance, negative inside."""
        return self._local_sdf(self._to_local(points))

    def occupancy(self, points):
        """1 strictly inside, 0 otherwise (boundary counts as outside)."""
        return (self.sdf(points) < 0.0).astype(np.float64)

    def sample_surface(self, count, rng):
        """Area-uniform surface points with outward unit normals."""
        pts, nrm = self._local_sample(count, rng)
        return pts @ self.rotation.T + self.translation, nrm @ self.rotation.T

    def bounds(self):
        """World axis-aligned bounding box (lo, hi).  Exact for spheres
        and boxes, conservative for rotated capsules and tori."""
        lo, hi = self._local_bounds()
        corners = np.array([[a, b, c] for a in (lo[0], hi[0])
                            for b in (lo[1], hi[1]) for c in (lo[2], hi[2])])
        world = corners @ self.rotation.T + self.translation
        return world.min(axis=0), world.max(axis=0)

    def to_mesh(self, resolution=64, margin=0.05):
        """Triangle mesh of the boundary via marching cubes on the
        signed distance."""
        lo, hi = self.bounds()
        pad = margin * float((hi - lo).max())
        lo, hi = lo - pad, hi + pad
        axes = [lo[a] + (np.arange(resolution) + 0.5) * (hi[a] - lo[a]) / resolution
                for a in range(3)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        values = self.sdf(centers).reshape(resolution, resolution, resolution)
        return marching_cubes(ScalarGrid(values, lo, hi))


class Sphere(Primitive):
    def __init__(self, radius, **kw):
        super().__init__(**kw)
        self.radius = float(radius)

    def _local_sdf(self, p):
        return np.linalg.norm(p, axis=-1) - self.radius

    def surface_area(self):
        return 4.0 * np.pi * self.radius ** 2

    def _local_sample(self, count, rng):
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.radius * d, d

    def _local_bounds(self):
        r = np.full(3, self.radius)
        return -r, r


class Box(Primitive):
    def __init__(self, half, **kw):
        super().__init__(**kw)
        self.half = np.asarray(half, dtype=np.float64).reshape(3)

    def _local_sdf(self, p):
        q = np.abs(p) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def surface_area(self):
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hz * hx)

    def _local_sample(self, count, rng):
        hx, hy, hz = self.half
        # pick one of the six faces with probability proportional to area
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=count, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(count, 2))
        pts = np.empty((count, 3))
        nrm = np.zeros((count, 3))
        for f in range(6):
            m = face == f
            axis, sign = divmod(f, 2)
            sign = 1.0 - 2.0 * sign
            rest = [a for a in range(3) if a != axis]
            pts[m, axis] = sign * self.half[axis]
            pts[m, rest[0]] = u[m, 0] * self.half[rest[0]]
            pts[m, rest[1]] = u[m, 1] * self.half[rest[1]]
            nrm[m, axis] = sign
        return pts, nrm

    def _local_bounds(self):
        return -self.half.copy(), self.half.copy()


class Capsule(Primitive):
    """Cylinder of half-length along local z with hemispherical caps."""

    def __init__(self, half_length, radius, **kw):
        super().__init__(**kw)
        self.half_length = float(half_length)
        self.radius = float(radius)

    def _local_sdf(self, p):
        q = p.copy()
        q[..., 2] -= np.clip(q[..., 2], -self.half_length, self.half_length)
        return np.linalg.norm(q, axis=-1) - self.radius

    def surface_area(self):
        return 2.0 * np.pi * self.radius * (2.0 * self.half_length) \
            + 4.0 * np.pi * self.radius ** 2

    def _local_sample(self, count, rng):
        side = 2.0 * np.pi * self.radius * (2.0 * self.half_length)
        caps = 4.0 * np.pi * self.radius ** 2
        on_side = rng.uniform(size=count) < side / (side + caps)
        pts = np.empty((count, 3))
        nrm = np.empty((count, 3))
        k = int(on_side.sum())
        phi = rng.uniform(0.0, 2.0 * np.pi, size=k)
        z = rng.uniform(-self.half_length, self.half_length, size=k)
        nrm[on_side] = np.stack([np.cos(phi), np.sin(phi), np.zeros(k)], axis=1)
        pts[on_side] = self.radius * nrm[on_side]
        pts[on_side, 2] = z
        m = count - k
        d = rng.normal(size=(m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        top = rng.uniform(size=m) < 0.5
        d[:, 2] = np.where(top, np.abs(d[:, 2]), -np.abs(d[:, 2]))
        nrm[~on_side] = d
        pts[~on_side] = self.radius * d
        pts[~on_side, 2] += np.where(top, self.half_length, -self.half_length)
        return pts, nrm

    def _local_bounds(self):
        r = self.radius
        return (np.array([-r, -r, -self.half_length - r]),
                np.array([r, r, self.half_length + r]))


class Torus(Primitive):
    """Ring of major radius around local z, tube of minor radius."""

    def __init__(self, major, minor, **kw):
        super().__init__(**kw)
        self.major = float(major)
        self.minor = float(minor)

    def _local_sdf(self, p):
        ring = np.hypot(np.hypot(p[..., 0], p[..., 1]) - self.major, p[..., 2])
        return ring - self.minor

    def surface_area(self):
        return 4.0 * np.pi ** 2 * self.major * self.minor

    def _local_sample(self, count, rng):
        # tube angle v is rejection-sampled with density (R + r cos v),
        # which makes the (u, v) parameterization area-uniform
        v = np.empty(0)
        while v.size < count:
            cand = rng.uniform(0.0, 2.0 * np.pi, size=2 * count)
            keep = rng.uniform(size=cand.size) < (
                (self.major + self.minor * np.cos(cand))
                / (self.major + self.minor))
            v = np.concatenate([v, cand[keep]])
        v = v[:count]
        u = rng.uniform(0.0, 2.0 * np.pi, size=count)
        nrm = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u),
                        np.sin(v)], axis=1)
        ring = self.major + self.minor * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u),
                        self.minor * np.sin(v)], axis=1)
        return pts, nrm

    def _local_bounds(self):
        e = self.major + self.minor
        return np.array([-e, -e, -self.minor]), np.array([e, e, self.minor])


class Union(Primitive):
    """Boolean union of member primitives.

    The signed distance is the member minimum (exact sign, distance may
    be overestimated inside near internal boundaries, which marching
    cubes never sees).  Surface sampling draws from members by area and
    rejects points swallowed by another member, so accepted points are
    area-uniform on the visible boundary.
    """

    def __init__(self, members):
        super().__init__()
        if len(members) < 2:
            raise ValueError("union needs at least two members")
        self.members = list(members)

    def sdf(self, points):
        return np.min([m.sdf(points) for m in self.members], axis=0)

    def surface_area(self):
        # total member area; an upper bound on the visible area
        return float(sum(m.surface_area() for m in self.members))

    def sample_surface(self, count, rng):
        areas = np.array([m.surface_area() for m in self.members])
        pool = np.arange(len(self.members))
        pts = np.empty((0, 3))
        nrm = np.empty((0, 3))
        for _ in range(64):
            if pts.shape[0] >= count:
                break
            draw = max(count - pts.shape[0], 32)
            pick = rng.choice(pool, size=draw, p=areas[pool] / areas[pool].sum())
            cand_p = np.empty((draw, 3))
            cand_n = np.empty((draw, 3))
            visible = np.ones(draw, dtype=bool)
            for i in pool:
                m = pick == i
                if not m.any():
                    continue
                cand_p[m], cand_n[m] = self.members[i].sample_surface(
                    int(m.sum()), rng)
                for j, other in enumerate(self.members):
                    if j != i:
                        visible[m] &= other.sdf(cand_p[m]) >= 0.0
            pts = np.concatenate([pts, cand_p[visible]])
            nrm = np.concatenate([nrm, cand_n[visible]])
            # drop members whose surface is (almost) entirely swallowed,
            # otherwise a fully contained member would stall the loop
            if visible.mean() < 0.5 and len(pool) > 1:
                alive = []
                for i in pool:
                    probe_p, _ = self.members[i].sample_surface(64, rng)
                    out = np.ones(64, dtype=bool)
                    for j, other in enumerate(self.members):
                        if j != i:
                            out &= other.sdf(probe_p) >= 0.0
                    if out.any():
                        alive.append(i)
                pool = np.array(alive if alive else [int(np.argmax(areas))])
        if pts.shape[0] < count:
            raise RuntimeError("union surface sampling stalled")
        return pts[:count], nrm[:count]

    def bounds(self):
        los, his = zip(*(m.bounds() for m in self.members))
        return np.min(los, axis=0), np.max(his, axis=0)


# ---------------------------------------------------------------------------
# procedural generation
#
# Shapes are generated inside [-0.45, 0.45]^3 so downstream code can treat
# the unit cube as the working domain without re-normalizing.

_EXTENT = 0.45


def _placed(rng, local_reach, make):
    rot = random_rotation(rng)
    room = _EXTENT - local_reach
    t = rng.uniform(-max(room, 0.0), max(room, 0.0), size=3)
    return make(rotation=rot, translation=t)


def random_primitive(rng, scale=1.0):
    """One random sphere, box, capsule or torus, fully inside the cube."""
    kind = rng.integers(4)
    if kind == 0:
        r = scale * rng.uniform(0.15, 0.38)
        return _placed(rng, r, lambda **kw: Sphere(r, **kw))
    if kind == 1:
        # circumscribed radius norm(half) must stay below the envelope
        half = scale * rng.uniform(0.10, 0.24, size=3)
        return _placed(rng, float(np.linalg.norm(half)),
                       lambda **kw: Box(half, **kw))
    if kind == 2:
        r = scale * rng.uniform(0.07, 0.15)
        hl = scale * rng.uniform(0.10, 0.26)
        return _placed(rng, hl + r, lambda **kw: Capsule(hl, r, **kw))
    major = scale * rng.uniform(0.16, 0.28)
    minor = scale * rng.uniform(0.05, min(0.12, 0.8 * major))
    return _placed(rng, major + minor, lambda **kw: Torus(major, minor, **kw))


def random_shape(rng):
    """Random primitive or union of 2-4 primitives."""
    if rng.uniform() < 0.6:
        return random_primitive(rng)
    n = int(rng.integers(2, 5))
    return Union([random_primitive(rng, scale=0.62) for _ in range(n)])


def shape_dataset(count, seed):
    """Deterministic list of procedural shapes; shape i depends only on
    (seed, i), so train/held-out splits are stable under count changes."""
    return [random_shape(np.random.default_rng([seed, i])) for i in range(count)]
