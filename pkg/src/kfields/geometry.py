"""Core geometric types: oriented point clouds, unit-cube normalization,
point augmentation along normals, and occupancy labeling."""

import math

import numpy as np

__all__ = [
    "OrientedPointCloud",
    "AugmentedPointSet",
    "NormalizationTransform",
    "SupervisionSample",
    "normalize_to_unit_cube",
    "augment",
    "occupancy_labels",
    "default_epsilon",
]


def _as_points(arr, name):
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    return out


class OrientedPointCloud:
    """Surface samples with outward unit normals.

    Normals are renormalized at construction; zero-length normals are
    rejected.  Arrays are frozen so instances can be shared freely.
    """

    def __init__(self, points, normals):
        points = _as_points(points, "points")
        normals = _as_points(normals, "normals")
        if len(points) != len(normals):
            raise ValueError("points and normals must have equal length")
        if len(points) == 0:
            raise ValueError("point cloud is empty")
        norms = np.linalg.norm(normals, axis=1)
        if (norms < 1e-12).any():
            raise ValueError("zero-length normal")
        normals = normals / norms[:, None]
        points.flags.writeable = False
        normals.flags.writeable = False
        self.points = points
        self.normals = normals

    @property
    def count(self):
        return len(self.points)


class AugmentedPointSet:
    """Points dilated along normals, labeled with the signed offset.

    Labels sum to zero exactly: every +epsilon entry has a matching
    -epsilon partner (surface copies, when kept, carry label 0).
    """

    def __init__(self, points, labels, epsilon):
        points = _as_points(points, "points")
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if labels.ndim != 1 or len(labels) != len(points):
            raise ValueError("labels must be one per point")
        if not np.isfinite(labels).all():
            raise ValueError("labels contain non-finite values")
        if not (epsilon > 0) or not np.isfinite(epsilon):
            raise ValueError("epsilon must be positive and finite")
        # exact cancellation of the +eps/-eps pairs is part of the contract
        if math.fsum(labels) != 0.0:
            raise ValueError("labels must sum to zero")
        points.flags.writeable = False
        labels.flags.writeable = False
        self.points = points
        self.labels = labels
        self.epsilon = float(epsilon)

    def __len__(self):
        return len(self.points)


class NormalizationTransform:
    """Uniform scale about an offset mapping world points into the unit cube.

    normalized = (x - offset) * scale; invert undoes it to 1e-12.
    """

    def __init__(self, scale, offset):
        if not (scale > 0) or not np.isfinite(scale):
            raise ValueError("scale must be positive and finite")
        self.scale = float(scale)
        self.offset = np.ascontiguousarray(offset, dtype=np.float64).reshape(3)
        self.offset.flags.writeable = False

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.offset) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.offset


class SupervisionSample:
    """Volume points with occupancy labels plus bare surface points."""

    def __init__(self, volume_points, occupancy, surface_points):
        self.volume_points = _as_points(volume_points, "volume_points")
        self.surface_points = _as_points(surface_points, "surface_points")
        occ = np.ascontiguousarray(occupancy)
        if occ.shape != (len(self.volume_points),):
            raise ValueError("occupancy must be one label per volume point")
        if not np.isin(occ, (0, 1)).all():
            raise ValueError("occupancy labels must be 0 or 1")
        if len(self.volume_points) == 0 or len(self.surface_points) == 0:
            raise ValueError("supervision pools must be non-empty")
        self.occupancy = occ.astype(np.float64)
        for arr in (self.volume_points, self.surface_points, self.occupancy):
            arr.flags.writeable = False


def normalize_to_unit_cube(cloud):
    """Map a cloud into [-0.5, 0.5]^3 with a single uniform scale.

    Returns the normalized cloud and the transform that produced it.
    Normals are directions and pass through unchanged.
    """
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent < 1e-12:
        raise ValueError("zero extent")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(1.0 / extent, center)
    return (
        OrientedPointCloud(transform.apply(cloud.points), cloud.normals),
        transform,
    )


def default_epsilon(cloud):
    """Default augmentation offset: 1% of the cloud's bbox diagonal."""
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag < 1e-12:
        raise ValueError("zero extent")
    return 0.01 * diag


def augment(cloud, epsilon, keep_surface=False):
    """Dilate each sample by +-epsilon along its normal.

    Output order is all + points first, then all - points, each in input
    order.  With keep_surface, the original points are prepended with
    label 0 (the three-set variant).
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise ValueError("epsilon must be positive and finite")
    plus = cloud.points + epsilon * cloud.normals
    minus = cloud.points - epsilon * cloud.normals
    s = cloud.count
    if keep_surface:
        points = np.vstack([cloud.points, plus, minus])
        labels = np.concatenate(
            [np.zeros(s), np.full(s, epsilon), np.full(s, -epsilon)]
        )
    else:
        points = np.vstack([plus, minus])
        labels = np.concatenate([np.full(s, epsilon), np.full(s, -epsilon)])
    return AugmentedPointSet(points, labels, epsilon)


def occupancy_labels(query_points, mesh):
    """Binary inside (1) / outside (0) labels against a watertight mesh.

    Points on the surface resolve to outside.  Raises OpenSurfaceError
    for meshes that are not closed.
    """
    from .meshes import mesh_occupancy

    queries = _as_points(query_points, "query_points")
    return mesh_occupancy(mesh, queries)
