"""Reconstruction quality metrics.

All metrics are Monte Carlo estimates over fixed-seed samples so repeat
runs produce identical numbers.  Chamfer and F-score compare surface
sample sets point-to-point, not point-to-mesh, so comparing a mesh with
itself under the same seed gives exactly zero distance.
"""

import json

import numpy as np

from .neighbors import nearest_neighbors

__all__ = [
    "iou",
    "chamfer_l2",
    "normal_consistency",
    "f_score",
    "MetricReport",
    "evaluate_reconstruction",
]

DEFAULT_VOLUME_SAMPLES = 100000
DEFAULT_SURFACE_SAMPLES = 100000


def _occupancy_of(obj, points):
    if hasattr(obj, "occupancy"):
        return np.asarray(obj.occupancy(points), dtype=bool)
    if hasattr(obj, "evaluate"):
        # implicit field: negative is inside
        return np.asarray(obj.evaluate(points)) < 0.0
    raise TypeError("object provides neither occupancy() nor evaluate()")


def _sample_domain(a, b, margin=0.02):
    los, his = [], []
    for obj in (a, b):
        if hasattr(obj, "bounds"):
            lo, hi = obj.bounds()
            los.append(np.asarray(lo, dtype=np.float64))
            his.append(np.asarray(hi, dtype=np.float64))
    if not los:
        raise TypeError("need at least one object with bounds()")
    lo = np.min(los, axis=0)
    hi = np.max(his, axis=0)
    pad = margin * float(np.linalg.norm(hi - lo))
    return lo - pad, hi + pad


def iou(pred, target, n=DEFAULT_VOLUME_SAMPLES, seed=0):
    """Volumetric intersection-over-union from uniform occupancy samples.

    The sampling box is the union of both bounding boxes plus a small
    margin.  An implicit field (anything with evaluate()) counts f < 0
    as inside; meshes use exact ray-parity occupancy.
    """
    lo, hi = _sample_domain(pred, target)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n, 3))
    occ_p = _occupancy_of(pred, pts)
    occ_t = _occupancy_of(target, pts)
    union = int(np.count_nonzero(occ_p | occ_t))
    if union == 0:
        return 0.0
    return float(np.count_nonzero(occ_p & occ_t) / union)


def _surface_samples(mesh, n, seed):
    rng = np.random.default_rng(seed)
    return mesh.sample_surface(n, rng)


def chamfer_l2(mesh_a, mesh_b, n=DEFAULT_SURFACE_SAMPLES, seed=0):
    """Symmetric mean nearest-neighbor distance between surface samples.

    Both meshes are sampled with the same seed so the metric is
    symmetric in its arguments and exactly zero for identical meshes.
    """
    pa, _ = _surface_samples(mesh_a, n, seed)
    pb, _ = _surface_samples(mesh_b, n, seed)
    _, dab = nearest_neighbors(pb, pa)
    _, dba = nearest_neighbors(pa, pb)
    return float(0.5 * (dab.mean() + dba.mean()))


def normal_consistency(mesh_a, mesh_b, n=DEFAULT_SURFACE_SAMPLES, seed=0,
                       absolute=False):
    """Mean dot product of unit normals at nearest surface sample pairs.

    Signed by default, so flipped orientations score negative; pass
    absolute=True to ignore orientation.
    """
    pa, na = _surface_samples(mesh_a, n, seed)
    pb, nb = _surface_samples(mesh_b, n, seed)
    iab, _ = nearest_neighbors(pb, pa)
    iba, _ = nearest_neighbors(pa, pb)
    dots_ab = (na * nb[iab]).sum(axis=1)
    dots_ba = (nb * na[iba]).sum(axis=1)
    if absolute:
        dots_ab = np.abs(dots_ab)
        dots_ba = np.abs(dots_ba)
    return float(0.5 * (dots_ab.mean() + dots_ba.mean()))


def f_score(mesh_a, mesh_b, threshold=0.01, n=DEFAULT_SURFACE_SAMPLES, seed=0):
    """Harmonic mean of precision/recall at a surface distance threshold."""
    pa, _ = _surface_samples(mesh_a, n, seed)
    pb, _ = _surface_samples(mesh_b, n, seed)
    _, dab = nearest_neighbors(pb, pa)
    _, dba = nearest_neighbors(pa, pb)
    precision = float(np.count_nonzero(dab <= threshold) / len(dab))
    recall = float(np.count_nonzero(dba <= threshold) / len(dba))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


class MetricReport:
    """Bundle of metric values with fixed-order JSON serialization."""

    _KEYS = ("iou", "chamfer_l2", "normal_consistency", "f_score",
             "seed", "volume_samples", "surface_samples")

    def __init__(self, iou, chamfer_l2, normal_consistency, f_score,
                 seed, volume_samples, surface_samples):
        self.iou = iou
        self.chamfer_l2 = chamfer_l2
        self.normal_consistency = normal_consistency
        self.f_score = f_score
        self.seed = seed
        self.volume_samples = volume_samples
        self.surface_samples = surface_samples

    def to_dict(self):
        return {k: getattr(self, k) for k in self._KEYS}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def __repr__(self):
        vals = ", ".join(f"{k}={getattr(self, k)!r}" for k in self._KEYS)
        return f"MetricReport({vals})"


def evaluate_reconstruction(pred_mesh, target_mesh, seed=0,
                            volume_samples=DEFAULT_VOLUME_SAMPLES,
                            surface_samples=DEFAULT_SURFACE_SAMPLES,
                            f_threshold=0.01):
    """Run the full metric suite on a reconstructed mesh."""
    return MetricReport(
        iou=iou(pred_mesh, target_mesh, n=volume_samples, seed=seed),
        chamfer_l2=chamfer_l2(pred_mesh, target_mesh, n=surface_samples,
                              seed=seed),
        normal_consistency=normal_consistency(pred_mesh, target_mesh,
                                              n=surface_samples, seed=seed),
        f_score=f_score(pred_mesh, target_mesh, threshold=f_threshold,
                        n=surface_samples, seed=seed),
        seed=seed,
        volume_samples=volume_samples,
        surface_samples=surface_samples,
    )
