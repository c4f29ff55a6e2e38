"""End-to-end reconstruction: oriented cloud in, watertight mesh out.

The pipeline runs in normalized coordinates (unit cube) and maps the
extracted surface back to world space at the end.  Stage timings are
collected so callers can report progress; any failure inside a stage is
wrapped in StageError with the stage name.
"""

import time
from contextlib import contextmanager

import numpy as np

from . import features as feat
from . import krr
from .errors import StageError, UsageError
from .geometry import augment, default_epsilon, normalize_to_unit_cube
from .meshes import TriangleMesh
from .surfacing import domain_with_margin, evaluate_grid, marching_cubes

__all__ = ["ReconstructionResult", "build_field", "reconstruct_cloud"]

MODES = ("fixed", "learned", "learned-weighted")


class ReconstructionResult:
    """Mesh in world coordinates plus the normalized-space field and the
    transform between the two."""

    def __init__(self, mesh, field, transform, epsilon, timings):
        self.mesh = mesh
        self.field = field
        self.transform = transform
        self.epsilon = epsilon
        self.timings = timings


class _Stopwatch:
    def __init__(self, on_stage=None):
        self.timings = []
        self._on_stage = on_stage

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except (UsageError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            elapsed = time.perf_counter() - start
            self.timings.append((name, elapsed))
            if self._on_stage is not None:
                self._on_stage(name, elapsed)


def build_field(cloud, mode="fixed", epsilon=0.01, lam=0.0, params=None,
                feature_resolution=None):
    """Solve for an implicit field over an already-normalized cloud.

    For the learned modes, params/feature_resolution come from a
    checkpoint; learned-weighted additionally modulates each input point
    by the predicted confidence weight.
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")
    aug = augment(cloud, epsilon, keep_surface=True)
    if mode == "fixed":
        system = krr.solve(aug.points, aug.labels, lam=lam)
        return krr.ImplicitField(system)
    if params is None or feature_resolution is None:
        raise UsageError("learned modes need checkpoint parameters")
    field_features = feat.FeatureField(params, cloud, feature_resolution)
    basis_features = field_features(aug.points)
    if mode == "learned":
        system = krr.solve(aug.points, aug.labels, lam=lam,
                           features=basis_features)
    else:
        # one confidence weight per input point, shared by its dilated
        # copies (basis order is surface, +epsilon, -epsilon)
        weights = np.tile(field_features.input_weights(), 3)
        system = krr.solve_weighted(aug.points, aug.labels, lam, weights,
                                    features=basis_features)
    return krr.ImplicitField(system, feature_source=field_features)


def reconstruct_cloud(cloud, mode="fixed", epsilon=None, lam=0.0,
                      grid_resolution=64, params=None,
                      feature_resolution=None, on_stage=None):
    """Full reconstruction of a world-space cloud; see module docstring."""
    watch = _Stopwatch(on_stage)
    with watch.stage("normalize"):
        norm_cloud, transform = normalize_to_unit_cube(cloud)
        eps = default_epsilon(norm_cloud) if epsilon is None else float(epsilon)
    with watch.stage("solve"):
        field = build_field(norm_cloud, mode=mode, epsilon=eps, lam=lam,
                            params=params,
                            feature_resolution=feature_resolution)
    with watch.stage("evaluate"):
        lo, hi = domain_with_margin(norm_cloud.points, margin=0.05)
        grid = evaluate_grid(field, grid_resolution, lo, hi)
    with watch.stage("extract"):
        norm_mesh = marching_cubes(grid)
        if len(norm_mesh.triangles) == 0:
            raise RuntimeError("field has no zero crossing inside the grid")
    with watch.stage("denormalize"):
        mesh = TriangleMesh(transform.invert(norm_mesh.vertices),
                            norm_mesh.triangles)
    return ReconstructionResult(mesh, field, transform, eps, watch.timings)
