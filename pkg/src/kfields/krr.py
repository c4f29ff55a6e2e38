"""Kernel ridge regression: solve for coefficients, evaluate the
implicit field, and diagnostic quantities.

Solving (G + lambda I) alpha = y goes through a dense Cholesky
factorization; the weighted variant solves (W G W + lambda I) alpha =
W y and evaluates with effective coefficients W alpha, which makes
W = I reduce to the plain path and zero-weight points drop out exactly.
"""

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernel
from .errors import SingularSystemError

__all__ = [
    "KernelSystem",
    "ImplicitField",
    "solve",
    "solve_weighted",
    "kernel_norm",
    "ns_residual_loss",
]

_JITTER_START = 1e-10
_JITTER_LIMIT = 1e-6


class KernelSystem:
    """A solved ridge system over extended basis points."""

    def __init__(self, positions, features, labels, lam, weights, gram_matrix,
                 coefficients, factor, applied_lambda):
        self.positions = positions
        self.features = features
        self.labels = labels
        self.lam = float(lam)
        self.weights = weights
        self.gram_matrix = gram_matrix
        self.coefficients = coefficients
        self.factor = factor
        self.applied_lambda = float(applied_lambda)

    @property
    def size(self):
        return len(self.labels)

    @property
    def effective_coefficients(self):
        """Coefficients of the kernel expansion the field evaluates."""
        if self.weights is None:
            return self.coefficients
        return self.weights * self.coefficients


def _factorize(a):
    return cho_factor(a, lower=True, check_finite=False)


def _solve_system(gram_matrix, rhs, lam):
    """Cholesky solve with jitter escalation reserved for lam = 0."""
    n = len(rhs)
    trace_scale = float(np.trace(gram_matrix)) / n
    a = gram_matrix.copy()
    if lam > 0.0:
        a[np.diag_indices_from(a)] += lam
        try:
            factor = _factorize(a)
        except LinAlgError as exc:
            raise SingularSystemError("singular system") from exc
        return cho_solve(factor, rhs, check_finite=False), factor, lam
    try:
        factor = _factorize(a)
        return cho_solve(factor, rhs, check_finite=False), factor, 0.0
    except LinAlgError:
        pass
    # a non-positive trace cannot come from a kernel Gram matrix, and it
    # would zero the jitter scale and stall the escalation below
    if trace_scale <= 0.0 or not np.isfinite(trace_scale):
        raise SingularSystemError("singular system")
    jitter = _JITTER_START * trace_scale
    while jitter <= _JITTER_LIMIT * trace_scale:
        a = gram_matrix.copy()
        a[np.diag_indices_from(a)] += jitter
        try:
            factor = _factorize(a)
            return cho_solve(factor, rhs, check_finite=False), factor, jitter
        except LinAlgError:
            jitter *= 10.0
    raise SingularSystemError("singular system")


def solve(positions, labels, lam=0.0, features=None):
    """Solve (G + lambda I) alpha = y over the given basis points."""
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    if labels.ndim != 1 or len(labels) == 0:
        raise ValueError("labels must be a non-empty vector")
    if not np.isfinite(labels).all():
        raise ValueError("non-finite labels")
    if lam < 0 or not np.isfinite(lam):
        raise ValueError("lambda must be non-negative and finite")
    g = kernel.gram(positions, features)
    alpha, factor, applied = _solve_system(g, labels, lam)
    return KernelSystem(
        np.ascontiguousarray(positions, dtype=np.float64),
        None if features is None else np.ascontiguousarray(features, np.float64),
        labels, lam, None, g, alpha, factor, applied,
    )


def solve_weighted(positions, labels, lam, weights, features=None):
    """Solve (W G W + lambda I) alpha = W y with diagonal weights W."""
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != labels.shape:
        raise ValueError("weights must be one per basis point")
    if not np.isfinite(weights).all() or (weights < 0).any():
        raise ValueError("weights must be finite and non-negative")
    if lam == 0.0:
        raise ValueError("weighted path requires regularization")
    if lam < 0 or not np.isfinite(lam):
        raise ValueError("lambda must be positive and finite")
    g = kernel.gram(positions, features)
    wgw = g * np.outer(weights, weights)
    wgw[np.diag_indices_from(wgw)] += lam
    try:
        factor = _factorize(wgw)
    except LinAlgError as exc:
        raise SingularSystemError("singular system") from exc
    alpha = cho_solve(factor, weights * labels, check_finite=False)
    return KernelSystem(
        np.ascontiguousarray(positions, dtype=np.float64),
        None if features is None else np.ascontiguousarray(features, np.float64),
        labels, lam, weights, g, alpha, factor, lam,
    )


class ImplicitField:
    """The kernel expansion f(x) = sum_j c_j K([x : phi(x)], basis_j).

    feature_source is a callable mapping query points (m, 3) to features
    (m, d), or None for the position-only kernel.
    """

    def __init__(self, system, feature_source=None):
        if system.coefficients is None:
            raise ValueError("system has no coefficients; solve it first")
        self.system = system
        self.feature_source = feature_source

    def evaluate(self, queries, chunk=4096):
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != 3:
            raise ValueError("queries must have shape (m, 3)")
        qfeat = None
        if self.feature_source is not None:
            qfeat = self.feature_source(queries)
        return kernel.evaluate_sum(
            queries, qfeat,
            self.system.positions, self.system.features,
            self.system.effective_coefficients, chunk=chunk,
        )


def kernel_norm(system):
    """Squared RKHS norm of the represented field, c^T G c over the
    effective coefficients (plain alpha^T G alpha when unweighted)."""
    c = system.effective_coefficients
    return float(c @ (system.gram_matrix @ c))


def ns_residual_loss(field, cloud, epsilon):
    """Diagnostic residual: sum of |f(x)|^2 on the surface points plus
    |f(x+) - eps|^2 and |f(x-) + eps|^2 on the dilated points."""
    plus = cloud.points + epsilon * cloud.normals
    minus = cloud.points - epsilon * cloud.normals
    f_surf = field.evaluate(cloud.points)
    f_plus = field.evaluate(plus)
    f_minus = field.evaluate(minus)
    return float(
        np.sum(f_surf**2)
        + np.sum((f_plus - epsilon) ** 2)
        + np.sum((f_minus + epsilon) ** 2)
    )
