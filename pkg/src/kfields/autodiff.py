"""Reverse-mode differentiation over the training computation.

The op functions in this module are polymorphic: called on plain
arrays they just compute, called on Var objects they also record a
node on the owning tape.  That lets the feature network forward pass
be written once and reused for inference and training.

Backward notes that earn their keep:
- solve_spd reuses the forward Cholesky factorization; the adjoint of
  the matrix is symmetrized because the matrix argument is constrained
  symmetric by construction.
- the kernel matrix op differentiates only the feature block of the
  extended coordinates; positions are constants on the training path.
- relu/abs use the zero subgradient at the kink; segment max routes to
  the lowest contributing index on ties.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg import LinAlgError

from . import kernel, nnops
from .errors import SingularSystemError

__all__ = [
    "Tape", "Var", "value_of",
    "add", "sub", "neg", "mul", "matmul", "reshape",
    "relu", "sigmoid", "log", "absolute", "softplus", "mean",
    "conv3", "avgpool2", "upsample2", "trilinear", "segment_max",
    "solve_spd", "solve_backward", "kernel_matrix", "grad_check",
]


class Var:
    """Array value bound to a tape node."""

    __slots__ = ("value", "tape", "idx")

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, idx={self.idx})"


class _Node:
    __slots__ = ("out_idx", "inputs", "bwd")

    def __init__(self, out_idx, inputs, bwd):
        self.out_idx = out_idx
        self.inputs = inputs
        self.bwd = bwd


class Tape:
    """Append-only record of operations; backward replays it reversed."""

    def __init__(self):
        self._count = 0
        self._nodes = []
        self._grads = None

    def leaf(self, value):
        return self._new_var(np.asarray(value, dtype=np.float64))

    def _new_var(self, value):
        v = Var(value, self, self._count)
        self._count += 1
        return v

    def _record(self, value, inputs, bwd):
        out = self._new_var(value)
        idxs = tuple(v.idx if isinstance(v, Var) else None for v in inputs)
        self._nodes.append(_Node(out.idx, idxs, bwd))
        return out

    def backward(self, root):
        """Accumulate adjoints of root (a scalar Var) into fresh buffers."""
        if not isinstance(root, Var) or root.tape is not self:
            raise ValueError("root must be a Var recorded on this tape")
        if root.value.ndim != 0 and root.value.size != 1:
            raise ValueError("backward root must be scalar")
        grads = [None] * self._count
        grads[root.idx] = np.ones_like(root.value)
        for node in reversed(self._nodes):
            g = grads[node.out_idx]
            if g is None:
                continue
            for idx, gin in zip(node.inputs, node.bwd(g)):
                if idx is None or gin is None:
                    continue
                if grads[idx] is None:
                    grads[idx] = gin
                else:
                    grads[idx] = grads[idx] + gin
        self._grads = grads

    def grad(self, var):
        if self._grads is None:
            raise RuntimeError("no backward pass has run")
        g = self._grads[var.idx]
        if g is None:
            return np.zeros_like(var.value)
        return g


def value_of(x):
    if isinstance(x, Var):
        return x.value
    if x is None:
        return None
    return np.asarray(x, dtype=np.float64)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, (a, b), lambda g: (
        _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, (a, b), lambda g: (
        _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def neg(a):
    av = value_of(a)
    tape = _tape_of(a)
    if tape is None:
        return -av
    return tape._record(-av, (a,), lambda g: (-g,))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, (a, b), lambda g: (
        _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ValueError("shape mismatch")
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    if bv.ndim == 1:
        bwd = lambda g: (np.outer(g, bv), av.T @ g)
    else:
        bwd = lambda g: (g @ bv.T, av.T @ g)
    return tape._record(out, (a, b), bwd)


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._record(out, (a,), lambda g: (g.reshape(av.shape),))


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    tape = _tape_of(a)
    if tape is None:
        return out
    mask = av > 0.0
    return tape._record(out, (a,), lambda g: (g * mask,))


def sigmoid(a):
    av = value_of(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._record(out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a):
    av = value_of(a)
    out = np.log(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._record(out, (a,), lambda g: (g / av,))


def absolute(a):
    av = value_of(a)
    out = np.abs(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    sgn = np.sign(av)
    return tape._record(out, (a,), lambda g: (g * sgn,))


def softplus(a):
    """log(1 + exp(a)) computed without overflow."""
    av = value_of(a)
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._record(out, (a,), lambda g: (g * sigmoid(av),))


def mean(a):
    av = value_of(a)
    out = np.asarray(av.mean())
    tape = _tape_of(a)
    if tape is None:
        return out
    n = av.size
    return tape._record(out, (a,), lambda g: (np.full_like(av, g / n),))


def conv3(x, w, b):
    xv, wv, bv = value_of(x), value_of(w), value_of(b)
    out = nnops.conv3(xv, wv, bv)
    tape = _tape_of(x, w, b)
    if tape is None:
        return out

    def bwd(g):
        gx, gw, gb = nnops.conv3_backward(xv, wv, g)
        return gx, gw, gb

    return tape._record(out, (x, w, b), bwd)


def avgpool2(x):
    xv = value_of(x)
    out = nnops.avgpool2(xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, (x,), lambda g: (nnops.avgpool2_backward(g),))


def upsample2(x):
    xv = value_of(x)
    out = nnops.upsample2(xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, (x,), lambda g: (nnops.upsample2_backward(g),))


def trilinear(grid, queries):
    """Interpolate a grid Var at constant query points."""
    gv = value_of(grid)
    q = np.asarray(queries, dtype=np.float64)
    out = nnops.trilinear(gv, q)
    tape = _tape_of(grid)
    if tape is None:
        return out
    return tape._record(
        out, (grid,),
        lambda g: (nnops.trilinear_backward(gv.shape, q, g),))


def segment_max(values, segments, n_segments):
    vv = value_of(values)
    out, winner = nnops.segment_max(vv, segments, n_segments)
    tape = _tape_of(values)
    if tape is None:
        return out
    return tape._record(
        out, (values,),
        lambda g: (nnops.segment_max_backward(winner, g, len(vv)),))


def solve_backward(factor, solution, upstream):
    """Adjoints of x = A^{-1} b given the cached factorization of A.

    Returns (abar, bbar) with abar symmetrized, valid because the
    matrix argument is symmetric by construction.
    """
    if factor is None:
        raise ValueError("missing cached factorization")
    bbar = cho_solve(factor, upstream, check_finite=False)
    abar = -0.5 * (np.outer(bbar, solution) + np.outer(solution, bbar))
    return abar, bbar


def solve_spd(a, b):
    """x = A^{-1} b for symmetric positive definite A."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or av.shape[0] != av.shape[1] or av.shape[0] != len(bv):
        raise ValueError("shape mismatch")
    try:
        factor = cho_factor(av, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystemError("singular system") from exc
    x = cho_solve(factor, bv, check_finite=False)
    tape = _tape_of(a, b)
    if tape is None:
        return x

    def bwd(g):
        abar, bbar = solve_backward(factor, x, g)
        return abar, bbar

    return tape._record(x, (a, b), bwd)


def kernel_matrix(pos_a, feat_a, pos_b, feat_b):
    """Pairwise kernel matrix; positions constant, features optional Vars."""
    pa = np.asarray(pos_a, dtype=np.float64)
    pb = np.asarray(pos_b, dtype=np.float64)
    fa, fb = value_of(feat_a), value_of(feat_b)
    out = kernel.cross_kernel(pa, fa, pb, fb)
    tape = _tape_of(feat_a, feat_b)
    if tape is None:
        return out
    a_ext = kernel.extend(pa, fa)
    b_ext = kernel.extend(pb, fb)
    # capture flags, not the Vars: a closure holding a Var would pin the
    # whole graph in a reference cycle until a full gc pass
    a_is_var = isinstance(feat_a, Var)
    b_is_var = isinstance(feat_b, Var)

    def bwd(g):
        abar, bbar = kernel.kernel_backward(a_ext, b_ext, g)
        ga = abar[:, 3:] if a_is_var else None
        gb = bbar[:, 3:] if b_is_var else None
        return ga, gb

    return tape._record(out, (feat_a, feat_b), bwd)


def grad_check(f, p0, step=1e-5, samples=32, seed=0, grad_floor=1e-6):
    """Compare the gradient reported by f against central differences.

    f maps a parameter vector to (scalar value, gradient vector).  The
    returned figure is the worst relative error over sampled
    coordinates: |analytic - central| / (|analytic| + |central| + 1e-12).

    Coordinates whose analytic gradient is below grad_floor times the
    largest gradient entry are not sampled: central differences bottom
    out near (eps_machine * |f|)^(2/3), so a coordinate whose true
    derivative sits under that noise floor cannot be measured by any
    step size and says nothing about the gradient computation.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    value, grad = f(p0)
    if not np.isfinite(value):
        raise ValueError("non-finite function value")
    grad = np.asarray(grad, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = p0.size
    pool = np.arange(n)
    gmax = np.abs(grad).max()
    if gmax > 0.0 and grad_floor is not None:
        live = pool[np.abs(grad.reshape(-1)) >= grad_floor * gmax]
        if len(live):
            pool = live
    if samples is None or samples >= len(pool):
        coords = pool
    else:
        coords = rng.choice(pool, size=samples, replace=False)
    worst = 0.0
    flat = p0.reshape(-1)
    for i in coords:
        hi = flat.copy()
        hi[i] += step
        lo = flat.copy()
        lo[i] -= step
        fhi, _ = f(hi.reshape(p0.shape))
        flo, _ = f(lo.reshape(p0.shape))
        if not (np.isfinite(fhi) and np.isfinite(flo)):
            raise ValueError("non-finite function value")
        central = (fhi - flo) / (2.0 * step)
        g = grad.reshape(-1)[i]
        worst = max(worst, abs(g - central) / (abs(g) + abs(central) + 1e-12))
    return worst
