"""Desk-scale trainer for the learned kernel feature network.

One training step reconstructs a batch of shapes from freshly sampled
sparse input clouds, differentiates an occupancy + surface loss through
the linear solve, and applies one Adam update.  Every random draw is
keyed by (seed, step), so runs are deterministic and a resumed run
continues exactly where an uninterrupted one would be.
"""

import csv
import os

import numpy as np

from . import autodiff as ad
from . import features as F
from .errors import UsageError
from .geometry import OrientedPointCloud, SupervisionSample, augment, occupancy_labels

__all__ = [
    "TrainConfig",
    "TrainingShape",
    "TapeField",
    "AdamState",
    "sample_supervision",
    "loss",
    "solve_on_tape",
    "train_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

_CSV_FIELDS = ("step", "loss", "bce", "l1", "grad_norm")


class TrainConfig:
    """Hyperparameters; the seed fully determines a run."""

    _FIELDS = ("learning_rate", "batch_size", "steps", "lam", "lam_l1",
               "epsilon", "resolution", "feature_dim", "logit_scale",
               "seed", "noise_std")
    _INTS = ("batch_size", "steps", "resolution", "feature_dim", "seed")

    def __init__(self, learning_rate=1e-3, batch_size=1, steps=1000,
                 lam=1e-6, lam_l1=1.0, epsilon=0.01, resolution=32,
                 feature_dim=32, logit_scale=None, seed=0, noise_std=0.0):
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.steps = int(steps)
        self.lam = float(lam)
        self.lam_l1 = float(lam_l1)
        self.epsilon = float(epsilon)
        self.resolution = int(resolution)
        self.feature_dim = int(feature_dim)
        self.seed = int(seed)
        self.noise_std = float(noise_std)
        if self.epsilon <= 0 or self.batch_size < 1 or self.steps < 0:
            raise UsageError("invalid training configuration")
        # labels +-epsilon map to logits -+1 unless overridden
        self.logit_scale = (1.0 / self.epsilon if logit_scale is None
                            else float(logit_scale))
        if self.lam < 0 or self.lam_l1 < 0 or self.noise_std < 0:
            raise UsageError("invalid training configuration")
        if self.learning_rate < 0 or self.logit_scale <= 0:
            raise UsageError("invalid training configuration")
        # the backbone downsamples twice, so the grid must split by 4
        if self.resolution < 4 or self.resolution % 4 != 0:
            raise UsageError("invalid training configuration")
        if self.feature_dim < 1:
            raise UsageError("invalid training configuration")

    @classmethod
    def from_file(cls, path):
        """Parse a `key = value` config file (one pair per line, `#`
        comments allowed); unknown keys are hard errors."""
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected `key = value`")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in cls._FIELDS:
                    raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
                raw = raw.strip()
                try:
                    values[key] = (int(raw) if key in cls._INTS
                                   else float(raw))
                except ValueError:
                    raise UsageError(
                        f"{path}:{lineno}: bad value for {key}: {raw!r}"
                    ) from None
        return cls(**values)

    def to_dict(self):
        return {k: getattr(self, k) for k in self._FIELDS}


def sample_supervision(shape, n_vol, n_surf, seed):
    """Supervision pools for one shape: uniform volume points labeled by
    mesh occupancy over the mesh bounding box, plus area-weighted bare
    surface samples."""
    mesh = shape.mesh if hasattr(shape, "mesh") else shape
    if n_vol < 1 or n_surf < 1:
        raise UsageError("supervision pools must be non-empty")
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds()
    vol = rng.uniform(lo, hi, size=(n_vol, 3))
    occ = occupancy_labels(vol, mesh)
    surf, _ = mesh.sample_surface(n_surf, rng)
    return SupervisionSample(vol, occ, surf)


class TrainingShape:
    """Ground-truth mesh with a cached input sampler and supervision
    pools (drawn once; the seed is recorded)."""

    def __init__(self, mesh, sampler, n_vol=512, n_surf=256, seed=0):
        if not mesh.is_watertight():
            raise UsageError("training shapes need watertight meshes")
        self.mesh = mesh
        self._sampler = sampler
        self.supervision_seed = int(seed)
        self.supervision = sample_supervision(mesh, n_vol, n_surf, seed)

    @classmethod
    def from_primitive(cls, primitive, n_vol=512, n_surf=256, seed=0,
                       mesh_resolution=64):
        """Mesh an analytic solid once and sample inputs analytically
        (exact normals, no faceting bias)."""
        def sampler(count, rng):
            return OrientedPointCloud(*primitive.sample_surface(count, rng))

        return cls(primitive.to_mesh(mesh_resolution), sampler,
                   n_vol=n_vol, n_surf=n_surf, seed=seed)

    def input_cloud(self, count, rng):
        return self._sampler(count, rng)


class TapeField:
    """Implicit field whose coefficients live on a differentiation tape.

    Evaluation at new points stays on the tape, so losses built from the
    field values differentiate through the solve.
    """

    def __init__(self, tape, basis_points, basis_features, coefficients,
                 feature_grid):
        self.tape = tape
        self.basis_points = basis_points
        self.basis_features = basis_features
        self.coefficients = coefficients
        self.feature_grid = feature_grid

    def evaluate(self, points):
        points = np.asarray(points, dtype=np.float64)
        feats = F.interpolate(self.feature_grid, points)
        k = ad.kernel_matrix(points, feats, self.basis_points,
                             self.basis_features)
        return ad.matmul(k, self.coefficients)


def solve_on_tape(tape, cloud, params_vars, config):
    """Reconstruct one cloud with the learned kernel, keeping the whole
    computation on the tape.  Returns the field and the (numeric) system
    matrix for diagnostics."""
    aug = augment(cloud, config.epsilon, keep_surface=True)
    grid = F.backbone(
        F.encode(cloud, params_vars, config.resolution), params_vars)
    basis_features = F.interpolate(grid, aug.points)
    gram = ad.kernel_matrix(aug.points, basis_features,
                            aug.points, basis_features)
    system = ad.add(gram, config.lam * np.eye(len(aug.points)))
    alpha = ad.solve_spd(system, aug.labels)
    field = TapeField(tape, aug.points, basis_features, alpha, grid)
    return field, ad.value_of(system)


def _bce_mean(values, occupancy, logit_scale):
    # stable binary cross-entropy of p = sigmoid(-s f) against labels
    # (inside = 1): with z = -s f, per-point loss is
    # y softplus(-z) + (1 - y) softplus(z)
    z = ad.mul(values, -logit_scale)
    terms = ad.add(ad.mul(ad.softplus(ad.neg(z)), occupancy),
                   ad.mul(ad.softplus(z), 1.0 - occupancy))
    return ad.mean(terms)


def _loss_terms(field, sample, logit_scale, lam_l1):
    bce = _bce_mean(field.evaluate(sample.volume_points),
                    sample.occupancy, logit_scale)
    l1 = ad.mean(ad.absolute(field.evaluate(sample.surface_points)))
    total = ad.add(bce, ad.mul(l1, lam_l1))
    return total, bce, l1


def loss(field, sample, logit_scale, lam_l1):
    """Occupancy cross-entropy over volume points plus lam_l1 times the
    mean |f| over surface points (both terms are means)."""
    return _loss_terms(field, sample, logit_scale, lam_l1)[0]


class AdamState:
    """First/second moment accumulators (beta1=0.9, beta2=0.999)."""

    def __init__(self, size):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, grad, learning_rate):
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad * grad
        mhat = self.m / (1.0 - 0.9 ** self.t)
        vhat = self.v / (1.0 - 0.999 ** self.t)
        return learning_rate * mhat / (np.sqrt(vhat) + 1e-8)


def _shape_gradient(params, shape, cloud, config):
    """Loss and flat parameter gradient for one shape on a fresh tape."""
    tape = ad.Tape()
    seg = {name: tape.leaf(params.segment(name))
           for name, _ in params.layout}
    field, system = solve_on_tape(tape, cloud, seg, config)
    total, bce, l1 = _loss_terms(field, shape.supervision,
                                 config.logit_scale, config.lam_l1)
    value = float(ad.value_of(total))
    if not np.isfinite(value):
        cond = float(np.linalg.cond(system))
        raise RuntimeError(
            f"non-finite training loss (lambda={config.lam:g}, "
            f"gram condition estimate {cond:.3e})")
    tape.backward(total)
    grad = np.concatenate([tape.grad(seg[name]).ravel()
                           for name, _ in params.layout])
    return value, float(ad.value_of(bce)), float(ad.value_of(l1)), grad


def train_step(params, shapes, config, state=None, step=0,
               input_points=128, rng=None):
    """One optimizer update over a batch of shapes.

    Returns (new params, metrics dict).  `state` is advanced in place;
    passing none applies a single cold-start Adam step.
    """
    if state is None:
        state = AdamState(params.vector.size)
    if rng is None:
        rng = np.random.default_rng([config.seed, step])
    total = np.zeros(params.vector.size)
    sums = np.zeros(3)
    for shape in shapes:
        cloud = shape.input_cloud(input_points, rng)
        if config.noise_std > 0:
            cloud = OrientedPointCloud(
                cloud.points + rng.normal(0.0, config.noise_std,
                                          size=cloud.points.shape),
                cloud.normals)
        value, bce, l1, grad = _shape_gradient(params, shape, cloud, config)
        total += grad
        sums += (value, bce, l1)
    total /= len(shapes)
    sums /= len(shapes)
    new = params.copy()
    if config.learning_rate != 0.0:
        new.vector -= state.update(total, config.learning_rate)
    else:
        state.update(total, 0.0)
    metrics = {"loss": sums[0], "bce": sums[1], "l1": sums[2],
               "grad_norm": float(np.linalg.norm(total))}
    return new, metrics


def save_checkpoint(path, params, resolution, state=None, step=0):
    """Model parameters in the NKF1 format; optimizer state, when given,
    goes to a sidecar so the model file stays loadable on its own."""
    F.save_checkpoint(path, params, resolution)
    if state is not None:
        np.savez(_sidecar(path), m=state.m, v=state.v,
                 t=np.array([state.t, step], dtype=np.int64))


def load_checkpoint(path):
    """Model parameters and grid resolution from an NKF1 file."""
    return F.load_checkpoint(path)


def _sidecar(path):
    return os.fspath(path) + ".opt.npz"


def _resume(path, config):
    params, resolution = F.load_checkpoint(path)
    if resolution != config.resolution or params.d != config.feature_dim:
        raise UsageError(
            f"checkpoint is M={resolution}, d={params.d}; the config says "
            f"M={config.resolution}, d={config.feature_dim}")
    state = AdamState(params.vector.size)
    start = 0
    side = _sidecar(path)
    if os.path.exists(side):
        with np.load(side) as data:
            state.m = data["m"]
            state.v = data["v"]
            state.t = int(data["t"][0])
            start = int(data["t"][1])
    return params, state, start


def train(shapes, config, checkpoint_path=None, csv_path=None,
          checkpoint_every=250, input_points=128, log=None):
    """Run the optimizer loop; resumes when the checkpoint exists.

    Returns the final parameters.  Per-step metrics go to the CSV, and
    `log(step, metrics)` fires after every step when given.
    """
    if not shapes:
        raise UsageError("training needs at least one shape")
    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        params, state, start = _resume(checkpoint_path, config)
    else:
        params = F.FeatureNetworkParams.initialized(
            config.feature_dim, seed=config.seed)
        state = AdamState(params.vector.size)
        start = 0
    writer = None
    fh = None
    if csv_path is not None:
        fresh = start == 0 or not os.path.exists(csv_path)
        fh = open(csv_path, "w" if fresh else "a", newline="",
                  encoding="utf-8")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(_CSV_FIELDS)
    try:
        for step in range(start, config.steps):
            rng = np.random.default_rng([config.seed, step])
            pick = rng.choice(len(shapes),
                              size=min(config.batch_size, len(shapes)),
                              replace=False)
            batch = [shapes[i] for i in pick]
            params, metrics = train_step(params, batch, config, state,
                                         step=step,
                                         input_points=input_points, rng=rng)
            if writer is not None:
                writer.writerow([step, f"{metrics['loss']:.8f}",
                                 f"{metrics['bce']:.8f}",
                                 f"{metrics['l1']:.8f}",
                                 f"{metrics['grad_norm']:.8f}"])
                fh.flush()
            if log is not None:
                log(step, metrics)
            if (checkpoint_path is not None
                    and (step + 1) % checkpoint_every == 0):
                save_checkpoint(checkpoint_path, params, config.resolution,
                                state, step + 1)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, params, config.resolution,
                            state, config.steps)
    finally:
        if fh is not None:
            fh.close()
    return params
