"""Command-line application: reconstruct, train, eval, benchmark-density.

Exit codes: 0 success, 1 bad flags or configuration, 2 a pipeline stage
failed (the message names the stage).  Progress and timing go to stderr;
results go to stdout or the requested output files.
"""

import argparse
import csv
import io as _io
import os
import sys
import time

import numpy as np

from . import features as feat
from . import io as nkio
from . import metrics, primitives, training
from .errors import OpenSurfaceError, SingularSystemError, StageError, UsageError
from .geometry import OrientedPointCloud
from .pipeline import MODES, reconstruct_cloud

__all__ = ["main"]

# dataset seeds: training and held-out shapes never share a stream
TRAIN_DATASET_SEED = 11
HELDOUT_DATASET_SEED = 13

DENSITY_COUNTS = (250, 500, 1000, 2000, 3000)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _say(command, text):
    print(f"[{command}] {text}", file=sys.stderr)


def _stage_printer(command):
    return lambda stage, elapsed: _say(command, f"{stage} {elapsed:.2f}s")


def _timed(command, stage, fn, *args):
    start = time.perf_counter()
    try:
        result = fn(*args)
    except (UsageError, StageError):
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    _say(command, f"{stage} {time.perf_counter() - start:.2f}s")
    return result


def _write_mesh(path, mesh):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        nkio.write_obj(path, mesh)
    elif ext == ".ply":
        nkio.write_ply(path, mesh)
    else:
        raise UsageError(f"unsupported mesh format {ext or path!r} "
                         "(use .obj or .ply)")


def _load_learned(mode, checkpoint):
    if mode == "fixed":
        return None, None
    if checkpoint is None:
        raise UsageError(f"mode {mode} requires --checkpoint")
    return feat.load_checkpoint(checkpoint)


def cmd_reconstruct(args):
    if args.mode == "learned-weighted" and args.lam == 0.0:
        raise UsageError("learned-weighted mode requires --lambda > 0")
    params, feature_resolution = _load_learned(args.mode, args.checkpoint)
    cloud = _timed("reconstruct", "read", nkio.read_point_cloud, args.input)
    _say("reconstruct", f"{cloud.count} points from {args.input}")
    result = reconstruct_cloud(
        cloud, mode=args.mode, epsilon=args.epsilon, lam=args.lam,
        grid_resolution=args.grid, params=params,
        feature_resolution=feature_resolution,
        on_stage=_stage_printer("reconstruct"))
    _timed("reconstruct", "write", _write_mesh, args.output, result.mesh)
    _say("reconstruct",
         f"{len(result.mesh.vertices)} vertices, "
         f"{len(result.mesh.triangles)} triangles -> {args.output}")
    return 0


def cmd_train(args):
    config = (training.TrainConfig() if args.config is None
              else training.TrainConfig.from_file(args.config))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.noise is not None:
        overrides["noise_std"] = args.noise
    if overrides:
        values = config.to_dict()
        values.update(overrides)
        config = training.TrainConfig(**values)

    def build_dataset():
        shapes = []
        for i in range(args.shapes):
            shapes.append(training.TrainingShape.from_primitive(
                primitives.random_shape(
                    np.random.default_rng([TRAIN_DATASET_SEED, i])),
                seed=i))
            if (i + 1) % 25 == 0:
                _say("train", f"prepared {i + 1}/{args.shapes} shapes")
        return shapes

    shapes = _timed("train", "dataset", build_dataset)
    start = time.perf_counter()

    def log(step, m):
        if step % 50 == 0 or step == config.steps - 1:
            _say("train",
                 f"step {step} loss {m['loss']:.5f} bce {m['bce']:.5f} "
                 f"l1 {m['l1']:.5f} grad {m['grad_norm']:.3e} "
                 f"({time.perf_counter() - start:.0f}s)")

    try:
        training.train(shapes, config, checkpoint_path=args.checkpoint,
                       csv_path=args.output, input_points=args.points,
                       log=log)
    except (UsageError, StageError):
        raise
    except Exception as exc:
        raise StageError("train", exc) from exc
    _say("train", f"checkpoint -> {args.checkpoint}, metrics -> {args.output}")
    return 0


def cmd_eval(args):
    def read(path):
        try:
            return nkio.read_mesh(path)
        except UsageError as exc:
            # unreadable meshes are runtime failures for eval
            raise StageError("read", exc) from exc

    predicted = read(args.predicted)
    target = read(args.target)
    report = _timed("eval", "metrics", metrics.evaluate_reconstruction,
                    predicted, target, args.seed)
    text = report.to_json()
    if args.output is None:
        print(text)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        _say("eval", f"report -> {args.output}")
    return 0


def cmd_benchmark_density(args):
    if args.mode != "fixed" and args.checkpoint is None:
        raise UsageError(f"mode {args.mode} requires --checkpoint")
    if args.mode == "learned-weighted" and args.lam == 0.0:
        raise UsageError("learned-weighted mode requires --lambda > 0")
    params, feature_resolution = _load_learned(args.mode, args.checkpoint)
    counts = DENSITY_COUNTS if args.points is None else (args.points,)
    shapes = primitives.shape_dataset(args.shapes, seed=HELDOUT_DATASET_SEED)
    rows = []
    for count in counts:
        chamfers = []
        ious = []
        for i, shape in enumerate(shapes):
            rng = np.random.default_rng([args.seed, count, i])
            cloud = OrientedPointCloud(*shape.sample_surface(count, rng))
            result = reconstruct_cloud(
                cloud, mode=args.mode, epsilon=args.epsilon, lam=args.lam,
                grid_resolution=args.grid, params=params,
                feature_resolution=feature_resolution)
            chamfers.append(metrics.chamfer_l2(
                result.mesh, shape, n=20000, seed=args.seed))
            ious.append(metrics.iou(
                result.mesh, shape, n=20000, seed=args.seed))
        rows.append((count, float(np.mean(chamfers)), float(np.mean(ious))))
        _say("benchmark-density",
             f"points {count}: chamfer {rows[-1][1]:.5f} iou {rows[-1][2]:.4f}")
    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(("points", "chamfer", "iou"))
    for row in rows:
        writer.writerow((row[0], f"{row[1]:.8f}", f"{row[2]:.6f}"))
    if args.output is None:
        sys.stdout.write(buf.getvalue())
    else:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        _say("benchmark-density", f"table -> {args.output}")
    return 0


def _build_parser():
    parser = _Parser(prog="kfields", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    rec = sub.add_parser("reconstruct",
                         help="oriented point cloud -> watertight mesh")
    rec.add_argument("--input", required=True,
                     help="point cloud (.ply ascii or .xyz text)")
    rec.add_argument("--output", required=True, help="mesh path (.obj/.ply)")
    rec.add_argument("--epsilon", type=float, default=None,
                     help="normal dilation offset (default: 1%% of bbox "
                          "diagonal)")
    rec.add_argument("--lambda", dest="lam", type=float, default=0.0,
                     help="ridge regularizer")
    rec.add_argument("--grid", type=int, default=64,
                     help="output grid resolution")
    rec.add_argument("--mode", choices=MODES, default="fixed")
    rec.add_argument("--checkpoint", default=None,
                     help="feature network parameters (learned modes)")
    rec.set_defaults(func=cmd_reconstruct)

    tr = sub.add_parser("train", help="train the learned kernel on "
                                      "procedural shapes")
    tr.add_argument("--config", default=None,
                    help="key = value hyperparameter file")
    tr.add_argument("--checkpoint", default="checkpoint.nkf",
                    help="checkpoint path (resumes when present)")
    tr.add_argument("--output", default="training.csv",
                    help="per-step metrics CSV")
    tr.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    tr.add_argument("--noise", type=float, default=None,
                    help="override the input corruption std")
    tr.add_argument("--points", type=int, default=128,
                    help="input points sampled per shape per step")
    tr.add_argument("--shapes", type=int, default=200,
                    help="training dataset size")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="compare two meshes")
    ev.add_argument("predicted", help="predicted mesh path")
    ev.add_argument("target", help="ground-truth mesh path")
    ev.add_argument("--output", default=None,
                    help="write the JSON report here instead of stdout")
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    bd = sub.add_parser("benchmark-density",
                        help="chamfer/iou vs input point count")
    bd.add_argument("--output", default=None,
                    help="CSV path (default: stdout)")
    bd.add_argument("--mode", choices=MODES, default="fixed")
    bd.add_argument("--checkpoint", default=None)
    bd.add_argument("--epsilon", type=float, default=None)
    bd.add_argument("--lambda", dest="lam", type=float, default=0.0)
    bd.add_argument("--grid", type=int, default=64)
    bd.add_argument("--points", type=int, default=None,
                    help="benchmark a single count instead of the sweep")
    bd.add_argument("--seed", type=int, default=0)
    bd.add_argument("--shapes", type=int, default=3,
                    help="held-out shapes per count")
    bd.set_defaults(func=cmd_benchmark_density)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SingularSystemError, OpenSurfaceError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
