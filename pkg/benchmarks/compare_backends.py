"""Compare the compiled kernel core against the numpy fallback.

Runs the hot paths (pairwise kernel, Gram assembly, field evaluation,
grid nearest neighbors) in two subprocesses, one with NKF_FORCE_NUMPY=1,
and prints a timing table.  Usage:

    python benchmarks/compare_backends.py [--quick]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def workload(quick):
    import numpy as np

    from kfields import _backend, kernel, krr, neighbors

    scale = 0.4 if quick else 1.0
    rng = np.random.default_rng(0)
    results = {"backend": "compiled" if _backend.HAVE_COMPILED else "numpy"}

    def timed(name, fn, repeat=3):
        best = float("inf")
        for _ in range(repeat):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        results[name] = best

    m = int(200_000 * scale)
    a = rng.normal(size=(m, 3))
    b = rng.normal(size=(m, 3))
    timed("pairwise k_ns", lambda: kernel.k_ns(a, b))

    n = int(1500 * scale)
    pts = rng.normal(size=(n, 3)) * 0.3
    feats = rng.normal(size=(n, 8)) * 0.1
    timed("gram n=%d" % n, lambda: kernel.gram(pts))
    timed("gram+features", lambda: kernel.gram(pts, feats))

    labels = rng.normal(size=n) * 0.01
    field = krr.ImplicitField(krr.solve(pts, labels, lam=1e-6))
    q = rng.uniform(-0.5, 0.5, size=(int(50_000 * scale), 3))
    timed("evaluate %dk queries" % (len(q) // 1000),
          lambda: field.evaluate(q))

    ref = rng.uniform(size=(int(100_000 * scale), 3))
    query = rng.uniform(size=(int(100_000 * scale), 3))
    timed("nearest %dk/%dk" % (len(ref) // 1000, len(query) // 1000),
          lambda: neighbors.nearest_neighbors(ref, query))
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true",
                        help="smaller problem sizes")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(workload(args.quick)))
        return

    runs = {}
    for label, force in (("compiled", None), ("numpy", "1")):
        env = dict(os.environ)
        env.pop("NKF_FORCE_NUMPY", None)
        if force:
            env["NKF_FORCE_NUMPY"] = force
        cmd = [sys.executable, os.path.abspath(__file__), "--worker"]
        if args.quick:
            cmd.append("--quick")
        out = subprocess.run(cmd, env=env, capture_output=True, text=True,
                             check=True)
        runs[label] = json.loads(out.stdout)

    if runs["compiled"]["backend"] != "compiled":
        print("note: compiled core unavailable; both columns are the "
              "numpy fallback")
    names = [k for k in runs["compiled"] if k != "backend"]
    width = max(len(n) for n in names)
    print(f"{'workload':<{width}}  {'compiled':>10}  {'numpy':>10}  speedup")
    for name in names:
        c = runs["compiled"][name]
        p = runs["numpy"][name]
        print(f"{name:<{width}}  {c:>9.3f}s  {p:>9.3f}s  {p / c:>6.1f}x")


if __name__ == "__main__":
    main()
