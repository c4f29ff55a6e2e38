"""Watertight implicit surface reconstruction from oriented point clouds.

Kernel ridge regression with the Neural Spline kernel, optionally
conditioned on a learned voxel feature field, plus marching-cubes
surfacing and evaluation metrics.
"""

import os

# NKF_THREADS caps internal parallelism (0 or unset = library defaults).
# BLAS pools are sized at import, so this must run before numpy loads.
_threads = os.environ.get("NKF_THREADS")
if _threads and _threads != "0":
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del _threads, os

__version__ = "0.1.0"
