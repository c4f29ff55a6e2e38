"""Selects the compiled extension when importable, NumPy otherwise.

Set NKF_FORCE_NUMPY=1 to skip the extension (used by the fallback tests
and the backend benchmark).
"""

import os

FORCE_NUMPY = os.environ.get("NKF_FORCE_NUMPY", "") not in ("", "0")

_core = None
if not FORCE_NUMPY:
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        _core = None

HAVE_COMPILED = _core is not None
BACKEND = "compiled" if HAVE_COMPILED else "numpy"
