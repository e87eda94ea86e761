"""Backend selection for the hot kernels.

Numba is used when importable unless ``SBIDMA_BACKEND=numpy`` (or
``SBIDMA_DISABLE_NUMBA=1``) is set in the environment before import.
"""
import os
import warnings

_requested = os.environ.get("SBIDMA_BACKEND", "").strip().lower()
if os.environ.get("SBIDMA_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes"):
    _requested = "numpy"
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"SBIDMA_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

    def njit(*args, **kw):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


if _requested == "numba" and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("SBIDMA_BACKEND=numba requested but numba is not installed; using numpy")

BACKEND = "numba" if HAVE_NUMBA and _requested != "numpy" else "numpy"
