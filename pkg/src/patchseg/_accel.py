"""Backend switch for the compiled kernels.

Every hot loop in :mod:`patchseg.kernels` exists twice: a numba ``@njit``
version and a pure-numpy twin. ``PATCHSEG_DISABLE_NUMBA=1`` forces the numpy
path (also used automatically when numba cannot be imported).
``PATCHSEG_WORKERS`` sets the thread count used for trial-level parallelism.
"""

import os

_TRUE = {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

DISABLE_NUMBA = os.environ.get("PATCHSEG_DISABLE_NUMBA", "").strip().lower() in _TRUE
USE_NUMBA = HAVE_NUMBA and not DISABLE_NUMBA


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def pick(compiled, fallback):
    return compiled if USE_NUMBA else fallback


def n_workers():
    """Worker count from ``PATCHSEG_WORKERS``; defaults to the CPU count."""
    raw = os.environ.get("PATCHSEG_WORKERS", "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"PATCHSEG_WORKERS must be an integer, got {raw!r}")
        return max(1, value)
    return os.cpu_count() or 1


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
