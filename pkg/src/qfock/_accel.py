"""JIT switch.

Kernels in :mod:`qfock.kernels` exist twice: a numba ``@njit`` version and a
pure numpy/python version. ``QFOCK_DISABLE_NUMBA=1`` (or a missing numba)
selects the fallback path at import time.
"""

import os

DISABLED = os.environ.get("QFOCK_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not DISABLED

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(func):
    """``numba.njit`` with project options, or a no-op when numba is unavailable."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(**NUMBA_OPTS)(func)
