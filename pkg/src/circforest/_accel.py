"""Optional numba acceleration.

Set ``CIRCFOREST_NUMBA=0`` to force the pure numpy kernels (also used
automatically when numba cannot be imported).
"""

import os

_flag = os.environ.get("CIRCFOREST_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _requested

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged."""
    if HAS_NUMBA:
        return numba.njit(func, **NUMBA_OPTS)
    return func
