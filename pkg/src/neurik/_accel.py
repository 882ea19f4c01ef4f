"""Numba switch.

Set ``NEURIK_NUMBA=0`` before import to force the pure-numpy kernels.
"""

import os

_flag = os.environ.get("NEURIK_NUMBA", "1").strip().lower()

try:
    if _flag in ("0", "false", "no", "off"):
        raise ImportError("disabled by NEURIK_NUMBA")
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def njit(func):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    return func
