"""Numba toggle.

Set ``DOSCHED_NUMBA=0`` to force the pure-numpy kernels even when numba is
importable. The choice is made once, at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("DOSCHED_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _flag not in ("0", "false", "no", "off")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
