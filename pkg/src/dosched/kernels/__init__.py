"""Hot per-slot kernels, numba-compiled or pure numpy.

Which implementation backs :func:`slot_solve` and :func:`linear_max` is
decided by ``dosched._jit.USE_NUMBA`` (env ``DOSCHED_NUMBA``).
"""
import numpy as np

from .._jit import USE_NUMBA
from . import _np, conic

if USE_NUMBA:
    from . import _nb

BACKEND = "numba" if USE_NUMBA else "numpy"


def user_csr(users, n_users):
    """Group job indices by user: ``order[ptr[n]:ptr[n+1]]`` are user n's jobs."""
    users = np.asarray(users, dtype=np.int64)
    order = np.argsort(users, kind="stable").astype(np.int64)
    ptr = np.searchsorted(users[order], np.arange(n_users + 1)).astype(np.int64)
    return order, ptr


def linear_max(verts, coeffs):
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if USE_NUMBA:
        k, val = _nb.linear_max(verts, coeffs)
        return int(k), float(val)
    return _np.linear_max(verts, coeffs)


def slot_solve(verts, users, n_users, a, psi, lin, beta, s0, cap, tol=1e-10, max_iter=500):
    """Per-slot concave maximization; see ``_nb.slot_solve``.

    Returns ``(x, u, gap, iterations)``; iterations is -1 when the slot went
    to the interior-point fallback because some user's caps can bind.
    """
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (a, psi, lin, beta, s0, cap)]
    users = np.asarray(users, dtype=np.int64)
    if conic.kinked(verts, users, n_users, *args):
        x, u, gap = conic.slot_solve(verts, users, n_users, *args)
        return x, u, gap, -1
    if USE_NUMBA:
        order, ptr = user_csr(users, n_users)
        x, u, gap, it = _nb.slot_solve(verts, order, ptr, *args, tol, max_iter)
    else:
        x, u, gap, it = _np.slot_solve(verts, users, n_users, *args, tol, max_iter)
    return x, u, float(gap), int(it)
