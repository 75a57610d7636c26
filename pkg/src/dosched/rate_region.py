"""Per-slot feasible rate regions.

A region is the downward closure, inside the nonnegative orthant, of the
convex hull of a few sampled per-user rate vectors:

    { x >= 0 : x <= sum_k lam_k * v_k,  lam >= 0,  sum(lam) <= 1 }

so the origin is always feasible and a scheduler may always send less.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels


class RegionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RateRegion:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, ndmin=2)
        if v.shape[0] == 0 or v.shape[1] == 0:
            raise RegionError("a rate region needs at least one vertex and one user")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise RegionError("vertices must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def num_users(self) -> int:
        return self.vertices.shape[1]

    @property
    def max_rates(self) -> np.ndarray:
        """Largest rate each user can get on its own."""
        return self.vertices.max(axis=0)

    def __eq__(self, other):
        return isinstance(other, RateRegion) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())


def linear_max(region: RateRegion, coeffs) -> tuple[np.ndarray, float]:
    """Maximize ``sum_n coeffs_n * x_n`` over the region.

    Coordinates with nonpositive coefficient are set to zero (free disposal),
    so the maximizer is a clipped vertex, or the origin.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (region.num_users,):
        raise RegionError(f"expected {region.num_users} coefficients, got shape {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise RegionError("coefficients must be finite")
    k, val = kernels.linear_max(region.vertices, coeffs)
    alloc = np.zeros(region.num_users)
    if k >= 0:
        alloc = np.where(coeffs > 0.0, region.vertices[k], 0.0)
    return alloc, val


def contains(region: RateRegion, x, tol: float = 1e-9) -> bool:
    """Exact membership test: is ``x <= sum lam_k v_k + tol`` for some sub-convex ``lam``?"""
    x = np.asarray(x, dtype=np.float64)
    need = x - tol
    if np.all(need <= 0.0):
        return True
    verts = region.vertices
    if np.any(need > verts.max(axis=0)):
        return False
    if np.any(np.all(verts >= need, axis=1)):
        return True
    rows = need > 0.0
    # min sum(lam) subject to V^T lam >= need on the positive coordinates
    res = linprog(
        c=np.ones(verts.shape[0]),
        A_ub=-verts[:, rows].T,
        b_ub=-need[rows],
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return False
    if res.status != 0:
        raise RegionError(f"membership LP failed: {res.message}")
    return bool(res.fun <= 1.0 + 1e-12)


def sample_region(num_users: int, num_samples: int, rate_cap, rng: np.random.Generator) -> RateRegion:
    """Hull of ``num_samples`` points with coordinate n uniform on ``[0, rate_cap_n]``.

    ``rate_cap`` is a scalar or one cap per user.
    """
    if num_samples < 1:
        raise RegionError("num_samples must be >= 1")
    caps = np.broadcast_to(np.asarray(rate_cap, dtype=np.float64), (num_users,))
    if np.any(caps <= 0):
        raise RegionError("rate caps must be positive")
    return RateRegion(rng.uniform(0.0, 1.0, size=(num_samples, num_users)) * caps)
