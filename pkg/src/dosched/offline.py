"""Prescient benchmarks: the full-horizon optimum and a brute-force oracle.

:func:`offline_solve` hands the whole concave program to an interior-point
conic solver, then certifies the answer independently: the solver's budget
multipliers and the reward gradients at its solution are plugged into the
dual objective of :mod:`dosched.online`, which upper-bounds the optimum for
any nonnegative duals. The reported gap is that bound minus the reward of
a strictly feasible (repaired) allocation.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .numerics import SHIFT, gradient, value
from .online import SchedulerState, compute_dual
from .rate_region import contains
from .workload import JobTable


class SolverError(RuntimeError):
    pass


class TooLargeError(ValueError):
    pass


@dataclass
class OfflineSolution:
    rates: np.ndarray  # (T, J), zero outside activity windows
    objective: float
    gap: float
    flagged: bool = False  # certificate looser than requested

    @property
    def upper(self) -> float:
        return self.objective + self.gap

    @property
    def totals(self) -> np.ndarray:
        return self.rates.sum(axis=0)


def _activity(table: JobTable, horizon: int) -> np.ndarray:
    t = np.arange(horizon)[:, None]
    return (table.arrival[None, :] <= t) & (t <= table.deadline[None, :])


def _repair(table, regions, num_users, rates, weights):
    """Make ``rates`` exactly feasible by shrinking, never growing, any entry."""
    rates = np.maximum(rates, 0.0)
    for t, region in enumerate(regions):
        w = np.maximum(weights[t], 0.0)
        if w.sum() > 1.0:
            w = w / w.sum()
        room = w @ region.vertices
        use = np.bincount(table.user, weights=rates[t], minlength=num_users)
        shrink = np.ones(num_users)
        over = use > room
        shrink[over] = room[over] / use[over]
        rates[t] *= shrink[table.user]
    tot = rates.sum(axis=0)
    over = tot > table.size
    rates[:, over] *= table.size[over] / tot[over]
    return rates


def offline_solve(table: JobTable, regions, num_users: int, tol: float = 1e-6) -> OfflineSolution:
    """Maximize total reward over the horizon with budgets and per-slot regions.

    ``tol`` is the relative certified gap below which the solution is not
    flagged.
    """
    T, J = len(regions), len(table)
    if J == 0 or T == 0:
        return OfflineSolution(np.zeros((T, J)), 0.0, 0.0)
    act = _activity(table, T)
    pairs = np.argwhere(act)  # (t, j) rows
    if len(pairs) == 0:
        return OfflineSolution(np.zeros((T, J)), 0.0, 0.0)
    P = len(pairs)
    m = np.array([r.vertices.shape[0] for r in regions])
    off = np.concatenate([[0], np.cumsum(m)])

    x = cp.Variable(P, nonneg=True)
    lam = cp.Variable(int(off[-1]), nonneg=True)
    h = cp.Variable(J)

    budget = sp.csr_matrix((np.ones(P), (pairs[:, 1], np.arange(P))), shape=(J, P))
    rows = pairs[:, 0] * num_users + table.user[pairs[:, 1]]
    use = sp.csr_matrix((np.ones(P), (rows, np.arange(P))), shape=(T * num_users, P))
    vr, vc, vv = [], [], []
    for t, r in enumerate(regions):
        k, n = np.meshgrid(np.arange(m[t]), np.arange(num_users), indexing="ij")
        vr.append((t * num_users + n).ravel())
        vc.append((off[t] + k).ravel())
        vv.append(r.vertices.ravel())
    hull = sp.csr_matrix(
        (np.concatenate(vv), (np.concatenate(vr), np.concatenate(vc))), shape=(T * num_users, off[-1])
    )
    simplex = sp.csr_matrix(
        (np.ones(off[-1]), (np.repeat(np.arange(T), m), np.arange(off[-1]))), shape=(T, off[-1])
    )

    z = budget @ x
    e = 1.0 - table.psi
    reward = cp.sum(cp.multiply(table.a / e, h)) - float(np.sum(table.a * SHIFT**e / e)) + table.lin @ z
    cons_budget = z <= table.size
    cons = [
        cons_budget,
        use @ x <= hull @ lam,
        simplex @ lam <= 1.0,
    ]
    if J == 1:  # the cone wants scalars, not length-1 vectors
        cons.append(cp.PowCone3D(z[0] + SHIFT, 1.0, h[0], float(e[0])))
    else:
        cons.append(cp.PowCone3D(z + SHIFT, np.ones(J), h, e))
    prob = cp.Problem(cp.Maximize(reward), cons)
    try:
        with warnings.catch_warnings():
            # an inaccurate solve is still repaired and certified below
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    except cp.error.SolverError as exc:
        raise SolverError(str(exc)) from exc
    if x.value is None:
        raise SolverError(f"conic solver returned status {prob.status}")

    rates = np.zeros((T, J))
    rates[pairs[:, 0], pairs[:, 1]] = x.value
    weights = [lam.value[off[t] : off[t + 1]] for t in range(T)]
    rates = _repair(table, regions, num_users, rates, weights)
    served = rates.sum(axis=0)
    achieved = float(np.sum(value(table.a, table.psi, table.lin, served)))

    nu = np.maximum(np.asarray(cons_budget.dual_value, dtype=np.float64).ravel(), 0.0)
    state = SchedulerState(
        num_users, served, gradient(table.a, table.psi, table.lin, served), nu, 0.0, math.e
    )
    upper = compute_dual(state, table, regions)
    gap = max(upper - achieved, 0.0)
    return OfflineSolution(rates, achieved, gap, flagged=gap > tol * (1.0 + abs(achieved)))


# Brute force over a grid, for tiny instances only.

LIMITS = {"horizon": 4, "users": 2, "jobs": 3, "vertices": 3}


def brute_force_solve(table: JobTable, regions, num_users: int, step: float = 0.1) -> OfflineSolution:
    """Best allocation with every rate a multiple of ``step``.

    Enumerates the reachable cumulative-service vectors slot by slot; the
    reward only depends on the final one. A lower bound on the optimum.
    """
    T, J = len(regions), len(table)
    if T > LIMITS["horizon"] or num_users > LIMITS["users"] or J > LIMITS["jobs"]:
        raise TooLargeError(f"brute force limited to {LIMITS}")
    if any(r.vertices.shape[0] > LIMITS["vertices"] for r in regions):
        raise TooLargeError(f"brute force limited to {LIMITS}")
    if J == 0:
        return OfflineSolution(np.zeros((T, 0)), 0.0, 0.0)

    limit = np.floor(table.size / step + 1e-9).astype(np.int64)  # budget in grid units
    act = _activity(table, T)
    states = np.zeros((1, J), dtype=np.int64)
    parents = []
    for t, region in enumerate(regions):
        allocs = _grid_allocs(region, act[t], table.user, num_users, step, limit)
        total = states[:, None, :] + allocs[None, :, :]
        ok = np.all(total <= limit, axis=2)
        src, pick = np.nonzero(ok)
        cand = total[src, pick]
        new, first = np.unique(cand, axis=0, return_index=True)
        parents.append((src[first], allocs[pick[first]]))
        states = new

    vals = np.sum(value(table.a, table.psi, table.lin, states * step), axis=1)
    best = int(np.argmax(vals))
    rates = np.zeros((T, J))
    k = best
    for t in range(T - 1, -1, -1):
        src, alloc = parents[t]
        rates[t] = alloc[k] * step
        k = src[k]
    return OfflineSolution(rates, float(vals[best]), 0.0)


def _grid_allocs(region, active, users, num_users, step, limit):
    """All grid job allocations at one slot whose user sums fit the region."""
    J = len(active)
    top = np.floor(region.max_rates / step + 1e-9).astype(np.int64)
    ranges = []
    for j in range(J):
        hi = min(top[users[j]], limit[j]) if active[j] else 0
        ranges.append(range(hi + 1))
    grid = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, J)
    sums = np.zeros((len(grid), num_users), dtype=np.int64)
    for j in range(J):
        sums[:, users[j]] += grid[:, j]
    uniq, inv = np.unique(sums, axis=0, return_inverse=True)
    feas = np.array([contains(region, u * step, tol=1e-9) for u in uniq])
    return grid[feas[inv.ravel()]]


def competitive_ratio(online_reward: float, offline: OfflineSolution, dual: float | None = None):
    """``(P*_upper / P, D / P)``; 0/0 counts as 1 and x/0 as infinity."""

    def ratio(num, den):
        if den > 0:
            return num / den
        return 1.0 if num <= 0 else math.inf

    r = ratio(offline.upper, online_reward)
    return r, (ratio(dual, online_reward) if dual is not None else None)
