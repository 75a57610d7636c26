"""Comparison schedulers: earliest-due-date, greedy, and primal-only.

EDD is the one scheduler here that looks at deadlines. All three cap a
job's rate at what it still needs; EDD and greedy spill a user's leftover
rate to its next job in priority order within the same slot.
"""
from __future__ import annotations

import numpy as np

from .numerics import gradient
from .online import ActiveJobs, SlotDecision, _decision, solve_slot
from .rate_region import RateRegion, linear_max

_DONE = 1e-12  # relative remaining size below which a job counts as finished


def _unfinished(jobs: ActiveJobs, served, done=_DONE):
    return jobs.size - served > done * jobs.size


def _priority_spill(jobs, region, served, t, priority, weight):
    """Serve each user's unfinished jobs in ``priority`` order (lower first).

    The user's coefficient for the region oracle is ``weight`` of its top job.
    """
    n_users = region.num_users
    if len(jobs) == 0:
        return SlotDecision.empty(t, n_users)
    left = np.where(_unfinished(jobs, served), jobs.size - served, 0.0)
    ranked = np.lexsort((jobs.index, priority))
    coeffs = np.zeros(n_users)
    seen = np.zeros(n_users, dtype=bool)
    for p in ranked:
        n = jobs.user[p]
        if left[p] > 0.0 and not seen[n]:
            seen[n] = True
            coeffs[n] = weight[p]
    alloc, _ = linear_max(region, coeffs)
    budget = alloc.copy()
    x = np.zeros(len(jobs))
    for p in ranked:
        n = jobs.user[p]
        take = min(budget[n], left[p])
        if take > 0.0:
            x[p] = take
            budget[n] -= take
    return _decision(t, jobs, x, n_users, served)


def edd_step(jobs: ActiveJobs, deadlines, region: RateRegion, served, t: int = 0) -> SlotDecision:
    """Earliest unfinished deadline first, one unit of weight per user."""
    deadlines = np.asarray(deadlines)
    return _priority_spill(jobs, region, served, t, deadlines, np.ones(len(jobs)))


def greedy_step(jobs: ActiveJobs, region: RateRegion, served, t: int = 0) -> SlotDecision:
    """Linear-reward greedy: jobs ranked by their initial marginal value."""
    g0 = gradient(jobs.a, jobs.psi, jobs.lin, 0.0)
    return _priority_spill(jobs, region, served, t, -g0, g0)


def primal_step(jobs: ActiveJobs, region: RateRegion, served, t: int = 0, tol=1e-10, max_iter=500) -> SlotDecision:
    """Marginal-reward maximization with no dual discounting."""
    cap = np.where(_unfinished(jobs, served, 1e-9), jobs.size - served, 0.0)
    return solve_slot(jobs, region, region.num_users, served, np.zeros(len(jobs)), cap, t, tol, max_iter)
