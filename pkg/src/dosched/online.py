"""Deadline-oblivious primal-dual scheduling, one slot at a time.

Per slot the scheduler sees only the currently active jobs (no deadlines),
picks rates inside the slot's rate region, then updates two per-job duals:
``alpha`` (the reward gradient at the cumulative allocation) and ``beta``
(a geometrically growing price on service already received). The final
duals give an upper bound ``D`` on the offline optimum, so every run
certifies its own competitive ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import conjugate, gradient, value
from .rate_region import RateRegion, linear_max
from .workload import JobTable


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def constant_c(f_max: float) -> float:
    """``(1 + F)^(1/F)``, with its limit ``e`` at ``F = 0``."""
    if f_max < 0:
        raise ValueError("f_max must be nonnegative")
    if f_max == 0:
        return math.e
    return math.exp(math.log1p(f_max) / f_max)


def competitive_bound(c: float) -> float:
    return 3.0 + 1.0 / (c - 1.0)


@dataclass(frozen=True)
class ActiveJobs:
    """What a scheduler may see of the jobs active in one slot.

    Deadlines are deliberately absent.
    """

    index: np.ndarray  # rows of the job table, ascending
    user: np.ndarray
    size: np.ndarray
    a: np.ndarray
    psi: np.ndarray
    lin: np.ndarray

    @classmethod
    def at(cls, table: JobTable, t: int) -> "ActiveJobs":
        idx = np.flatnonzero(table.active_mask(t))
        return cls(idx, table.user[idx], table.size[idx], table.a[idx], table.psi[idx], table.lin[idx])

    def __len__(self):
        return len(self.index)


@dataclass
class SchedulerState:
    num_users: int
    served: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    f_max: float
    C: float
    t: int = -1  # last slot applied

    @classmethod
    def initial(cls, table: JobTable, num_users: int, f_max: float) -> "SchedulerState":
        n = len(table)
        return cls(
            num_users=num_users,
            served=np.zeros(n),
            alpha=gradient(table.a, table.psi, table.lin, np.zeros(n)),
            beta=np.zeros(n),
            f_max=float(f_max),
            C=constant_c(f_max),
        )

    def copy(self) -> "SchedulerState":
        return SchedulerState(
            self.num_users, self.served.copy(), self.alpha.copy(), self.beta.copy(),
            self.f_max, self.C, self.t,
        )


@dataclass(frozen=True)
class SlotDecision:
    t: int
    index: np.ndarray  # active job rows
    rates: np.ndarray  # per active job
    user_rates: np.ndarray
    gain: float  # reward increase of this slot
    gap: float = 0.0  # solver certificate, 0 for closed-form steps
    iterations: int = 0

    @classmethod
    def empty(cls, t: int, num_users: int) -> "SlotDecision":
        z = np.zeros(0)
        return cls(t, np.zeros(0, dtype=np.int64), z, np.zeros(num_users), 0.0)


def _gain(jobs: ActiveJobs, s0, x) -> float:
    return float(np.sum(value(jobs.a, jobs.psi, jobs.lin, s0 + x) - value(jobs.a, jobs.psi, jobs.lin, s0)))


def _decision(t, jobs, x, num_users, s0, gap=0.0, iterations=0) -> SlotDecision:
    x = np.asarray(x, dtype=np.float64)
    u = np.bincount(jobs.user, weights=x, minlength=num_users)
    return SlotDecision(t, jobs.index, x, u, _gain(jobs, s0, x), gap, iterations)


def solve_slot(jobs, region, num_users, s0, beta, cap, t, tol=1e-10, max_iter=500) -> SlotDecision:
    """Maximize ``sum_j f_j(s0_j + x_j) - beta_j x_j`` over the region, ``0 <= x <= cap``."""
    if len(jobs) == 0:
        return SlotDecision.empty(t, num_users)
    try:
        x, _, gap, it = kernels.slot_solve(
            region.vertices, jobs.user, num_users, jobs.a, jobs.psi, jobs.lin, beta, s0, cap, tol, max_iter
        )
    except kernels.conic.ConicError as exc:
        raise ConvergenceError(f"slot {t}: {exc}", exc.gap) from exc
    d = _decision(t, jobs, x, num_users, s0, gap, it)
    if it >= 0 and gap > 1e-7 * (1.0 + abs(d.gain)):
        raise ConvergenceError(f"slot {t}: conditional gradient stalled after {it} iterations", gap)
    return d


def do_step(state: SchedulerState, jobs: ActiveJobs, region: RateRegion, tol=1e-10, max_iter=500) -> SlotDecision:
    """One slot of the full primal-dual scheduler."""
    t = state.t + 1
    s0 = state.served[jobs.index]
    cap = np.maximum(jobs.size * (1.0 + state.f_max) - s0, 0.0)
    return solve_slot(jobs, region, state.num_users, s0, state.beta[jobs.index], cap, t, tol, max_iter)


def lightweight_do_step(state: SchedulerState, jobs: ActiveJobs, region: RateRegion) -> SlotDecision:
    """Linearized slot: each user serves its single best job at ``alpha - beta``."""
    t = state.t + 1
    n_users = state.num_users
    if len(jobs) == 0:
        return SlotDecision.empty(t, n_users)
    s0 = state.served[jobs.index]
    score = state.alpha[jobs.index] - state.beta[jobs.index]
    coeffs = np.zeros(n_users)
    pick = np.full(n_users, -1)
    for p in range(len(jobs)):  # ascending rows, so strict > keeps the lowest id on ties
        n = jobs.user[p]
        if score[p] > coeffs[n]:
            coeffs[n] = score[p]
            pick[n] = p
    alloc, _ = linear_max(region, coeffs)
    x = np.zeros(len(jobs))
    for n in np.flatnonzero(pick >= 0):
        p = pick[n]
        x[p] = min(alloc[n], max(jobs.size[p] * (1.0 + state.f_max) - s0[p], 0.0))
    return _decision(t, jobs, x, n_users, s0)


def beta_update(state: SchedulerState, table: JobTable, decision: SlotDecision) -> np.ndarray:
    """New ``beta`` for all jobs after ``decision``; inactive jobs keep theirs."""
    beta = state.beta.copy()
    idx, x = decision.index, decision.rates
    if len(idx) == 0:
        return beta
    a, psi, lin, Y = table.a[idx], table.psi[idx], table.lin[idx], table.size[idx]
    s_prev = state.served[idx]
    g_prev = gradient(a, psi, lin, s_prev)
    g_new = gradient(a, psi, lin, s_prev + x)
    z = x / Y
    beta[idx] = (g_new / g_prev) * (1.0 + z) * beta[idx] + g_new * z / (state.C - 1.0)
    return beta


def apply_decision(state: SchedulerState, table: JobTable, decision: SlotDecision, beta_rule=beta_update) -> None:
    """Advance ``state`` past ``decision``: new betas, cumulative service, alphas."""
    new_beta = beta_rule(state, table, decision)
    idx = decision.index
    state.served[idx] += decision.rates
    state.alpha[idx] = gradient(table.a[idx], table.psi[idx], table.lin[idx], state.served[idx])
    state.beta = new_beta
    state.t = decision.t


def no_beta(state, table, decision) -> np.ndarray:
    """Duals frozen at zero (the primal-only schedulers)."""
    return state.beta


def compute_primal(state: SchedulerState, table: JobTable) -> float:
    return float(np.sum(value(table.a, table.psi, table.lin, state.served)))


def user_coefficients(coef, users, mask, num_users) -> np.ndarray:
    """Per-user max of ``coef`` over masked jobs, 0 for users with none."""
    c = np.full(num_users, -np.inf)
    np.maximum.at(c, users[mask], coef[mask])
    return np.where(np.isfinite(c), c, 0.0)


def compute_dual(state: SchedulerState, table: JobTable, regions) -> float:
    """Dual objective at the final ``(alpha, beta)``; upper-bounds every feasible reward."""
    if len(table) == 0:
        return 0.0
    coef = state.alpha - state.beta
    total = 0.0
    for t, region in enumerate(regions):
        mask = table.active_mask(t)
        if mask.any():
            c = user_coefficients(coef, table.user, mask, state.num_users)
            total += linear_max(region, c)[1]
    conj = conjugate(table.a, table.psi, table.lin, state.alpha)
    return float(total + state.beta @ table.size - conj.sum())


def feasibility_scale(decisions, f_max: float, table: JobTable) -> list:
    """Shrink every rate by ``1 - f_max`` so per-job totals fit their sizes.

    Slot gains are recomputed along the scaled trajectory.
    """
    k = 1.0 - f_max
    served = np.zeros(len(table))
    out = []
    for d in decisions:
        idx = d.index
        x = d.rates * k
        s0 = served[idx]
        a, psi, lin = table.a[idx], table.psi[idx], table.lin[idx]
        gain = float(np.sum(value(a, psi, lin, s0 + x) - value(a, psi, lin, s0)))
        served[idx] += x
        out.append(SlotDecision(d.t, idx, x, d.user_rates * k, gain, d.gap, d.iterations))
    return out
