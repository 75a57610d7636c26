"""Drive a scheduler over a horizon and audit every slot.

:class:`LemmaMonitor` re-derives the per-slot guarantees of the
primal-dual scheduler from the state before and after each slot and counts
anything that fails. The checks are independent of the solver: they only
use the closed-form gradients, the region oracle and the LP membership test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .numerics import gradient
from .online import (
    ActiveJobs,
    SchedulerState,
    apply_decision,
    beta_update,
    competitive_bound,
    compute_dual,
    compute_primal,
    do_step,
    lightweight_do_step,
    no_beta,
    user_coefficients,
)
from .rate_region import contains, linear_max
from .workload import Instance, JobTable, measure_f_max

ALGORITHMS = ("do", "lightweight", "primal", "greedy", "edd")
DUAL_ALGORITHMS = ("do", "lightweight")


@dataclass(frozen=True)
class Tolerances:
    lemma1_alpha: float = 1e-7
    lemma1_rel: float = 1e-6
    lemma2: float = 1e-9
    lemma3: float = 1e-9
    lemma3_region: float = 1e-9
    lemma4: float = 1e-9
    lemma5: float = 1e-9
    weak_duality_rel: float = 1e-9
    ratio_rel: float = 1e-6


@dataclass(frozen=True)
class Violation:
    check: str
    t: int
    job: int  # job id, -1 when the check is not per job
    residual: float

    def __str__(self):
        where = f"slot {self.t}" + (f", job {self.job}" if self.job >= 0 else "")
        return f"{self.check} violated at {where}: residual {self.residual:.3e}"


CHECKS = ("lemma1", "lemma2", "lemma3", "lemma4", "lemma5", "weak_duality", "ratio")


@dataclass
class LemmaMonitor:
    table: JobTable
    tol: Tolerances = field(default_factory=Tolerances)
    check_saddle: bool = True  # the exact-saddle part of lemma 1; off for the linearized variant
    gate_ratio: bool = True
    keep: int = 50  # violations kept verbatim; counters are always exact

    def __post_init__(self):
        self.counts = {c: 0 for c in CHECKS}
        self.worst = {c: 0.0 for c in CHECKS}
        self.violations: list[Violation] = []

    def _record(self, check, residual, t, job=-1, bad=None):
        residual = float(residual)
        self.worst[check] = max(self.worst[check], residual)
        if bad is None:
            bad = residual > 0.0
        if bad:
            self.counts[check] += 1
            if len(self.violations) < self.keep:
                self.violations.append(Violation(check, t, int(job), residual))

    def _per_job(self, check, excess, t, rows):
        """``excess > 0`` flags a violation; rows map entries to job ids."""
        if len(excess) == 0:
            return
        self.worst[check] = max(self.worst[check], float(excess.max()))
        for i in np.flatnonzero(excess > 0.0):
            self._record(check, excess[i], t, self.table.ids[rows[i]])

    def check_slot(self, region, decision, before: SchedulerState, after: SchedulerState):
        tab, tol, t = self.table, self.tol, decision.t
        idx, x = decision.index, decision.rates
        a, psi, lin = tab.a[idx], tab.psi[idx], tab.lin[idx]

        # lemma 1: alpha is the gradient at the new cumulative, and x solves
        # the linearized slot problem at (alpha_t, beta_{t-1})
        g = gradient(a, psi, lin, after.served[idx])
        self._per_job("lemma1", np.abs(after.alpha[idx] - g) - tol.lemma1_alpha, t, idx)
        if self.check_saddle and len(idx):
            coef = after.alpha[idx] - before.beta[idx]
            c = user_coefficients(coef, tab.user[idx], np.ones(len(idx), bool), after.num_users)
            _, best = linear_max(region, c)
            got = float(coef @ x)
            # the objective carries the constant <coef, cumulative> term too
            scale = 1.0 + abs(best) + abs(float(coef @ before.served[idx]))
            rel = (best - got) / scale
            self._record("lemma1", rel - tol.lemma1_rel, t, bad=rel > tol.lemma1_rel)

        # lemma 2: beta dominates the geometric lower bound (all jobs)
        C = after.C
        lower = gradient(tab.a, tab.psi, tab.lin, after.served) * (C ** (after.served / tab.size) - 1.0) / (C - 1.0)
        rows = np.arange(len(tab))
        self._per_job("lemma2", lower - after.beta - tol.lemma2, t, rows)

        # lemma 3: nonnegative duals, region membership, relaxed budgets
        neg = np.maximum(-after.alpha, -after.beta)
        self._per_job("lemma3", neg, t, rows)
        over = after.served - tab.size * (1.0 + after.f_max) - tol.lemma3
        self._per_job("lemma3", over, t, rows)
        if not contains(region, decision.user_rates, tol.lemma3_region):
            self._record("lemma3", float(np.max(decision.user_rates)), t, bad=True)

        # lemma 4: <alpha_t, x_t> <= reward gain
        lhs = float(after.alpha[idx] @ x)
        self._record("lemma4", lhs - decision.gain - tol.lemma4, t)

        # lemma 5: beta growth is paid for by the reward gain
        lhs = float((after.beta - before.beta) @ tab.size)
        rhs = decision.gain * (1.0 + 1.0 / (C - 1.0))
        self._record("lemma5", lhs - rhs - tol.lemma5, t)

    def check_run(self, primal, dual, bound):
        scale = max(abs(primal), 1.0)
        self._record("weak_duality", primal - dual - self.tol.weak_duality_rel * scale, -1)
        excess = dual - primal * bound - self.tol.ratio_rel * primal
        self._record("ratio", excess, -1, bad=self.gate_ratio and excess > 0.0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class RunResult:
    algorithm: str
    table: JobTable
    state: SchedulerState
    decisions: list
    primal: float
    dual: float
    monitor: LemmaMonitor | None = None
    trace: list = field(default_factory=list)

    @property
    def f_max(self) -> float:
        return self.state.f_max

    @property
    def C(self) -> float:
        return self.state.C

    @property
    def bound(self) -> float:
        return competitive_bound(self.state.C)

    @property
    def ratio(self) -> float:
        if self.primal > 0:
            return self.dual / self.primal
        return 1.0 if self.dual <= 0 else float("inf")

    @property
    def served_by_user(self) -> np.ndarray:
        return np.bincount(self.table.user, weights=self.state.served, minlength=self.state.num_users)

    def summary(self) -> dict:
        out = {
            "algorithm": self.algorithm,
            "P": self.primal,
            "D": self.dual,
            "ratio": self.ratio,
            "C": self.C,
            "F_max": self.f_max,
            "bound": self.bound,
        }
        for c in CHECKS:
            out[f"viol_{c}"] = self.monitor.counts[c] if self.monitor else 0
        return out


TRACE_FIELDS = ("t", "job", "x", "alpha", "beta", "dP")


def run_online(
    table: JobTable,
    regions,
    num_users: int,
    algorithm: str = "do",
    *,
    f_max: float | None = None,
    check: bool = True,
    beta_rule=None,
    tolerances: Tolerances | None = None,
    trace: bool = False,
    solver_tol: float = 1e-10,
) -> RunResult:
    """Run one scheduler over ``regions`` and return the audited result.

    ``beta_rule`` overrides the dual update (used to test that the monitor
    catches a broken one).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if f_max is None:
        f_max = measure_f_max(table, regions)
    dual_alg = algorithm in DUAL_ALGORITHMS
    if beta_rule is None:
        beta_rule = beta_update if dual_alg else no_beta
    state = SchedulerState.initial(table, num_users, f_max)
    monitor = None
    if check and dual_alg:
        monitor = LemmaMonitor(
            table, tolerances or Tolerances(),
            check_saddle=algorithm == "do", gate_ratio=algorithm == "do",
        )
    decisions, rows = [], []
    for t, region in enumerate(regions):
        jobs = ActiveJobs.at(table, t)
        served = state.served[jobs.index]
        if algorithm == "do":
            d = do_step(state, jobs, region, tol=solver_tol)
        elif algorithm == "lightweight":
            d = lightweight_do_step(state, jobs, region)
        elif algorithm == "primal":
            d = baselines.primal_step(jobs, region, served, t, tol=solver_tol)
        elif algorithm == "greedy":
            d = baselines.greedy_step(jobs, region, served, t)
        else:
            d = baselines.edd_step(jobs, table.deadline[jobs.index], region, served, t)
        before = state.copy() if monitor else None
        apply_decision(state, table, d, beta_rule)
        if monitor:
            monitor.check_slot(region, d, before, state)
        if trace:
            for p, j in enumerate(d.index):
                rows.append((t, int(table.ids[j]), d.rates[p], state.alpha[j], state.beta[j], d.gain))
        decisions.append(d)
    primal = compute_primal(state, table)
    dual = compute_dual(state, table, regions)
    if monitor:
        monitor.check_run(primal, dual, competitive_bound(state.C))
    return RunResult(algorithm, table, state, decisions, primal, dual, monitor, rows)


def run_instance(instance: Instance, algorithm: str = "do", **kwargs) -> RunResult:
    kwargs.setdefault("f_max", instance.f_max)
    return run_online(instance.table, instance.regions, instance.num_users, algorithm, **kwargs)


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def write_trace(result: RunResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("algorithm",) + TRACE_FIELDS)
        for row in result.trace:
            w.writerow([result.algorithm] + [fmt(v) for v in row])
