"""Frame-based operation with per-user timely-throughput targets.

Every frame starts empty, runs the online scheduler on rewards reweighted
by per-user virtual queues, then charges each queue its target minus what
the user actually received. A queue is the running shortfall of its user;
keeping every ``Q_n[K] / K`` small keeps every long-run target met.

Only delivered traffic counts: a job that the online scheduler serves past
its size (it may overshoot by up to ``F_max``) is credited its size.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .numerics import value
from .offline import offline_solve
from .runner import fmt, run_online
from .workload import FrameConfig, Instance, JobTable, generate_frames


@dataclass(frozen=True)
class VirtualQueue:
    lengths: np.ndarray
    targets: np.ndarray

    @classmethod
    def empty(cls, targets) -> "VirtualQueue":
        targets = np.asarray(targets, dtype=np.float64)
        if np.any(targets < 0):
            raise ValueError("targets must be nonnegative")
        return cls(np.zeros(len(targets)), targets)


def _step_up(q: float, delta: float, served: float) -> float:
    """``max(q + delta - served, 0)``, rounded so it never falls below the exact value."""
    exact = Fraction(q) + Fraction(delta) - Fraction(served)
    r = float(exact)
    if Fraction(r) < exact:
        r = math.nextafter(r, math.inf)
    return max(r, 0.0)


def queue_update(q: VirtualQueue, served) -> VirtualQueue:
    served = np.asarray(served, dtype=np.float64)
    if np.any(served < 0):
        raise ValueError("served amounts must be nonnegative")
    new = np.array([_step_up(float(a), float(d), float(b)) for a, d, b in zip(q.lengths, q.targets, served)])
    return VirtualQueue(new, q.targets)


@dataclass
class FrameResult:
    index: int
    reward: float  # plain reward of delivered traffic
    served: np.ndarray  # per user, delivered
    queue: np.ndarray  # Q[k], the weights this frame was scheduled with
    objective: float  # V * reward + <Q[k], served>
    violations: int = 0


def _delivered(table: JobTable, totals) -> np.ndarray:
    return np.minimum(totals, table.size)


def _frame_result(k, jobs, totals, q, V, num_users, violations=0):
    plain = JobTable.from_jobs(jobs)
    got = _delivered(plain, totals)
    reward = float(np.sum(value(plain.a, plain.psi, plain.lin, got)))
    served = np.bincount(plain.user, weights=got, minlength=num_users)
    return FrameResult(k, reward, served, q.lengths.copy(), V * reward + float(q.lengths @ served), violations)


def lfdo_frame(instance: Instance, q: VirtualQueue, V: float, k: int = 0, *,
               algorithm: str = "do", check: bool = False, beta_rule=None) -> FrameResult:
    """One frame of the queue-weighted scheduler: reward ``V f(x) + Q_user x``."""
    table = JobTable.from_jobs(instance.jobs, scale=V, queue=q.lengths)
    run = run_online(table, instance.regions, instance.num_users, algorithm,
                     f_max=instance.f_max, check=check, beta_rule=beta_rule)
    bad = run.monitor.total if run.monitor else 0
    return _frame_result(k, instance.jobs, run.state.served, q, V, instance.num_users, bad)


def d_lookahead_frame(instance: Instance, q: VirtualQueue, V: float, k: int = 0, tol: float = 1e-7) -> FrameResult:
    """Frame optimum of the same weighted objective, seeing all regions up front."""
    table = JobTable.from_jobs(instance.jobs, scale=V, queue=q.lengths)
    sol = offline_solve(table, instance.regions, instance.num_users, tol=tol)
    return _frame_result(k, instance.jobs, sol.totals, q, V, instance.num_users)


POLICIES = ("do", "lightweight", "lfdo", "lfdo-lightweight", "dlookahead")


@dataclass
class StochasticRun:
    policy: str
    V: float
    targets: np.ndarray
    frames: list = field(default_factory=list)
    final_queue: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def run_stochastic(config: FrameConfig, policy: str = "lfdo", *, V: float | None = None,
                   check: bool = False, num_frames: int | None = None) -> StochasticRun:
    """Run ``policy`` over the frames of ``config``.

    ``do`` and ``lightweight`` ignore the queues (they are still tracked);
    ``lfdo`` variants and ``dlookahead`` schedule with them.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    V = config.V if V is None else V
    q = VirtualQueue.empty(config.targets)
    run = StochasticRun(policy, V, q.targets.copy())
    frames = generate_frames(config)
    for frame in frames:
        if num_frames is not None and frame.index >= num_frames:
            break
        inst = frame.instance
        if policy in ("do", "lightweight"):
            blind = VirtualQueue(np.zeros_like(q.lengths), q.targets)
            res = lfdo_frame(inst, blind, 1.0, frame.index, algorithm=policy, check=check)
            # report with the real queue so the trajectory is comparable
            res.queue = q.lengths.copy()
        elif policy == "dlookahead":
            res = d_lookahead_frame(inst, q, V, frame.index)
        else:
            alg = "lightweight" if policy == "lfdo-lightweight" else "do"
            res = lfdo_frame(inst, q, V, frame.index, algorithm=alg, check=check)
        run.frames.append(res)
        q = queue_update(q, res.served)
    run.final_queue = q.lengths.copy()
    return run


def drift_constant(config: FrameConfig) -> float:
    """``sum_n max(delta_n, b_n^max)^2`` with ``b_n^max`` one frame at the user's best rate."""
    best = np.max([r.max_rates for r in config.region_set], axis=0)
    b_max = config.frame_length * best
    return float(np.sum(np.maximum(np.asarray(config.targets), b_max) ** 2))


def telescoped_slack(run: StochasticRun) -> list:
    """Per user, ``Q[K] - Q[0] - sum_k (delta - b[k])`` in exact arithmetic (never negative)."""
    out = []
    for n in range(len(run.targets)):
        acc = Fraction(run.final_queue[n]) - Fraction(0)
        for fr in run.frames:
            acc -= Fraction(float(run.targets[n])) - Fraction(float(fr.served[n]))
        out.append(acc)
    return out


def stability_report(run: StochasticRun, config: FrameConfig | None = None) -> dict:
    K = run.num_frames
    if K < 1:
        raise ValueError("need at least one frame")
    served = np.array([f.served for f in run.frames])
    avg_b = served.mean(axis=0)
    q_rate = run.final_queue / K
    report = {
        "frames": K,
        "V": run.V,
        "queue_rate": q_rate,
        "avg_served": avg_b,
        "avg_reward": float(np.mean([f.reward for f in run.frames])),
        "shortfall": run.targets - avg_b,
        # Q[K]/K >= delta - avg(b) holds exactly; slack is its rational margin
        "bound_holds": all(s >= 0 for s in telescoped_slack(run)),
        "queues_nonnegative": bool(np.all([np.all(f.queue >= 0) for f in run.frames]) and np.all(run.final_queue >= 0)),
    }
    if config is not None:
        report["B_hat"] = drift_constant(config)
    return report


FRAME_FIELDS = ("k", "V", "P")


def write_frames(run: StochasticRun, path) -> None:
    n = len(run.targets)
    header = list(FRAME_FIELDS) + [f"Q{i}" for i in range(n)] + [f"b{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy"] + header)
        for f in run.frames:
            w.writerow([run.policy, f.index, fmt(run.V), fmt(f.reward)]
                       + [fmt(x) for x in f.queue] + [fmt(x) for x in f.served])


@dataclass(frozen=True)
class Dominance:
    index: int
    lookahead: float  # weighted objective reached by the frame optimum
    online: float  # same objective at the online scheduler's delivered allocation
    gap: float  # certified optimality gap of the lookahead solve

    @property
    def margin(self) -> float:
        """Nonnegative when the lookahead wins up to its certified gap."""
        return self.lookahead + self.gap - self.online


def lookahead_dominance(config: FrameConfig, *, V: float | None = None, algorithm: str = "do",
                        num_frames: int | None = None, tol: float = 1e-7) -> list:
    """Compare each frame of a queue-weighted online run with the frame optimum.

    Both sides are scored with the online run's own queue ``Q[k]``. The
    online schedule's delivered traffic is a feasible point of the lookahead
    program, so ``margin`` can only go negative through solver error.
    """
    V = config.V if V is None else V
    q = VirtualQueue.empty(config.targets)
    out = []
    for frame in generate_frames(config):
        if num_frames is not None and frame.index >= num_frames:
            break
        online = lfdo_frame(frame.instance, q, V, frame.index, algorithm=algorithm)
        table = JobTable.from_jobs(frame.instance.jobs, scale=V, queue=q.lengths)
        sol = offline_solve(table, frame.instance.regions, frame.instance.num_users, tol=tol)
        best = _frame_result(frame.index, frame.instance.jobs, sol.totals, q, V, frame.instance.num_users)
        out.append(Dominance(frame.index, best.objective, online.objective, sol.gap))
        q = queue_update(q, online.served)
    return out
