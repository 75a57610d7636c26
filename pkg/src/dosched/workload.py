"""Jobs, instances, and scenario generators.

Slots are 0-based and deadlines inclusive: job ``j`` may receive rate in
every slot ``t`` with ``arrival <= t <= deadline``. Users are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .numerics import PowerUtility
from .rate_region import RateRegion, sample_region


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Job:
    id: int
    arrival: int
    deadline: int
    size: float
    utility: PowerUtility
    user: int

    def __post_init__(self):
        if self.arrival > self.deadline:
            raise ConfigError(f"job {self.id}: arrival {self.arrival} after deadline {self.deadline}")
        if not self.size > 0:
            raise ConfigError(f"job {self.id}: size must be positive")

    def active(self, t: int) -> bool:
        return self.arrival <= t <= self.deadline


@dataclass(frozen=True)
class JobTable:
    """Column view of a job list, optionally with reweighted rewards."""

    arrival: np.ndarray
    deadline: np.ndarray
    size: np.ndarray
    a: np.ndarray
    psi: np.ndarray
    lin: np.ndarray
    user: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_jobs(cls, jobs, scale: float = 1.0, queue=None) -> "JobTable":
        """Columns for ``jobs``; rewards become ``scale * f + queue[user] * x``."""
        user = np.array([j.user for j in jobs], dtype=np.int64)
        lin = np.array([j.utility.linear for j in jobs], dtype=np.float64) * scale
        if queue is not None and len(jobs):
            lin = lin + np.asarray(queue, dtype=np.float64)[user]
        return cls(
            arrival=np.array([j.arrival for j in jobs], dtype=np.int64),
            deadline=np.array([j.deadline for j in jobs], dtype=np.int64),
            size=np.array([j.size for j in jobs], dtype=np.float64),
            a=np.array([j.utility.v for j in jobs], dtype=np.float64) * scale,
            psi=np.array([j.utility.psi for j in jobs], dtype=np.float64),
            lin=lin,
            user=user,
            ids=np.array([j.id for j in jobs], dtype=np.int64),
        )

    def __len__(self):
        return len(self.size)

    def active_mask(self, t: int) -> np.ndarray:
        return (self.arrival <= t) & (t <= self.deadline)


@dataclass(frozen=True, eq=False)
class Instance:
    num_users: int
    jobs: tuple
    regions: tuple

    @property
    def horizon(self) -> int:
        return len(self.regions)

    @cached_property
    def table(self) -> JobTable:
        return JobTable.from_jobs(self.jobs)

    @cached_property
    def f_max(self) -> float:
        return measure_f_max(self.table, self.regions)

    def __eq__(self, other):
        return (
            isinstance(other, Instance)
            and self.num_users == other.num_users
            and self.jobs == other.jobs
            and self.regions == other.regions
        )


def measure_f_max(table: JobTable, regions) -> float:
    """Largest fraction of any job one slot can carry, over its activity window."""
    if len(table) == 0:
        return 0.0
    caps = np.array([r.max_rates for r in regions])  # (T, N)
    best = 0.0
    for j in range(len(table)):
        lo, hi = table.arrival[j], min(table.deadline[j], len(regions) - 1)
        if lo > hi:
            continue
        best = max(best, caps[lo : hi + 1, table.user[j]].max() / table.size[j])
    return float(best)


@dataclass(frozen=True)
class ScenarioConfig:
    """Adversarial-horizon workload: Bernoulli arrivals per user per slot."""

    num_users: int = 3
    horizon: int = 100
    arrival_prob: float = 0.3
    size_range: tuple = (5.0, 25.0)
    d_max: int = 10
    v_range: tuple = (0.01, 1.0)
    psi_range: tuple = (0.01, 0.99)
    num_vertices: int = 5
    rate_cap: tuple | float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.horizon < 1:
            raise ConfigError("num_users and horizon must be positive")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ConfigError("arrival_prob must lie in [0, 1]")
        if self.d_max < 2:
            raise ConfigError("d_max must be at least 2")
        for name in ("size_range", "v_range", "psi_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} is empty")
        if self.size_range[0] <= 0 or self.v_range[0] <= 0:
            raise ConfigError("sizes and v must be positive")
        if not (0.0 < self.psi_range[0] and self.psi_range[1] < 1.0):
            raise ConfigError("psi_range must lie inside (0, 1)")
        if self.num_vertices < 1:
            raise ConfigError("num_vertices must be >= 1")

    def caps(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rate_cap, dtype=np.float64), (self.num_users,)).copy()


def generate_instance(config: ScenarioConfig) -> Instance:
    """Sample jobs and per-slot regions; deterministic in ``config.seed``.

    Jobs and regions come from independent streams, so changing the arrival
    probability leaves the channel realization untouched.
    """
    job_seq, region_seq = np.random.SeedSequence(config.seed).spawn(2)
    jrng = np.random.default_rng(job_seq)
    rrng = np.random.default_rng(region_seq)
    T, N = config.horizon, config.num_users
    jobs = []
    for t in range(T):
        for n in range(N):
            if jrng.random() >= config.arrival_prob:
                continue
            size = jrng.uniform(*config.size_range)
            window = int(jrng.integers(2, config.d_max + 1))
            v = jrng.uniform(*config.v_range)
            psi = jrng.uniform(*config.psi_range)
            jobs.append(
                Job(
                    id=len(jobs),
                    arrival=t,
                    deadline=min(t + window - 1, T - 1),
                    size=float(size),
                    utility=PowerUtility(float(v), float(psi)),
                    user=n,
                )
            )
    caps = config.caps()
    regions = tuple(sample_region(N, config.num_vertices, caps, rrng) for _ in range(T))
    return Instance(N, tuple(jobs), regions)


# Frame-based stochastic workload


@dataclass(frozen=True)
class JobClass:
    deadline: int  # slots after the frame start, 1..D
    size: float
    v: float
    psi: float
    user: int
    prob: float = 1.0


@dataclass(frozen=True)
class FrameConfig:
    frame_length: int
    num_frames: int
    classes: tuple
    region_set: tuple
    targets: tuple  # timely-throughput target per user, traffic units per frame
    V: float = 1.0
    max_jobs: int | None = None
    seed: int = 0

    def __post_init__(self):
        D = self.frame_length
        if D < 1 or self.num_frames < 0:
            raise ConfigError("frame_length must be positive and num_frames nonnegative")
        if not self.region_set:
            raise ConfigError("region_set is empty")
        n_users = self.region_set[0].num_users
        if any(r.num_users != n_users for r in self.region_set):
            raise ConfigError("all regions must have the same number of users")
        if len(self.targets) != n_users:
            raise ConfigError("one timely-throughput target per user is required")
        for c in self.classes:
            if not 1 <= c.deadline <= D:
                raise ConfigError(f"class deadline {c.deadline} outside 1..{D}")
            if not 0 <= c.user < n_users:
                raise ConfigError(f"class user {c.user} out of range")
        if self.V <= 0:
            raise ConfigError("V must be positive")

    @property
    def num_users(self) -> int:
        return self.region_set[0].num_users

    @property
    def job_bound(self) -> int:
        return len(self.classes) if self.max_jobs is None else self.max_jobs


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    instance: Instance  # slot times local to the frame, 0..D-1


def generate_frames(config: FrameConfig):
    """Yield the frames of a stochastic run, one :class:`Frame` at a time.

    Each class arrives independently with its probability at the frame
    start; at most ``job_bound`` jobs are kept (in class order). Regions are
    drawn i.i.d. uniformly from ``region_set`` every slot.
    """
    rng = np.random.default_rng(config.seed)
    D, N = config.frame_length, config.num_users
    next_id = 0
    for k in range(config.num_frames):
        hits = rng.random(len(config.classes))
        picks = rng.integers(0, len(config.region_set), size=D)
        jobs = []
        for c, h in zip(config.classes, hits):
            if h >= c.prob or len(jobs) >= config.job_bound:
                continue
            jobs.append(Job(next_id, 0, c.deadline - 1, c.size, PowerUtility(c.v, c.psi), c.user))
            next_id += 1
        regions = tuple(config.region_set[i] for i in picks)
        yield Frame(k, Instance(N, tuple(jobs), regions))


def fig3_config(
    seed: int = 0,
    num_frames: int = 2000,
    V: float = 0.1,
    frame_length: int = 5,
    num_regions: int = 16,
    num_vertices: int = 4,
    weak_target: float = 0.05,
    strong_target: float = 0.5,
    delta: float = 0.045,
) -> FrameConfig:
    """Five users, user 0 with ten times weaker channels than the rest.

    Each user's coordinates in the region set are rescaled so the most
    service it could get in a frame, if always favoured, averages
    ``weak_target`` (user 0) or ``strong_target`` (others). User 0 gets a
    timely-throughput target ``delta``; the others get none.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    N, D = 5, frame_length
    raw = [rng.uniform(0.0, 1.0, size=(num_vertices, N)) for _ in range(num_regions)]
    best = np.mean([r.max(axis=0) for r in raw], axis=0)  # per-slot, per user
    goal = np.array([weak_target] + [strong_target] * (N - 1))
    scale = goal / (D * best)
    region_set = tuple(RateRegion(r * scale) for r in raw)

    classes = [JobClass(D, 5.0 * weak_target, float(rng.uniform(0.01, 1.0)),
                        float(rng.uniform(0.01, 0.99)), user=0, prob=1.0)]
    for n in range(1, N):
        for _ in range(2):
            classes.append(
                JobClass(
                    deadline=int(rng.integers(2, D + 1)),
                    size=float(rng.uniform(0.4, 1.2)) * strong_target,
                    v=float(rng.uniform(0.01, 1.0)),
                    psi=float(rng.uniform(0.01, 0.99)),
                    user=n,
                    prob=0.7,
                )
            )
    targets = (delta,) + (0.0,) * (N - 1)
    return FrameConfig(D, num_frames, tuple(classes), region_set, targets, V=V, seed=seed)


# Line-oriented text format, 12 significant digits.

_MAGIC = "dosched-instance 1"


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def dump_instance(instance: Instance) -> str:
    lines = [_MAGIC, f"users {instance.num_users}", f"horizon {instance.horizon}"]
    for j in instance.jobs:
        u = j.utility
        lines.append(
            f"job {j.id} {j.arrival} {j.deadline} {_fmt(j.size)} {_fmt(u.v)} {_fmt(u.psi)} {j.user}"
        )
    for t, r in enumerate(instance.regions):
        m = r.vertices.shape[0]
        lines.append(f"region {t} {m} " + " ".join(_fmt(v) for v in r.vertices.ravel()))
    return "\n".join(lines) + "\n"


def load_instance(text: str) -> Instance:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != _MAGIC:
        raise ConfigError("not a dosched instance file")
    num_users = horizon = None
    jobs, regions = [], {}
    for ln in lines[1:]:
        tag, *rest = ln.split()
        if tag == "users":
            num_users = int(rest[0])
        elif tag == "horizon":
            horizon = int(rest[0])
        elif tag == "job":
            jid, a, d = int(rest[0]), int(rest[1]), int(rest[2])
            size, v, psi = float(rest[3]), float(rest[4]), float(rest[5])
            jobs.append(Job(jid, a, d, size, PowerUtility(v, psi), int(rest[6])))
        elif tag == "region":
            t, m = int(rest[0]), int(rest[1])
            vals = np.array([float(x) for x in rest[2:]])
            regions[t] = RateRegion(vals.reshape(m, num_users))
        else:
            raise ConfigError(f"unknown record {tag!r}")
    if num_users is None or horizon is None or sorted(regions) != list(range(horizon)):
        raise ConfigError("instance file is missing users, horizon or some region records")
    return Instance(num_users, tuple(jobs), tuple(regions[t] for t in range(horizon)))


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(dump_instance(instance))


def read_instance(path) -> Instance:
    return load_instance(Path(path).read_text())


def tiny_instance(seed: int, horizon: int = 3, num_users: int = 2, num_jobs: int = 3,
                  num_vertices: int = 3, step: float = 0.1) -> Instance:
    """Small instance with sizes and vertex coordinates on a ``step`` grid.

    Sized to stay inside the brute-force limits.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    jobs = []
    for j in range(num_jobs):
        a = int(rng.integers(0, horizon))
        d = int(rng.integers(a, horizon))
        size = step * int(rng.integers(5, 21))  # 0.5 .. 2.0
        jobs.append(Job(j, a, d, size, PowerUtility(float(rng.uniform(0.01, 1.0)),
                                                    float(rng.uniform(0.01, 0.99))),
                        int(rng.integers(0, num_users))))
    regions = tuple(
        RateRegion(step * rng.integers(0, int(round(1 / step)) + 1, size=(num_vertices, num_users)))
        for _ in range(horizon)
    )
    return Instance(num_users, tuple(jobs), regions)
