"""Experiment specs, orchestration, sweeps and the invariant suite.

A spec file is flat ``key=value`` text; dotted prefixes pick the section::

    mode = adversarial
    algorithms = do, lightweight, primal, greedy, edd
    seeds = 1..50
    output = fig2
    scenario.p = 0.3
    scenario.d_max = 10

Lists are comma separated and ``a..b`` expands to an inclusive integer
range. Everything written is CSV with a fixed header and 12 significant
digits, so the same spec always gives the same bytes.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .numerics import sample_utility, value
from .offline import brute_force_solve, offline_solve
from .online import beta_update, competitive_bound, constant_c
from .rate_region import linear_max, sample_region
from .runner import CHECKS, TRACE_FIELDS, Tolerances, fmt, run_instance, write_trace
from .stochastic import (
    POLICIES,
    lookahead_dominance,
    run_stochastic,
    stability_report,
    write_frames,
)
from .workload import ConfigError, ScenarioConfig, fig3_config, generate_instance, tiny_instance

OUTPUT_ENV = "DOSCHED_OUT"
ADVERSARIAL = ("do", "lightweight", "primal", "greedy", "edd", "offline")
SWEEPABLE = {"p": "scenario.arrival_prob", "D_max": "scenario.d_max", "V": "frames.V", "delta": "frames.delta"}

_ALIASES = {"scenario.p": "scenario.arrival_prob", "scenario.D_max": "scenario.d_max"}
_FRAME_KEYS = ("num_frames", "V", "frame_length", "num_regions", "num_vertices",
               "weak_target", "strong_target", "delta")


class SpecError(ConfigError):
    pass


class InvariantViolation(RuntimeError):
    """Some audited guarantee failed; ``report`` lists the offending checks."""

    def __init__(self, report: list):
        super().__init__(f"{len(report)} invariant violation(s)")
        self.report = report


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "dosched-out"))


@dataclass
class ExperimentSpec:
    mode: str
    algorithms: tuple
    seeds: tuple
    output: Path
    scenario: ScenarioConfig | None = None
    frames: dict = field(default_factory=dict)  # keyword arguments of fig3_config
    tolerances: Tolerances = field(default_factory=Tolerances)
    workers: int = 1
    dominance_frames: int = 0  # frames per seed checked against the lookahead, stochastic only

    def __post_init__(self):
        if not self.algorithms:
            raise SpecError("at least one algorithm is required")
        if not self.seeds:
            raise SpecError("at least one seed is required")
        if self.mode == "adversarial":
            allowed = ADVERSARIAL
            if self.scenario is None:
                self.scenario = ScenarioConfig()
        elif self.mode == "stochastic":
            allowed = POLICIES
            if not self.frames and self.scenario is not None:
                raise SpecError("stochastic mode needs frame.* settings, not scenario.*")
            bad = set(self.frames) - set(_FRAME_KEYS)
            if bad:
                raise SpecError(f"unknown frame settings {sorted(bad)}")
        else:
            raise SpecError(f"mode must be adversarial or stochastic, not {self.mode!r}")
        unknown = [a for a in self.algorithms if a not in allowed]
        if unknown:
            raise SpecError(f"algorithms {unknown} not available in {self.mode} mode; choose from {allowed}")

    def frame_config(self, seed: int):
        return fig3_config(seed=seed, **self.frames)


def _scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _ints(text: str) -> tuple:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _words(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def parse_pairs(text: str) -> dict:
    pairs = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {n}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        pairs[_ALIASES.get(key, key)] = val
    return pairs


def spec_from_pairs(pairs: dict) -> ExperimentSpec:
    pairs = dict(pairs)
    scen, frames, tol = {}, {}, {}
    scen_fields = {f.name: f for f in fields(ScenarioConfig)}
    tol_fields = {f.name for f in fields(Tolerances)}
    for key in [k for k in pairs if "." in k]:
        section, name = key.split(".", 1)
        val = pairs.pop(key)
        if section == "scenario":
            if name not in scen_fields:
                raise SpecError(f"unknown scenario setting {name!r}")
            parts = _words(val)
            scen[name] = tuple(float(p) for p in parts) if len(parts) > 1 else _scalar(val)
        elif section == "frame":
            frames[name] = _scalar(val)
        elif section == "tol":
            if name not in tol_fields:
                raise SpecError(f"unknown tolerance {name!r}")
            tol[name] = float(val)
        else:
            raise SpecError(f"unknown section {section!r}")
    known = {"mode", "algorithms", "seeds", "output", "workers", "dominance_frames"}
    extra = set(pairs) - known
    if extra:
        raise SpecError(f"unknown settings {sorted(extra)}")
    mode = pairs.get("mode", "adversarial")
    try:
        return ExperimentSpec(
            mode=mode,
            algorithms=_words(pairs.get("algorithms", "")),
            seeds=_ints(pairs.get("seeds", "1")),
            output=Path(pairs.get("output", "run")),
            scenario=ScenarioConfig(**scen) if (scen or mode == "adversarial") else None,
            frames=frames,
            tolerances=Tolerances(**tol),
            workers=int(pairs.get("workers", 1)),
            dominance_frames=int(pairs.get("dominance_frames", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from exc


def parse_spec(text: str) -> ExperimentSpec:
    return spec_from_pairs(parse_pairs(text))


def read_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


def with_value(spec: ExperimentSpec, param: str, val) -> ExperimentSpec:
    """Copy of ``spec`` with a sweep parameter set."""
    if param not in SWEEPABLE:
        raise SpecError(f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}")
    section, name = SWEEPABLE[param].split(".")
    if section == "scenario":
        if spec.mode != "adversarial":
            raise SpecError(f"{param} only applies to adversarial specs")
        return replace(spec, scenario=replace(spec.scenario, **{name: type(getattr(spec.scenario, name))(val)}))
    if spec.mode != "stochastic":
        raise SpecError(f"{param} only applies to stochastic specs")
    return replace(spec, frames={**spec.frames, name: float(val)})


# Running cells

ADV_FIELDS = ("seed", "algorithm", "P", "D", "ratio", "C", "F_max", "bound") + tuple(f"viol_{c}" for c in CHECKS)


def _adversarial_cell(spec: ExperimentSpec, seed: int, algorithm: str, outdir: Path):
    inst = generate_instance(replace(spec.scenario, seed=seed))
    path = outdir / f"trace_s{seed}_{algorithm}.csv"
    if algorithm == "offline":
        sol = offline_solve(inst.table, inst.regions, inst.num_users)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("algorithm",) + TRACE_FIELDS)
            for t, j in np.argwhere(sol.rates > 0):
                w.writerow(["offline", t, int(inst.table.ids[j]), fmt(sol.rates[t, j]), "", "", ""])
        ratio = sol.upper / sol.objective if sol.objective > 0 else 1.0
        row = {"seed": seed, "algorithm": algorithm, "P": sol.objective, "D": sol.upper, "ratio": ratio,
               "C": "", "F_max": inst.f_max, "bound": ""}
        row.update({f"viol_{c}": 0 for c in CHECKS})
        return row, []
    res = run_instance(inst, algorithm, check=True, tolerances=spec.tolerances, trace=True)
    write_trace(res, path)
    row = {"seed": seed, **res.summary()}
    found = [(seed, algorithm, str(v)) for v in (res.monitor.violations if res.monitor else [])]
    return row, found


STOCH_FIELDS = ("seed", "policy", "V", "frames", "avg_reward", "bound_holds", "queues_nonnegative", "violations")


def _stochastic_cell(spec: ExperimentSpec, seed: int, policy: str, outdir: Path):
    config = spec.frame_config(seed)
    run = run_stochastic(config, policy, check=True)
    write_frames(run, outdir / f"frames_s{seed}_{policy}.csv")
    _write_trajectory(run, outdir / f"plot_throughput_s{seed}_{policy}.csv")
    rep = stability_report(run, config)
    row = {"seed": seed, "policy": policy, "V": run.V, "frames": rep["frames"], "avg_reward": rep["avg_reward"],
           "bound_holds": int(rep["bound_holds"]), "queues_nonnegative": int(rep["queues_nonnegative"]),
           "violations": sum(f.violations for f in run.frames)}
    for n, (b, q) in enumerate(zip(rep["avg_served"], rep["queue_rate"])):
        row[f"b{n}"] = b
        row[f"qrate{n}"] = q
    found = []
    if not rep["bound_holds"]:
        found.append((seed, policy, "queue telescoping inequality failed"))
    if not rep["queues_nonnegative"]:
        found.append((seed, policy, "negative virtual queue"))
    if row["violations"]:
        found.append((seed, policy, f"{row['violations']} per-slot lemma violation(s)"))
    if spec.dominance_frames and policy in ("lfdo", "lfdo-lightweight"):
        alg = "lightweight" if policy == "lfdo-lightweight" else "do"
        for d in lookahead_dominance(config, algorithm=alg, num_frames=spec.dominance_frames):
            if d.margin < -1e-9 * (1.0 + abs(d.online)):
                found.append((seed, policy, f"lookahead dominance failed at frame {d.index}: margin {d.margin:.3e}"))
    return row, found


def _write_trajectory(run, path):
    """Running average of delivered traffic per user, one row per frame."""
    served = np.array([f.served for f in run.frames]).reshape(len(run.frames), len(run.targets))
    avg = np.cumsum(served, axis=0) / np.arange(1, len(served) + 1)[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [f"b{n}" for n in range(served.shape[1])])
        for k, row in enumerate(avg):
            w.writerow([k] + [fmt(x) for x in row])


def _cell(args):
    spec, seed, alg, outdir = args
    if spec.mode == "adversarial":
        return _adversarial_cell(spec, seed, alg, outdir)
    return _stochastic_cell(spec, seed, alg, outdir)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r.get(h, "")) for h in header])


def aggregate(rows: list, key: str) -> list:
    """Median and mean of every numeric column, per ``key`` value in first-seen order."""
    out = []
    for name in dict.fromkeys(r[key] for r in rows):
        group = [r for r in rows if r[key] == name]
        agg = {key: name, "n": len(group)}
        for col in group[0]:
            if col in (key, "seed"):
                continue
            vals = [r[col] for r in group if isinstance(r[col], (int, float, np.floating, np.integer))]
            if len(vals) != len(group):
                continue
            if col.startswith("viol") or col in ("bound_holds", "queues_nonnegative"):
                agg[col] = int(sum(vals))
            else:
                agg[f"median_{col}"] = float(np.median(vals))
                agg[f"mean_{col}"] = float(np.mean(vals))
        out.append(agg)
    return out


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    outdir: Path
    rows: list
    table: list
    violations: list


def run_experiment(spec: ExperimentSpec, outdir: Path | None = None, *, strict: bool = True) -> ExperimentResult:
    """Run every (seed, algorithm) cell, write traces, summary and aggregate.

    With ``strict`` a violated invariant raises :class:`InvariantViolation`
    after all files are written.
    """
    outdir = Path(outdir) if outdir is not None else output_root() / spec.output
    outdir.mkdir(parents=True, exist_ok=True)
    cells = [(spec, s, a, outdir) for s in spec.seeds for a in spec.algorithms]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    rows = [r for r, _ in results]
    found = [v for _, vs in results for v in vs]
    key = "algorithm" if spec.mode == "adversarial" else "policy"
    header = list(ADV_FIELDS if spec.mode == "adversarial" else STOCH_FIELDS)
    header += [c for c in rows[0] if c not in header]
    _write_rows(outdir / "summary.csv", header, rows)
    table = aggregate(rows, key)
    _write_rows(outdir / "aggregate.csv", list(table[0]), table)
    if found:
        with open(outdir / "violations.txt", "w") as fh:
            fh.writelines(f"seed {s} {a}: {msg}\n" for s, a, msg in found)
    result = ExperimentResult(spec, outdir, rows, table, found)
    if strict and found:
        raise InvariantViolation(found)
    return result


def sweep(spec: ExperimentSpec, param: str, values, outdir: Path | None = None, *, strict: bool = True) -> list:
    """One :func:`run_experiment` per value; returns aggregate rows tagged with the value.

    Also writes ``sweep_<param>.csv`` and one ``series_<param>_<alg>.csv``
    (x, median reward) per algorithm for plotting.
    """
    outdir = Path(outdir) if outdir is not None else output_root() / spec.output
    rows, found = [], []
    for val in values:
        sub = with_value(spec, param, val)
        res = run_experiment(sub, outdir / f"{param}={fmt(val)}", strict=False)
        found.extend(res.violations)
        for r in res.table:
            rows.append({param: val, **r})
    outdir.mkdir(parents=True, exist_ok=True)
    key = "algorithm" if spec.mode == "adversarial" else "policy"
    header = list(dict.fromkeys(h for r in rows for h in r))
    _write_rows(outdir / f"sweep_{param}.csv", header, rows)
    metric = "median_P" if spec.mode == "adversarial" else "median_avg_reward"
    for alg in spec.algorithms:
        series = [{"x": r[param], "y": r[metric]} for r in rows if r[key] == alg]
        _write_rows(outdir / f"series_{param}_{alg}.csv", ["x", "y"], series)
    if strict and found:
        raise InvariantViolation(found)
    return rows


# Invariant suite


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:<28} residual={self.residual:.3e} {self.detail}".rstrip()


def _numerics_checks(rng, samples=1000) -> list:
    worst = {"gradient_fd": 0.0, "conjugate_grid": 0.0, "complementary_pair": 0.0, "conjugate_lower": 0.0}
    grid = np.concatenate([[0.0], np.geomspace(1e-9, 1e6, 200_001)])
    for i in range(samples):
        u = sample_utility(rng)
        x = float(rng.uniform(0.0, 30.0))
        h = 1e-6 * (1.0 + x)
        fd = (u.eval(x + h) - u.eval(max(x - h, 0.0))) / (x + h - max(x - h, 0.0))
        worst["gradient_fd"] = max(worst["gradient_fd"], abs(fd - u.grad(x)) / (1.0 + abs(u.grad(x))))
        alpha = u.grad(x)
        pair = u.eval(x) + u.conjugate(alpha) - x * alpha
        worst["complementary_pair"] = max(worst["complementary_pair"], abs(pair) / (1.0 + abs(x * alpha)))
        worst["conjugate_lower"] = max(worst["conjugate_lower"], -(u.conjugate(alpha) + u.eval(x)))
        if i < 50:  # the grid infimum is the slow one
            a = float(rng.uniform(0.5, 1.0)) * u.grad(0.0)
            inf = float(np.min(a * grid - value(u.v, u.psi, 0.0, grid)))
            worst["conjugate_grid"] = max(worst["conjugate_grid"], abs(inf - u.conjugate(a)) / (1.0 + abs(inf)))
    tol = {"gradient_fd": 1e-6, "conjugate_grid": 1e-6, "complementary_pair": 1e-6, "conjugate_lower": 1e-12}
    return [Check(k, v <= tol[k], v) for k, v in worst.items()]


def _oracle_check(rng, trials=200) -> Check:
    from scipy.optimize import linprog

    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        region = sample_region(n, int(rng.integers(1, 7)), 1.0, rng)
        c = rng.normal(size=n)
        _, best = linear_max(region, c)
        m = region.vertices.shape[0]
        # max c.u over 0 <= u <= V^T w, w >= 0, sum w <= 1 (free disposal)
        A = np.block([[np.eye(n), -region.vertices.T], [np.zeros((1, n)), np.ones((1, m))]])
        b = np.r_[np.zeros(n), 1.0]
        lp = linprog(np.r_[-c, np.zeros(m)], A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        worst = max(worst, abs(best + lp.fun) / (1.0 + abs(best)))
    return Check("oracle_optimality", worst <= 1e-9, worst)


def _lemma_checks(spec: ExperimentSpec, beta_rule=None) -> list:
    scen = spec.scenario or ScenarioConfig()
    counts = {c: 0 for c in CHECKS}
    worst = {c: 0.0 for c in CHECKS}
    first = {}
    for seed in spec.seeds:
        inst = generate_instance(replace(scen, seed=seed))
        res = run_instance(inst, "do", check=True, tolerances=spec.tolerances, beta_rule=beta_rule)
        for c in CHECKS:
            counts[c] += res.monitor.counts[c]
            worst[c] = max(worst[c], res.monitor.worst[c])
            if res.monitor.counts[c] and c not in first:
                v = next((v for v in res.monitor.violations if v.check == c), None)
                first[c] = f"seed {seed}: {v if v else 'see counts'}"
    return [Check(c, counts[c] == 0, worst[c], first.get(c, "")) for c in CHECKS]


def _queue_check(seeds, num_frames=200) -> Check:
    bad, worst = [], 0.0
    for seed in seeds:
        config = fig3_config(seed=seed, num_frames=num_frames)
        run = run_stochastic(config, "lfdo")
        rep = stability_report(run)
        worst = max(worst, float(np.max(rep["queue_rate"])))
        if not (rep["bound_holds"] and rep["queues_nonnegative"]):
            bad.append(seed)
    return Check("queue_identities", not bad, worst, f"failed seeds {bad}" if bad else "")


def _brute_check(seeds) -> Check:
    worst, worst_gap = 0.0, 0.0
    for seed in seeds:
        inst = tiny_instance(seed)
        sol = offline_solve(inst.table, inst.regions, inst.num_users)
        brute = brute_force_solve(inst.table, inst.regions, inst.num_users)
        worst = max(worst, abs(sol.objective - brute.objective) / (1.0 + abs(sol.objective)))
        worst_gap = max(worst_gap, sol.gap / (1.0 + sol.objective))
    return Check("brute_force_agreement", worst <= 0.01 and worst_gap <= 1e-3, worst, f"max gap {worst_gap:.3e}")


def _constant_checks() -> list:
    c1 = abs(constant_c(1.0) - 2.0)
    c2 = abs(constant_c(1e-4) - math.e)
    c3 = abs(competitive_bound(constant_c(1e-9)) - (3.0 + 1.0 / (math.e - 1.0)))
    return [Check("constant_C", c1 == 0.0 and c2 <= 1e-3, max(c1, c2)), Check("limit_bound", c3 <= 1e-3, c3)]


def corrupted_beta(state, table, decision):
    """A deliberately broken dual update: half of what it should be."""
    beta = beta_update(state, table, decision)
    beta[decision.index] *= 0.5
    return beta


def validate(spec: ExperimentSpec | None = None, *, seed: int = 0) -> list:
    """The invariant suite. Returns one :class:`Check` per guarantee.

    The last check is a negative control: the lemma monitor must flag a run
    whose dual update was sabotaged.
    """
    spec = spec or ExperimentSpec("adversarial", ("do",), tuple(range(1, 101)), Path("validate"))
    rng = np.random.default_rng(seed)
    checks = _numerics_checks(rng) + _constant_checks() + [_oracle_check(rng)]
    checks += _lemma_checks(spec)
    checks.append(_brute_check(range(1, 21)))
    checks.append(_queue_check(spec.seeds[:3]))
    sabotaged = _lemma_checks(replace(spec, seeds=spec.seeds[:1]), beta_rule=corrupted_beta)
    lemma2 = next(c for c in sabotaged if c.name == "lemma2")
    checks.append(Check("negative_control_beta", not lemma2.passed, lemma2.residual, "lemma2 must fire"))
    return checks
