"""Command line: ``dosched run|sweep|validate|replay``.

Output goes under ``$DOSCHED_OUT`` (default ``./dosched-out``). Exit codes:
0 success, 1 bad input, 2 invariant violation, 3 solver failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .offline import SolverError
from .online import ConvergenceError
from .runner import ALGORITHMS, fmt, run_instance, write_trace
from .workload import ConfigError, read_instance

EXIT_OK, EXIT_INPUT, EXIT_VIOLATION, EXIT_SOLVER = 0, 1, 2, 3


def _print_table(rows):
    if not rows:
        return
    header = list(dict.fromkeys(h for r in rows for h in r))
    print(",".join(header))
    for r in rows:
        print(",".join(fmt(r.get(h, "")) for h in header))


def _values(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if part:
            out.append(int(part) if part.lstrip("-").isdigit() else float(part))
    return out


def cmd_run(args):
    spec = harness.read_spec(args.spec)
    res = harness.run_experiment(spec)
    _print_table(res.table)
    print(f"wrote {res.outdir}")


def cmd_sweep(args):
    spec = harness.read_spec(args.spec)
    rows = harness.sweep(spec, args.param, _values(args.values))
    _print_table(rows)


def cmd_validate(args):
    spec = harness.read_spec(args.spec) if args.spec else None
    checks = harness.validate(spec)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_replay(args):
    inst = read_instance(args.instance)
    res = run_instance(inst, args.algo, check=True, trace=True)
    out = harness.output_root() / "replay"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(args.instance).stem}_{args.algo}.csv"
    write_trace(res, path)
    for k, v in res.summary().items():
        print(f"{k}={fmt(v)}")
    if res.monitor and res.monitor.total:
        for v in res.monitor.violations:
            print(v, file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dosched", description="Deadline-oblivious scheduling experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run every (seed, algorithm) cell of a spec")
    r.add_argument("spec")
    r.set_defaults(fn=cmd_run)
    s = sub.add_parser("sweep", help="rerun a spec over values of one parameter")
    s.add_argument("spec")
    s.add_argument("--param", required=True, choices=sorted(harness.SWEEPABLE))
    s.add_argument("--values", required=True, help="comma separated")
    s.set_defaults(fn=cmd_sweep)
    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("spec", nargs="?")
    v.set_defaults(fn=cmd_validate)
    y = sub.add_parser("replay", help="run one algorithm on a saved instance")
    y.add_argument("instance")
    y.add_argument("--algo", default="do", choices=ALGORITHMS)
    y.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args) or EXIT_OK
    except harness.InvariantViolation as exc:
        for seed, alg, msg in exc.report:
            print(f"seed {seed} {alg}: {msg}", file=sys.stderr)
        return EXIT_VIOLATION
    except (ConvergenceError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
