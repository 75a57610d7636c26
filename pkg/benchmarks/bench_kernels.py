"""Per-slot kernel timings, numba against pure numpy, on real scheduler inputs.

Slot problems are recorded from full DO runs on a few generated
instances and then replayed through both backends. Slots that go to the
interior-point fallback are skipped since that path is shared.

    python benchmarks/bench_kernels.py --seeds 5 --repeat 3
"""
import argparse
import time

import numpy as np

from dosched import kernels
from dosched.kernels import _nb, _np, conic
from dosched.runner import run_instance
from dosched.workload import ScenarioConfig, generate_instance


def record(seeds, p):
    cases = []
    real = kernels.slot_solve

    def spy(verts, users, n_users, a, psi, lin, beta, s0, cap, tol=1e-10, max_iter=500):
        args = [np.ascontiguousarray(v, dtype=np.float64) for v in (a, psi, lin, beta, s0, cap)]
        users = np.asarray(users, dtype=np.int64)
        if not conic.kinked(verts, users, n_users, *args):
            cases.append((verts, users, n_users, *args))
        return real(verts, users, n_users, a, psi, lin, beta, s0, cap, tol, max_iter)

    kernels.slot_solve = spy
    try:
        for s in range(1, seeds + 1):
            run_instance(generate_instance(ScenarioConfig(seed=s, arrival_prob=p)), "do", check=False)
    finally:
        kernels.slot_solve = real
    return cases


def time_numpy(cases):
    out = []
    for verts, users, n, *args in cases:
        out.append(_np.slot_solve(verts, users, n, *args, 1e-10, 500)[0])
    return out


def time_numba(cases):
    out = []
    for verts, users, n, *args in cases:
        order, ptr = kernels.user_csr(users, n)
        out.append(_nb.slot_solve(verts, order, ptr, *args, 1e-10, 500)[0])
    return out


def best_of(fn, cases, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn(cases)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--p", type=float, default=0.3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = record(args.seeds, args.p)
    time_numba(cases[:1])  # compile outside the timed region

    t_np, x_np = best_of(time_numpy, cases, args.repeat)
    t_nb, x_nb = best_of(time_numba, cases, args.repeat)
    diff = max((float(np.max(np.abs(a - b))) for a, b in zip(x_np, x_nb) if len(a)), default=0.0)

    print(f"slots        {len(cases)}")
    print(f"numpy        {t_np:.3f} s  ({1e6 * t_np / len(cases):.1f} us/slot)")
    print(f"numba        {t_nb:.3f} s  ({1e6 * t_nb / len(cases):.1f} us/slot)")
    print(f"speedup      {t_np / t_nb:.1f}x")
    print(f"max |dx|     {diff:.2e}")


if __name__ == "__main__":
    main()
