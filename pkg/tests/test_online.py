import dataclasses
import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dosched.numerics import PowerUtility, gradient, value
from dosched.online import (
    ActiveJobs,
    ConvergenceError,
    SchedulerState,
    apply_decision,
    beta_update,
    competitive_bound,
    compute_dual,
    compute_primal,
    constant_c,
    do_step,
    feasibility_scale,
    lightweight_do_step,
    solve_slot,
)
from dosched.rate_region import RateRegion, contains, sample_region
from dosched.runner import run_instance, run_online
from dosched.workload import Instance, Job, JobTable, ScenarioConfig, generate_instance


def _setup(jobs, n_users, f_max=0.5):
    table = JobTable.from_jobs(jobs)
    return table, SchedulerState.initial(table, n_users, f_max)


def test_constant_and_bound():
    assert constant_c(1.0) == 2.0
    assert abs(constant_c(1e-4) - math.e) < 1e-3
    assert constant_c(0.0) == math.e
    assert competitive_bound(constant_c(1e-12)) == pytest.approx(3.0 + 1.0 / (math.e - 1.0), abs=1e-9)
    assert competitive_bound(math.e) == pytest.approx(3.58198, abs=1e-5)
    with pytest.raises(ValueError):
        constant_c(-0.1)


def test_schedulers_never_see_deadlines():
    names = {f.name for f in dataclasses.fields(ActiveJobs)}
    assert "deadline" not in names and "arrival" not in names


def test_no_active_jobs():
    table, state = _setup((Job(0, 5, 6, 1.0, PowerUtility(1.0, 0.5), 0),), 1)
    jobs = ActiveJobs.at(table, 0)
    region = RateRegion([[1.0]])
    for step in (do_step, lightweight_do_step):
        d = step(state, jobs, region)
        assert len(d.rates) == 0 and d.gain == 0.0


@pytest.mark.parametrize("rate, size", [(0.4, 1.0), (3.0, 1.0)])
def test_single_job_takes_full_rate_up_to_its_cap(rate, size):
    table, state = _setup((Job(0, 0, 3, size, PowerUtility(0.7, 0.4), 0),), 2, f_max=0.5)
    region = RateRegion([[rate, 0.2], [0.1, 1.0]])
    d = do_step(state, ActiveJobs.at(table, 0), region)
    assert d.rates[0] == pytest.approx(min(rate, size * 1.5), rel=1e-9)


def test_fully_served_job_gets_nothing_more():
    inst = Instance(1, (Job(0, 0, 9, 1.0, PowerUtility(1.0, 0.5), 0),), tuple(RateRegion([[0.3]]) for _ in range(10)))
    res = run_instance(inst, "do", f_max=0.3)
    served = 0.0
    for d in res.decisions:
        if served >= 1.0:
            assert d.rates.sum() <= 1e-9
        served += d.rates.sum()
    assert res.state.served[0] >= 1.0 - 1e-9
    assert res.state.beta[0] >= res.state.alpha[0] - 1e-12


def test_lightweight_gives_user_rate_to_best_job():
    jobs = (Job(0, 0, 2, 5.0, PowerUtility(1.0, 0.5), 0), Job(1, 0, 2, 5.0, PowerUtility(1.0, 0.5), 0))
    table, state = _setup(jobs, 1)
    state.alpha[:] = [3.0, 1.5]
    d = lightweight_do_step(state, ActiveJobs.at(table, 0), RateRegion([[2.0]]))
    np.testing.assert_allclose(d.rates, [2.0, 0.0])
    state.alpha[:] = [1.5, 1.5]  # tie: lowest id
    d = lightweight_do_step(state, ActiveJobs.at(table, 0), RateRegion([[2.0]]))
    np.testing.assert_allclose(d.rates, [2.0, 0.0])
    state.beta[:] = [2.0, 1.5]  # alpha <= beta everywhere
    d = lightweight_do_step(state, ActiveJobs.at(table, 0), RateRegion([[2.0]]))
    np.testing.assert_allclose(d.rates, [0.0, 0.0])


def test_lightweight_first_slot_weights_are_initial_gradients():
    jobs = (Job(0, 0, 2, 5.0, PowerUtility(0.5, 0.5), 0), Job(1, 0, 2, 5.0, PowerUtility(0.5, 0.5), 1))
    table, state = _setup(jobs, 2)
    np.testing.assert_allclose(state.alpha, gradient(table.a, table.psi, table.lin, 0.0))
    # vertex (1, 0) scores 0.5*g0 < vertex (0, 0.8) scores ... with equal g0 pick the larger rate
    d = lightweight_do_step(state, ActiveJobs.at(table, 0), RateRegion([[1.0, 0.0], [0.0, 0.8]]))
    np.testing.assert_allclose(d.rates, [1.0, 0.0])


def test_beta_update_by_hand():
    u = PowerUtility(0.8, 0.3)
    table, state = _setup((Job(0, 0, 3, 4.0, u, 0),), 1, f_max=0.25)
    jobs = ActiveJobs.at(table, 0)
    region = RateRegion([[1.0]])
    zero = dataclasses.replace(do_step(state, jobs, region), rates=np.zeros(1))
    np.testing.assert_array_equal(beta_update(state, table, zero), state.beta)
    d = do_step(state, jobs, region)
    x = d.rates[0]
    expect = u.grad(x) * x / ((state.C - 1.0) * 4.0)
    assert beta_update(state, table, d)[0] == pytest.approx(expect, rel=1e-13)
    # against the geometric lower bound it linearizes
    lower = u.grad(x) * (state.C ** (x / 4.0) - 1.0) / (state.C - 1.0)
    assert expect >= lower - 1e-15
    assert expect == pytest.approx(lower, rel=x / 4.0)


def test_beta_after_full_service_dominates_gradient():
    inst = Instance(1, (Job(0, 0, 19, 2.0, PowerUtility(0.6, 0.7), 0),), tuple(RateRegion([[0.35]]) for _ in range(20)))
    res = run_instance(inst, "lightweight")
    assert res.state.served[0] >= 2.0
    assert res.state.beta[0] >= gradient(0.6, 0.7, 0.0, res.state.served[0])


def test_primal_objective_examples():
    jobs = (Job(0, 0, 1, 2.0, PowerUtility(1.0, 0.5), 0), Job(1, 0, 1, 3.0, PowerUtility(0.5, 0.2), 1))
    table, state = _setup(jobs, 2)
    assert compute_primal(state, table) == 0.0
    state.served[:] = [2.0, 1.0]
    assert compute_primal(state, table) == pytest.approx(jobs[0].utility.eval(2.0) + jobs[1].utility.eval(1.0))


def test_dual_without_jobs_is_zero():
    table, state = _setup((), 1)
    assert compute_dual(state, table, (RateRegion([[1.0]]),)) == 0.0


def _slot_problem(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    J = int(rng.integers(1, 6))
    region = sample_region(n, int(rng.integers(1, 6)), 4.0, rng)
    jobs = tuple(
        Job(j, 0, 1, float(rng.uniform(5, 25)), PowerUtility(float(rng.uniform(0.01, 1)), float(rng.uniform(0.01, 0.99))),
            int(rng.integers(0, n)))
        for j in range(J)
    )
    table = JobTable.from_jobs(jobs)
    state = SchedulerState.initial(table, n, 0.8)
    state.served[:] = rng.uniform(0, 20, J)
    state.beta[:] = rng.uniform(0, 0.3, J) * gradient(table.a, table.psi, table.lin, state.served)
    return table, state, region


def _reference_slot(table, state, region, cap):
    """The same slot program through cvxpy (exponent cone form)."""
    J, n = len(table), state.num_users
    x = cp.Variable(J, nonneg=True)
    w = cp.Variable(region.vertices.shape[0], nonneg=True)
    e = 1.0 - table.psi
    base = 0.1 + state.served
    terms = [table.a[j] * base[j] ** e[j] / e[j] * cp.power(1 + x[j] / base[j], e[j]) for j in range(J)]
    obj = cp.sum(cp.hstack(terms)) - (state.beta - table.lin) @ x
    users = np.zeros((n, J))
    users[table.user, np.arange(J)] = 1.0
    cons = [x <= cap, users @ x <= region.vertices.T @ w, cp.sum(w) <= 1]
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return x.value


def _phi(table, state, x):
    s0 = state.served
    return float(np.sum(value(table.a, table.psi, table.lin, s0 + x) - value(table.a, table.psi, table.lin, s0)) - state.beta @ x)


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_slot_solution_matches_independent_conic_solve(seed):
    table, state, region = _slot_problem(seed)
    d = do_step(state, ActiveJobs.at(table, 0), region)
    cap = np.maximum(table.size * 1.8 - state.served, 0.0)
    ref = _reference_slot(table, state, region, cap)
    assert contains(region, d.user_rates)
    assert np.all(d.rates <= cap + 1e-12)
    assert _phi(table, state, d.rates) >= _phi(table, state, ref) - 1e-6 * (1 + abs(_phi(table, state, ref)))


def test_convergence_error_carries_residual():
    # two identical users on the unit simplex: the optimum is the edge midpoint,
    # so the starting vertex is not optimal
    jobs = tuple(Job(j, 0, 1, 10.0, PowerUtility(1.0, 0.5), j) for j in range(2))
    table, state = _setup(jobs, 2)
    region = RateRegion([[1.0, 0.0], [0.0, 1.0]])
    active = ActiveJobs.at(table, 0)
    args = (active, region, 2, state.served[active.index], state.beta[active.index], np.full(2, 1e9), 0)
    with pytest.raises(ConvergenceError) as info:
        solve_slot(*args, max_iter=0)
    assert info.value.residual > 0
    d = solve_slot(*args)
    np.testing.assert_allclose(d.rates, [0.5, 0.5], rtol=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 10**6), st.sampled_from(["do", "lightweight"]))
def test_audited_runs_are_clean(seed, alg):
    inst = generate_instance(ScenarioConfig(seed=seed, horizon=30))
    res = run_instance(inst, alg)
    assert res.monitor.total == 0, [str(v) for v in res.monitor.violations]
    assert res.primal <= res.dual + 1e-9 * max(1.0, res.primal)
    if alg == "do":
        assert res.dual <= res.primal * res.bound + 1e-6 * res.primal
    # invariants of the final state
    tab = inst.table
    assert np.all(res.state.beta >= 0) and np.all(res.state.alpha >= 0)
    assert np.all(res.state.served <= tab.size * (1 + res.f_max) + 1e-9)
    np.testing.assert_allclose(res.state.alpha, gradient(tab.a, tab.psi, tab.lin, res.state.served), rtol=1e-12)


def test_beta_is_nondecreasing_along_a_run():
    inst = generate_instance(ScenarioConfig(seed=3, horizon=40))
    table = inst.table
    state = SchedulerState.initial(table, inst.num_users, inst.f_max)
    for t, region in enumerate(inst.regions):
        prev = state.beta.copy()
        apply_decision(state, table, do_step(state, ActiveJobs.at(table, t), region))
        assert np.all(state.beta >= prev)


def test_feasibility_scaling():
    inst = generate_instance(ScenarioConfig(seed=8, horizon=60, arrival_prob=0.5))
    res = run_instance(inst, "do")
    scaled = feasibility_scale(res.decisions, res.f_max, inst.table)
    totals = np.zeros(len(inst.table))
    for d in scaled:
        totals[d.index] += d.rates
    assert np.all(totals <= inst.table.size + 1e-9)
    gain = sum(d.gain for d in scaled)
    assert gain >= (1 - res.f_max) * res.primal - 1e-9
    # identity in the limit
    same = feasibility_scale(res.decisions, 0.0, inst.table)
    assert sum(d.gain for d in same) == pytest.approx(res.primal, rel=1e-12)


def test_scaling_an_overshoot_of_exactly_f_max():
    f = 0.4
    jobs = (Job(0, 0, 0, 1.0, PowerUtility(1.0, 0.5), 0),)
    table = JobTable.from_jobs(jobs)
    res = run_online(table, (RateRegion([[1.4]]),), 1, "do", f_max=f)
    assert res.state.served[0] == pytest.approx(1.4)
    (d,) = feasibility_scale(res.decisions, f, table)
    assert d.rates[0] == pytest.approx((1 - f * f) * 1.0)
