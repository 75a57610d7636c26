import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dosched.numerics import PowerUtility
from dosched.rate_region import RateRegion
from dosched.runner import ALGORITHMS, run_instance
from dosched.workload import (
    ConfigError,
    FrameConfig,
    Job,
    JobClass,
    JobTable,
    ScenarioConfig,
    dump_instance,
    fig3_config,
    generate_frames,
    generate_instance,
    load_instance,
    measure_f_max,
    read_instance,
    save_instance,
    tiny_instance,
)


def test_job_validation():
    u = PowerUtility(1.0, 0.5)
    with pytest.raises(ConfigError):
        Job(0, 3, 2, 1.0, u, 0)
    with pytest.raises(ConfigError):
        Job(0, 0, 2, 0.0, u, 0)
    j = Job(0, 2, 4, 1.0, u, 0)
    assert [j.active(t) for t in range(6)] == [False, False, True, True, True, False]


@pytest.mark.parametrize("kw", [dict(arrival_prob=1.5), dict(d_max=1), dict(size_range=(5, 1)),
                                dict(psi_range=(0.0, 0.5)), dict(psi_range=(0.5, 1.0)), dict(num_users=0)])
def test_scenario_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_zero_arrival_probability_gives_no_jobs_and_no_reward():
    inst = generate_instance(ScenarioConfig(arrival_prob=0.0, seed=4))
    assert inst.jobs == () and inst.horizon == 100
    for alg in ALGORITHMS:
        assert run_instance(inst, alg).primal == 0.0


def test_generation_is_deterministic():
    a = generate_instance(ScenarioConfig(seed=11))
    b = generate_instance(ScenarioConfig(seed=11))
    assert dump_instance(a) == dump_instance(b)
    assert dump_instance(a) != dump_instance(generate_instance(ScenarioConfig(seed=12)))


def test_arrival_probability_leaves_channels_alone():
    a = generate_instance(ScenarioConfig(seed=5, arrival_prob=0.2))
    b = generate_instance(ScenarioConfig(seed=5, arrival_prob=0.8))
    assert a.regions == b.regions


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.integers(2, 12))
def test_generated_jobs_respect_the_scenario(seed, p, d_max):
    cfg = ScenarioConfig(seed=seed, arrival_prob=p, d_max=d_max, horizon=30)
    inst = generate_instance(cfg)
    for j in inst.jobs:
        assert 5.0 <= j.size <= 25.0
        assert 0 <= j.arrival <= j.deadline <= 29
        assert j.deadline - j.arrival + 1 <= d_max
        assert 0.01 <= j.utility.v <= 1.0 and 0.01 <= j.utility.psi <= 0.99
    assert inst.f_max < 1.0  # rate caps of 4 against sizes of at least 5


def test_measured_f_max_for_the_default_scenario():
    for seed in range(1, 6):
        inst = generate_instance(ScenarioConfig(seed=seed))
        assert 0.0 < inst.f_max <= 4.0 / 5.0


def test_f_max_only_looks_inside_activity_windows():
    u = PowerUtility(1.0, 0.5)
    jobs = (Job(0, 1, 1, 2.0, u, 0),)
    regions = (RateRegion([[10.0]]), RateRegion([[1.0]]), RateRegion([[10.0]]))
    assert measure_f_max(JobTable.from_jobs(jobs), regions) == 0.5


def test_job_table_reweighting():
    jobs = (Job(0, 0, 1, 1.0, PowerUtility(0.5, 0.3), 1), Job(1, 0, 1, 1.0, PowerUtility(0.2, 0.6), 0))
    tab = JobTable.from_jobs(jobs, scale=0.1, queue=[2.0, 3.0])
    np.testing.assert_allclose(tab.a, [0.05, 0.02])
    np.testing.assert_allclose(tab.lin, [3.0, 2.0])
    np.testing.assert_array_equal(tab.active_mask(1), [True, True])
    np.testing.assert_array_equal(tab.active_mask(2), [False, False])


def test_text_format_round_trip(tmp_path):
    inst = generate_instance(ScenarioConfig(seed=2, horizon=15))
    path = tmp_path / "inst.txt"
    save_instance(inst, path)
    back = read_instance(path)
    assert dump_instance(back) == dump_instance(inst)
    assert back.num_users == inst.num_users and len(back.jobs) == len(inst.jobs)
    np.testing.assert_allclose(back.table.size, inst.table.size, rtol=1e-11)


@pytest.mark.parametrize("text", ["", "hello\n", "dosched-instance 1\nusers 2\n", "dosched-instance 1\nusers 1\nhorizon 1\nbogus 1\n"])
def test_malformed_instance_files(text):
    with pytest.raises(ConfigError):
        load_instance(text)


def test_tiny_instance_is_on_the_grid():
    inst = tiny_instance(3)
    for j in inst.jobs:
        assert 0.5 <= j.size <= 2.0
        assert abs(j.size * 10 - round(j.size * 10)) < 1e-9
    for r in inst.regions:
        assert np.allclose(r.vertices * 10, np.round(r.vertices * 10))


def _one_class_config(**kw):
    base = dict(frame_length=4, num_frames=1, classes=(JobClass(4, 2.0, 0.5, 0.5, 0),),
                region_set=(RateRegion([[1.0]]),), targets=(0.0,))
    base.update(kw)
    return FrameConfig(**base)


def test_frame_config_validation():
    with pytest.raises(ConfigError):
        _one_class_config(classes=(JobClass(5, 1.0, 0.5, 0.5, 0),))
    with pytest.raises(ConfigError):
        _one_class_config(targets=(0.1, 0.1))
    with pytest.raises(ConfigError):
        _one_class_config(V=0.0)


def test_single_frame_reduces_to_a_plain_instance():
    frames = list(generate_frames(_one_class_config()))
    assert len(frames) == 1
    inst = frames[0].instance
    assert inst.horizon == 4 and len(inst.jobs) == 1
    assert inst.jobs[0].arrival == 0 and inst.jobs[0].deadline == 3


def test_frame_regions_are_uniform_over_the_set():
    regions = tuple(RateRegion([[float(i + 1)]]) for i in range(4))
    cfg = _one_class_config(region_set=regions, num_frames=2000, seed=3)
    counts = np.zeros(4)
    for f in generate_frames(cfg):
        for r in f.instance.regions:
            counts[int(r.vertices[0, 0]) - 1] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.25) < 0.02)


def test_frame_job_bound():
    classes = tuple(JobClass(2, 1.0, 0.5, 0.5, 0) for _ in range(5))
    cfg = _one_class_config(frame_length=2, classes=classes, num_frames=20, max_jobs=2)
    assert all(len(f.instance.jobs) <= 2 for f in generate_frames(cfg))


def test_asymmetric_scenario_shape():
    cfg = fig3_config(seed=1, num_frames=10)
    assert cfg.num_users == 5
    assert cfg.targets == (0.045, 0.0, 0.0, 0.0, 0.0)
    best = np.mean([r.max_rates for r in cfg.region_set], axis=0) * cfg.frame_length
    np.testing.assert_allclose(best, [0.05, 0.5, 0.5, 0.5, 0.5], rtol=1e-12)
    assert all(c.deadline <= cfg.frame_length for c in cfg.classes)
