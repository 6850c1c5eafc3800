import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adfslab.adfs import select_parameters
from adfslab.graph import augment, build_topology, single_node, spectral_quantities
from adfslab.problem import synth_classification
from adfslab.schedule import (comm_load, estimate_throughput, inverse_cdf_draws,
                              sample_schedule, simulate_events, simulate_time)

A, B, C, D = range(4)


def grid_plan(n=4, m=5, **over):
    prob = synth_classification(0, n, m, 3)
    aug = augment(build_topology("grid2d" if n != 8 else "path", n), prob.L, prob.sigma)
    sp = spectral_quantities(aug)
    return aug, select_parameters(aug, sp, prob.summary(), overrides=over or None)


event_lists = st.lists(
    st.one_of(st.tuples(st.integers(0, 4)),
              st.tuples(st.integers(0, 4), st.integers(0, 4)).filter(lambda e: e[0] != e[1])),
    max_size=40)


# ---- sampling


def test_draws_are_deterministic():
    p = [0.2, 0.5, 0.3]
    assert np.array_equal(inverse_cdf_draws(p, 100, 4), inverse_cdf_draws(p, 100, 4))
    assert not np.array_equal(inverse_cdf_draws(p, 100, 4), inverse_cdf_draws(p, 100, 5))
    assert inverse_cdf_draws(p, 0, 4).size == 0


def test_draw_frequencies():
    p = np.array([0.05, 0.0, 0.45, 0.2, 0.3])
    t = 100_000
    counts = np.bincount(inverse_cdf_draws(p, t, 0), minlength=5)
    assert counts[1] == 0
    se = np.sqrt(t * p * (1 - p))
    assert np.all(np.abs(counts - t * p) <= 4 * se)


def test_draws_reject_bad_input():
    with pytest.raises(ValueError):
        inverse_cdf_draws([0.5, -0.1], 3, 0)
    with pytest.raises(ValueError):
        inverse_cdf_draws([1.0], -1, 0)


def test_sample_schedule_uses_the_shared_draws():
    aug, plan = grid_plan()
    sch = sample_schedule(plan, 50, 3)
    assert sch.t == 50 and sch.n_comm == aug.E
    assert np.array_equal(sch.events, inverse_cdf_draws(plan.p, 50, 3))


# ---- clock


def test_four_node_example():
    tr = simulate_events([(A, C), (B, D), (A, B), (D,), (C, D)], 4, 2.0)
    assert tr.finish.tolist() == [2.0, 2.0, 4.0, 3.0, 5.0]
    # C finishes at 2 but waits for D until 3
    assert tr.start[-1] == 3.0
    assert tr.T == 5.0
    assert tr.availability.tolist() == [4.0, 4.0, 5.0, 5.0]


def test_local_only_and_empty_schedules():
    assert simulate_events([(0,)] * 7, 1, 3.0).T == 7.0
    assert simulate_events([], 3, 3.0).T == 0.0
    with pytest.raises(ValueError):
        simulate_events([(0, 1, 2)], 3, 1.0)
    with pytest.raises(ValueError):
        simulate_events([(0,)], 1, -1.0)


@given(event_lists, st.floats(0, 5))
def test_clock_invariants(events, tau):
    tr = simulate_events(events, 5, tau)
    busy = np.zeros(5)
    for e, ev in enumerate(events):
        # an event starts only after every participant is free
        assert tr.start[e] >= max(busy[list(ev)])
        busy[list(ev)] = tr.finish[e]
    assert tr.T <= len(events) * (tau + 1)
    assert np.all(np.diff(tr.t_max) >= 0)
    for k in range(len(events)):
        assert simulate_events(events[:k], 5, tau).T == (tr.t_max[k - 1] if k else 0.0)


@given(event_lists, st.floats(0, 5))
def test_swapping_disjoint_neighbours_keeps_the_time(events, tau):
    base = simulate_events(events, 5, tau)
    for e in range(len(events) - 1):
        if not set(events[e]) & set(events[e + 1]):
            swapped = events[:e] + [events[e + 1], events[e]] + events[e + 2:]
            assert simulate_events(swapped, 5, tau).T == base.T


def test_schedule_time_on_augmented_graph():
    aug, plan = grid_plan()
    sch = sample_schedule(plan, 200, 1)
    tr = simulate_time(sch, aug, 2.0)
    assert len(tr.finish) == 200
    local = tr.kind == "local"
    np.testing.assert_array_equal(tr.finish[local] - tr.start[local], 1.0)
    np.testing.assert_array_equal(tr.finish[~local] - tr.start[~local], 2.0)


def test_timing_csv(tmp_path):
    tr = simulate_events([(A, C), (D,)], 4, 2.0)
    tr.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["event_index", "edge_kind", "k", "l", "start", "finish"]
    assert rows[1] == ["0", "comm", "0", "2", "0.0", "2.0"]
    assert rows[2] == ["1", "local", "3", "3", "0.0", "1.0"]


# ---- throughput


def test_single_machine_throughput_constant():
    prob = synth_classification(0, 1, 6, 3)
    aug = augment(single_node(), prob.L, prob.sigma)
    plan = select_parameters(aug, spectral_quantities(aug), prob.summary())
    rep = estimate_throughput(plan, aug, 5.0, t=500, trials=3)
    assert rep.C == 1.0 and rep.p_comm_max == 0.0 and rep.warning is None


def test_grid_throughput_constant():
    aug, plan = grid_plan(16, 20)
    rep = estimate_throughput(plan, aug, 5.0, t=5000, trials=4)
    assert rep.C < 24 and rep.below_24 and rep.hypothesis_ok
    assert rep.p_comm_max == pytest.approx(comm_load(plan.p, aug))


def test_communication_heavy_regime_is_flagged():
    aug, plan = grid_plan(8, 10, p_comm=0.9)
    tau = 0.01
    rep = estimate_throughput(plan, aug, tau, t=10_000, trials=5)
    assert not rep.hypothesis_ok and "violated" in rep.warning
    predicted = (rep.p_comp + 2 * tau * rep.p_comm_max) / aug.n
    assert rep.mean_time_per_iter / predicted > 1.5


def test_throughput_rejects_bad_sizes():
    aug, plan = grid_plan()
    with pytest.raises(ValueError):
        estimate_throughput(plan, aug, 1.0, t=0)
