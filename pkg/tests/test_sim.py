import math
import time
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import linalg, optimize

from etcstab.analysis import event_log_offset, summarize, tilde_x_series
from etcstab.control import chi_coefficients
from etcstab.errors import PositivityError, ValidationError
from etcstab import sim
from etcstab.integrator import rk4_step
from etcstab.scenario import TriggerMode
from etcstab.sim import (
    SimState, accumulate, control_input, detc_trigger, measurement, measurements,
    phi_rate, phi_step, run, setc_instant_trigger, setc_integral_trigger, trigger_slack,
)

from conftest import CANONICAL_X0

CANONICAL_P0 = np.array([[-14, 4.6], [9, -8.8], [-17, 9.5], [12, -1]])


def perturbed_state(canonical_net, shift=10.0):
    """Freshly sampled canonical state with follower 1 moved afterwards."""
    state = SimState.initial(canonical_net, CANONICAL_X0, phi0=1.0)
    state.x = state.x.copy()
    state.x[0, 0] += shift
    return state


def test_measurement_canonical(canonical_net):
    state = SimState.initial(canonical_net, CANONICAL_X0)
    for i in range(4):
        assert_allclose(measurement(state, i), CANONICAL_P0[i], atol=1e-12)
    assert_allclose(measurements(canonical_net, state.x), CANONICAL_P0, atol=1e-12)
    assert_allclose(state.error(), 0.0)


def test_measurement_at_consensus_is_zero(canonical_net):
    state = SimState.initial(canonical_net, np.tile([3.0, -1.0], (6, 1)))
    for i in range(4):
        assert_allclose(measurement(state, i), 0.0)


def test_measurement_rejects_leader(canonical_net):
    state = SimState.initial(canonical_net, CANONICAL_X0)
    with pytest.raises(ValidationError):
        measurement(state, 4)


def test_control_input(canonical_net, canonical_design):
    state = SimState.initial(canonical_net, CANONICAL_X0)
    K = canonical_design.K
    assert_allclose(control_input(state, 2, K), -K @ CANONICAL_P0[2], atol=1e-12)
    assert_array_equal(control_input(state, 5, K), np.zeros(1))


def test_integral_trigger_silent_after_reset(canonical_net):
    state = SimState.initial(canonical_net, CANONICAL_X0)
    assert not any(setc_integral_trigger(state, i) for i in range(4))


def test_integral_trigger_never_fires_without_error(canonical_net):
    state = SimState.initial(canonical_net, CANONICAL_X0)
    h = 1e-2
    zeros = np.zeros(4)
    for step in range(1000):
        state.t = (step + 1) * h
        accumulate(state, h, zeros, zeros, np.full(4, 0.05), 1.0, 0.5)
        assert not any(setc_integral_trigger(state, i) for i in range(4))


def test_integral_trigger_firing_time(canonical_net):
    # |e|^2 = 1, k = 0, beta = 2, sigma = 1: fires where tau = 2 (1 - e^{-tau})
    state = SimState.initial(canonical_net, CANONICAL_X0)
    h = 1e-3
    ones, k = np.ones(4), np.zeros(4)
    fired_at = None
    for step in range(5000):
        state.t = (step + 1) * h
        accumulate(state, h, ones, ones, k, 2.0, 1.0)
        if setc_integral_trigger(state, 0):
            fired_at = state.t
            break
    expected = optimize.brentq(lambda tau: tau - 2.0 * (1.0 - math.exp(-tau)), 0.5, 3.0)
    assert expected == pytest.approx(1.594, abs=1e-3)
    assert fired_at is not None
    assert abs(fired_at - expected) <= 2 * h


def test_instant_trigger(canonical_net):
    state = perturbed_state(canonical_net)
    assert setc_instant_trigger(state, 0, 0.0, 0.0, 1.0)
    assert not setc_instant_trigger(state, 0, 0.0, 1e6, 1.0)
    # follower 3 does not listen to follower 1
    assert not setc_instant_trigger(state, 2, 0.0, 0.0, 1.0)


def test_dynamic_trigger(canonical_net):
    fresh = SimState.initial(canonical_net, CANONICAL_X0, phi0=1.0)
    assert not detc_trigger(fresh, 0, 0.05, 1.0, 0.5, 1e6)
    state = perturbed_state(canonical_net)
    # |e_1|^2 = 400 after the shift
    assert detc_trigger(state, 0, 0.0, 0.0, 1.0, 1.0)
    assert not detc_trigger(state, 0, 0.0, 0.0, 1.0, 1e-6)


def test_trigger_slack_rows_match_single_follower(canonical_net):
    state = perturbed_state(canonical_net, shift=3.0)
    P = measurements(canonical_net, state.x)
    k = np.array([0.1, 0.2, 0.3, 0.4])
    rows = trigger_slack(state.samples, P, k, 0.5, 2.0, 0.7)
    for i in range(4):
        single = trigger_slack(state.samples[i], measurement(state, i), k[i], 0.5, 2.0, 0.7)
        assert single == pytest.approx(rows[i], rel=1e-12)
    assert_allclose(phi_rate(np.ones(4), np.full(4, 2.0), np.full(4, 0.5), rows), -2.0 + 0.5 * rows)


@pytest.mark.parametrize("mode, rule", [
    (TriggerMode.SETC_INTEGRAL, "setc_integral_trigger"),
    (TriggerMode.SETC_INSTANT, "setc_instant_trigger"),
    (TriggerMode.DETC, "detc_trigger"),
])
def test_run_evaluates_public_rules(monkeypatch, short_canonical, canonical_design, mode, rule):
    calls = []

    def never(state, i, *args):
        calls.append(i)
        return False

    monkeypatch.setattr(sim, rule, never)
    trajectory = run(replace(short_canonical, mode=mode, T=0.05), canonical_design)
    assert trajectory.trigger_counts == [0, 0, 0, 0]
    assert sorted(set(calls)) == [0, 1, 2, 3]
    assert len(calls) == 4 * 50


def test_phi_step_pure_decay():
    h = 1e-2
    out = phi_step(np.array([3.0]), 0.0, h, np.array([2.0]), np.array([0.0]), lambda t: np.zeros(1))
    assert_allclose(out, 3.0 * math.exp(-2.0 * h), rtol=1e-10)


def test_phi_step_steady_state():
    phi = np.ones(2)
    for step in range(100):
        phi = phi_step(phi, step * 0.1, 0.1, np.ones(2), np.ones(2), lambda t: np.ones(2))
    assert_allclose(phi, 1.0, rtol=1e-12)


def test_phi_step_fourth_order():
    phi0 = 0.3

    def final_error(h):
        phi = np.array([phi0])
        steps = int(round(1.0 / h))
        for s in range(steps):
            phi = phi_step(phi, s * h, h, np.ones(1), np.ones(1), lambda t: np.array([math.sin(t)]))
        exact = (phi0 + 0.5) * math.exp(-1.0) + (math.sin(1.0) - math.cos(1.0)) / 2
        return abs(phi[0] - exact)

    ratio = final_error(0.1) / final_error(0.05)
    assert 12 < ratio < 20


def test_rk4_step_exponential_decay():
    y = np.array([1.0, 2.0])
    for s in range(10):
        y = rk4_step(lambda t, v: -v, s * 0.1, y, 0.1)
    assert_allclose(y, [math.exp(-1.0), 2 * math.exp(-1.0)], rtol=1e-5)


def test_phi_step_positivity():
    with pytest.raises(PositivityError):
        phi_step(np.ones(1), 0.0, 0.1, np.ones(1), np.ones(1), lambda t: np.array([-1000.0]))


def test_equilibrium_run_has_no_events(short_canonical, canonical_design):
    scenario = replace(short_canonical, initial_states=np.zeros((6, 2)), beta=0.0,
                       mode=TriggerMode.SETC_INSTANT)
    trajectory = run(scenario, canonical_design)
    assert trajectory.trigger_counts == [0, 0, 0, 0]
    assert trajectory.min_inter_event_time() == math.inf
    assert_array_equal(trajectory.states, 0.0)


def test_leaders_follow_free_dynamics(setc_run):
    scenario, trajectory = setc_run
    x_leaders = scenario.initial_states[4:]
    for index in range(0, len(trajectory.times), 300):
        t = trajectory.times[index]
        expected = x_leaders @ linalg.expm(scenario.A * t).T
        assert_allclose(trajectory.states[index, 4:], expected, atol=1e-8)
    assert_array_equal(trajectory.inputs[:, 4:], 0.0)


def test_inputs_are_held_between_events(short_canonical, canonical_design):
    trajectory = run(short_canonical, canonical_design)
    K = canonical_design.K
    assert len(trajectory.times) == short_canonical.steps + 1
    for i in range(4):
        for index in range(0, len(trajectory.times), 7):
            t = trajectory.times[index]
            assert_allclose(trajectory.inputs[index, i], -K @ trajectory.sample_at(i, t), atol=1e-12)


def test_event_samples_are_measurements(short_canonical, canonical_design):
    trajectory = run(short_canonical, canonical_design)
    h = short_canonical.h
    for agent_events in trajectory.events:
        assert agent_events[0].time == 0.0
        for event in agent_events:
            index = int(round(event.time / h))
            assert trajectory.times[index] == event.time
            P = measurements(short_canonical.net, trajectory.states[index])
            assert_allclose(event.sample, P[event.agent - 1], atol=1e-12)


@pytest.mark.parametrize("fixture", ["setc_run", "detc_run"])
def test_canonical_converges(request, canonical_design, fixture):
    scenario, trajectory = request.getfixturevalue(fixture)
    report = summarize(trajectory, scenario, canonical_design)
    assert not trajectory.diverged
    assert report.tilde_x_final <= 0.05 * report.tilde_x_initial
    assert report.converged
    assert report.hull_residual_final <= 1e-2


def test_canonical_run_time(detc_run, canonical_design):
    scenario, _ = detc_run
    start = time.perf_counter()
    run(scenario, canonical_design)
    assert time.perf_counter() - start < 30.0


def test_divergent_scenario_stops_at_guard(divergent_run, divergent_design):
    scenario, error = divergent_run
    trajectory = error.trajectory
    assert "diverged" in str(error)
    assert trajectory is not None and trajectory.diverged
    assert trajectory.end_time < scenario.T
    follower_norms = np.linalg.norm(trajectory.states[:, :4], axis=2).max(axis=1)
    assert follower_norms[-1] >= 10 * follower_norms[0]
    chi = chi_coefficients(divergent_design.grounded, scenario.net)
    deviation = np.linalg.norm(tilde_x_series(trajectory.states, chi), axis=1)
    assert np.all(np.isfinite(deviation))
    assert deviation.max() <= 10 * deviation[0]
    assert deviation[-1] < deviation[0]


@pytest.mark.parametrize("fixture", ["setc_run", "detc_run"])
def test_no_zeno(request, fixture):
    scenario, trajectory = request.getfixturevalue(fixture)
    assert trajectory.min_inter_event_time() >= scenario.h * (1 - 1e-9)
    assert all(count < scenario.steps for count in trajectory.trigger_counts)


def test_phi_stays_positive(detc_run):
    _, trajectory = detc_run
    assert np.all(trajectory.phi > 0)
    assert np.all(trajectory.phi_log_margin >= -1e-9)


def test_dynamic_rule_triggers_less(setc_run, detc_run):
    _, static = setc_run
    _, dynamic = detc_run
    for detc_count, setc_count in zip(dynamic.trigger_counts, static.trigger_counts):
        assert detc_count <= setc_count


def test_large_theta_recovers_static_rule(detc_run, canonical_design):
    scenario, _ = detc_run
    dynamic = replace(scenario, theta=1e6)
    static = replace(dynamic, mode=TriggerMode.SETC_INSTANT)
    a = run(dynamic, canonical_design)
    b = run(static, canonical_design)
    offset = event_log_offset([a.event_times(i) for i in range(4)], [b.event_times(i) for i in range(4)])
    assert offset <= 2 * scenario.h


def test_repeat_runs_are_identical(short_canonical, canonical_design):
    a = run(short_canonical, canonical_design)
    b = run(short_canonical, canonical_design)
    assert a.events == b.events
    assert_array_equal(a.states, b.states)
    assert_array_equal(a.phi, b.phi)


def test_grid_refinement(detc_run, canonical_design):
    coarse, trajectory = detc_run
    fine = replace(coarse, h=coarse.h / 2, decimation=2 * coarse.decimation)
    assert fine.T == 30.0
    a = summarize(trajectory, coarse, canonical_design)
    b = summarize(run(fine, canonical_design), fine, canonical_design)
    assert abs(a.tilde_x_final - b.tilde_x_final) < 0.01 * a.tilde_x_final


def test_gain_shape_mismatch(short_canonical, canonical_design):
    bad = replace(canonical_design, K=np.ones((1, 3)))
    with pytest.raises(ValidationError):
        run(short_canonical, bad)
