import numpy as np
import pytest

from feeder_analyzer.controllers.inverter_functions import apply_kva_limit, evaluate_curve
from feeder_analyzer.errors import EmptySweep, ProfileError
from feeder_analyzer.models.inverter import FunctionKind, InverterFunctionConfig, Precedence, nine_function_set
from feeder_analyzer.simulation.profiles import clear_day, cloudy_day
from feeder_analyzer.simulation.qsts import BASELINE_LABEL, RunState, run_series, run_timestep, sweep_functions
from feeder_analyzer.solvers.network import build_network


def flat_profiles(irradiance: float = 0.0):
    return {"irradiance": {"value": irradiance}, "loads": {"default": {"value": 1.0}}}


def test_quiescent_series_takes_no_action(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=10, profiles=flat_profiles())
    run = run_series(scenario)
    assert len(run) == 10
    assert len(run.log) == 0
    assert all(r.control_iterations == 1 for r in run.timesteps)
    assert all(r.converged and r.control_converged for r in run.timesteps)
    np.testing.assert_array_equal(run.final_taps, run.initial_taps)


def test_initial_settling_is_not_logged(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=3, profiles=flat_profiles())
    run = run_series(scenario)
    assert np.any(run.initial_taps != 0)
    assert run.log.entries == []

    unsettled = scenario_factory(regulated_network, n_steps=3, profiles=flat_profiles(),
                                 control={"settle_initial": False})
    run = run_series(unsettled)
    assert len(run.log) > 0
    assert all(t == 0 for t, _ in run.log.entries)


def test_unity_power_factor_never_injects_reactive_power(regulated_network, scenario_factory):
    run = run_series(scenario_factory(regulated_network, n_steps=20))
    acted = {t for t, _ in run.log.entries}
    for r in run.timesteps:
        assert np.all(r.q_kvar == 0.0)
        if r.timestep not in acted:
            assert r.control_iterations <= 2


def test_volt_var_reaches_a_consistent_fixed_point(regulated_network, scenario_factory):
    config = InverterFunctionConfig(function=FunctionKind.VOLT_VAR, volt_var_curve=[(0.95, 0.44), (1.05, -0.44)])
    scenario = scenario_factory(regulated_network, n_steps=15, function=config.dict())
    run = run_series(scenario)
    unit = regulated_network.pv_units[0]
    assert any(abs(r.q_kvar[0]) > 1.0 for r in run.timesteps)
    for r in run.timesteps:
        assert r.control_converged
        v = r.solution.mean_voltage_pu(unit.bus)
        target = evaluate_curve(config.volt_var_curve, v) * unit.s_inverter_kVA
        _, q = apply_kva_limit(r.p_avail_kw[0], target, unit.s_inverter_kVA, Precedence.VAR)
        assert abs(q - r.q_kvar[0]) < scenario.control.q_tol_kvar


def test_series_is_deterministic(regulated_network, scenario_factory):
    config = {"function": "VoltVarHysteresis"}
    first = run_series(scenario_factory(regulated_network, n_steps=20, function=config))
    second = run_series(scenario_factory(regulated_network, n_steps=20, function=config))
    for a, b in zip(first.timesteps, second.timesteps):
        np.testing.assert_array_equal(a.solution.v, b.solution.v)
        np.testing.assert_array_equal(a.q_kvar, b.q_kvar)
        np.testing.assert_array_equal(a.tap_positions, b.tap_positions)
        assert a.p_loss_kw == b.p_loss_kw
    assert first.log.entries == second.log.entries


def test_baseline_excludes_pv(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=20)
    with_pv = run_series(scenario)
    baseline = run_series(scenario.baseline())
    assert baseline.label == BASELINE_LABEL
    assert baseline.function is None
    assert np.all(baseline.pv_available() == 0.0)
    assert all(np.all(r.p_kw == 0.0) for r in baseline.timesteps)
    assert np.all(with_pv.pv_available() > 0.0)
    assert not np.allclose(with_pv.losses()[0], baseline.losses()[0])


def test_device_limits_hold_under_oscillating_irradiance(regulated_description, scenario_factory):
    description = regulated_description.copy(deep=True)
    description.regulators[0].daily_tap_limit = 4
    description.regulators[0].bandwidth_pu = 0.002
    description.capacitors[0].daily_switch_limit = 1
    description.capacitors[0].on_threshold_pu = 0.995
    description.capacitors[0].off_threshold_pu = 1.0
    network = build_network(description)
    profiles = {"irradiance": {"generator": "square_wave", "params": {"low": 0.0, "high": 1000.0,
                                                                      "period_min": 4.0}},
                "loads": {"default": {"value": 1.0}}}
    run = run_series(scenario_factory(network, n_steps=60, profiles=profiles,
                                      function={"function": "ConstantPF", "power_factor": -0.9}))

    for counts in run.log.daily_counts().values():
        for (device, _), n in counts.items():
            limit = 4 if device == "VR" else 1
            assert n <= limit
    switches = sum(1 for _ in run.log.switch_actions())
    assert switches <= 1
    for r in run.timesteps:
        assert np.all(np.abs(r.tap_positions) <= 16)
        assert np.sum(r.cap_kvar) <= description.capacitors[0].q_max_node + 1e-9
    assert run.log.notes


def test_unconverged_power_flow_is_flagged(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=4,
                                control={"power_flow_max_iterations": 1, "settle_initial": False})
    run = run_series(scenario)
    assert run.n_not_converged == 4
    assert np.all(np.isnan(run.losses()[0]))
    assert all(r.violations == [] for r in run.timesteps)


def test_harmonic_snapshot_is_taken_at_requested_time(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=10, harmonics={"snapshots_s": [120.0, 9999.0]})
    run = run_series(scenario)
    assert [s.timestep for s in run.harmonics] == [2]
    assert run.harmonics[0].result.elements == tuple(e.id for e in regulated_network.edges)


def test_sweep_runs_baseline_first(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=5)
    pf = InverterFunctionConfig(function=FunctionKind.CONSTANT_PF, power_factor=1.0)
    runs = sweep_functions(scenario, [pf, pf])
    assert list(runs) == [BASELINE_LABEL, "ConstantPF(1)", "ConstantPF(1)-2"]
    assert not runs[BASELINE_LABEL].pv_enabled
    assert runs["ConstantPF(1)-2"].label == "ConstantPF(1)-2"


def test_empty_sweep_is_rejected(regulated_network, scenario_factory):
    with pytest.raises(EmptySweep):
        sweep_functions(scenario_factory(regulated_network, n_steps=2), [])


def test_parallel_sweep_matches_serial(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=8)
    configs = [InverterFunctionConfig(function=FunctionKind.VOLT_WATT),
               InverterFunctionConfig(function=FunctionKind.VOLT_VAR_LPF)]
    serial = sweep_functions(scenario, configs)
    parallel = sweep_functions(scenario, configs, parallel=2)
    assert list(serial) == list(parallel)
    for label in serial:
        np.testing.assert_array_equal(serial[label].losses()[0], parallel[label].losses()[0])
        assert serial[label].log.entries == parallel[label].log.entries


@pytest.mark.acceptance
def test_rate_limit_reduces_tap_operations_under_square_clouds(desk_network, scenario_factory):
    profiles = {"irradiance": {"generator": "square_wave", "params": {"low": 100.0, "high": 1000.0,
                                                                      "period_min": 10.0}},
                "loads": {"default": {"value": 0.6}}}
    scenario = scenario_factory(desk_network, n_steps=240, profiles=profiles)
    runs = sweep_functions(scenario, [InverterFunctionConfig(function=FunctionKind.VOLT_WATT),
                                      InverterFunctionConfig(function=FunctionKind.VOLT_WATT_RATE_LIMIT)])
    taps = {label: sum(a.operations for _, a in run.log.tap_actions()) for label, run in runs.items()}
    assert taps["VoltWattRateLimit"] < taps["VoltWatt"]


def test_single_timestep_matches_first_step_of_series(regulated_network, scenario_factory):
    scenario = scenario_factory(regulated_network, n_steps=2, profiles=flat_profiles(800.0),
                                control={"settle_initial": False})
    state = RunState.initial(scenario)
    first = run_timestep(scenario, 0, state)
    run = run_series(scenario)

    reference = run.timesteps[0]
    assert first.converged and first.p_loss_kw > 0.0
    assert first.p_loss_kw == pytest.approx(reference.p_loss_kw)
    np.testing.assert_array_equal(first.tap_positions, reference.tap_positions)
    np.testing.assert_allclose(first.p_kw, reference.p_kw)
    assert state.log.entries == [e for e in run.log.entries if e[0] == 0]


SWINGING_LOAD = {"irradiance": {"generator": "square_wave", "params": {"low": 200.0, "high": 1000.0,
                                                                      "period_min": 6.0}},
                 "loads": {"default": {"generator": "square_wave", "params": {"low": 0.5, "high": 1.2,
                                                                              "period_min": 8.0}}}}


def sensitive_network(regulated_description):
    """Bande étroite, mais plus large qu'un cran de prise."""
    description = regulated_description.copy(deep=True)
    description.regulators[0].bandwidth_pu = 0.008
    return build_network(description)


def tap_signature(run):
    return [(t, a.device, a.phase, a.delta) for t, a in run.log.tap_actions()]


def test_inverter_held_at_zero_matches_baseline(regulated_description, scenario_factory):
    network = sensitive_network(regulated_description)
    scenario = scenario_factory(network, n_steps=40, profiles=SWINGING_LOAD)
    silent = scenario.with_function(InverterFunctionConfig(function=FunctionKind.MAX_GEN_LIMIT,
                                                           gen_limit_fraction=0.0))
    held = run_series(silent)
    baseline = run_series(scenario.baseline())

    assert len(baseline.log) > 0
    assert all(np.all(r.p_kw == 0.0) and np.all(r.q_kvar == 0.0) for r in held.timesteps)
    assert tap_signature(held) == tap_signature(baseline)
    assert held.log.entries == baseline.log.entries
    np.testing.assert_allclose(held.losses()[0], baseline.losses()[0], rtol=1e-9)


@pytest.mark.parametrize("config", [
    {"function": "ConstantPF", "power_factor": 0.8},
    {"function": "VoltVar"},
    {"function": "VoltWatt"},
    {"function": "DynReactiveCurrent"},
])
def test_regulators_never_reverse_within_a_timestep(desk_network, scenario_factory, config):
    profiles = {"irradiance": {"generator": "square_wave", "params": {"low": 100.0, "high": 1000.0,
                                                                      "period_min": 4.0}},
                "loads": {"default": {"value": 0.6}}}
    run = run_series(scenario_factory(desk_network, n_steps=60, profiles=profiles, function=config))
    directions = {}
    for t, action in run.log.tap_actions():
        directions.setdefault((t, action.device, action.phase), set()).add(np.sign(action.delta))
    assert directions
    assert all(len(signs) == 1 for signs in directions.values())


def test_recorded_outputs_are_the_commanded_ones(regulated_network, scenario_factory):
    config = InverterFunctionConfig(function=FunctionKind.VOLT_WATT, volt_watt_curve=[(0.99, 1.0), (1.03, 0.0)])
    run = run_series(scenario_factory(regulated_network, n_steps=15, function=config.dict()))
    unit = regulated_network.pv_units[0]
    assert any(r.p_kw[0] < r.p_avail_kw[0] - 1.0 for r in run.timesteps)
    for r in run.timesteps:
        injected = r.solution.injections.pv_kva[regulated_network.bus_index[unit.bus]].sum()
        assert injected.real == pytest.approx(r.p_kw[0], abs=1e-9)
        assert injected.imag == pytest.approx(r.q_kvar[0], abs=1e-9)


def test_baseline_does_not_depend_on_the_function(regulated_description, scenario_factory):
    network = sensitive_network(regulated_description)
    scenario = scenario_factory(network, n_steps=20, profiles=SWINGING_LOAD)
    reference = run_series(scenario.baseline())
    for config in nine_function_set():
        baseline = run_series(scenario.with_function(config).baseline())
        assert baseline.log.entries == reference.log.entries
        np.testing.assert_array_equal(baseline.losses()[0], reference.losses()[0])
        np.testing.assert_array_equal(baseline.final_taps, reference.final_taps)


def test_replayed_action_log_reproduces_stored_positions(regulated_description, scenario_factory):
    network = sensitive_network(regulated_description)
    run = run_series(scenario_factory(network, n_steps=40, profiles=SWINGING_LOAD,
                                      function={"function": "ConstantPF", "power_factor": -0.9}))
    assert any(True for _ in run.log.tap_actions())
    ids = [r.id for r in network.regulators]
    initial = {(reg, p): int(run.initial_taps[k, j]) for k, reg in enumerate(ids) for j, p in enumerate("ABC")}
    final = run.log.replay_positions(initial)
    for (reg, p), position in final.items():
        assert run.final_taps[ids.index(reg), "ABC".index(p)] == position

    taps = run.initial_taps.copy()
    by_step = {}
    for t, action in run.log.tap_actions():
        by_step.setdefault(t, []).append(action)
    for r in run.timesteps:
        for action in by_step.get(r.timestep, []):
            taps[ids.index(action.device), "ABC".index(action.phase)] += action.delta
        np.testing.assert_array_equal(r.tap_positions, taps)


def shaded_fraction(irradiance, clear):
    daylight = clear > 50.0
    return np.mean(irradiance[daylight] < 0.7 * clear[daylight])


def test_cloudy_day_clear_and_shade_durations_are_separate():
    clear = clear_day(1440, 60.0)
    mostly_shaded = cloudy_day(1440, 60.0, depth=0.8, noise=0.0, mean_clear_min=3.0, mean_shade_min=30.0)
    mostly_clear = cloudy_day(1440, 60.0, depth=0.8, noise=0.0, mean_clear_min=30.0, mean_shade_min=3.0)
    assert shaded_fraction(mostly_shaded, clear) > 0.6
    assert shaded_fraction(mostly_clear, clear) < 0.4

    same = cloudy_day(1440, 60.0, mean_period_min=12.0)
    np.testing.assert_array_equal(same, cloudy_day(1440, 60.0, mean_clear_min=12.0, mean_shade_min=12.0))
    with pytest.raises(ProfileError):
        cloudy_day(1440, 60.0, mean_shade_min=0.0)
