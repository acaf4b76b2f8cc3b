"""Contrôles qualitatifs sur le départ de bureau (journée nuageuse, graine fixe).

Longs: exclure avec `pytest -m "not acceptance"` pour une passe rapide.
"""
import numpy as np
import pytest

from conftest import DESK_SCENARIO
from feeder_analyzer.analysis.metrics import build_sweep_report
from feeder_analyzer.models.inverter import FunctionKind, InverterFunctionConfig
from feeder_analyzer.simulation.qsts import BASELINE_LABEL, run_series, sweep_functions
from feeder_analyzer.solvers.harmonics import thd_table
from feeder_analyzer.solvers.power_flow import power_balance_error, total_load_kva
from feeder_analyzer.utils.io import load_scenario


pytestmark = pytest.mark.acceptance

FUNCTIONS = ["VoltWatt", "VoltWattRateLimit", "VoltVar", "VoltVarAdaptive", "VoltVarHysteresis",
             "VoltVarLPF", "MaxGenLimit80", "FPF0.8", "DynReactiveCurrent"]


@pytest.fixture(scope="module")
def desk_sweep():
    spec, scenario = load_scenario(DESK_SCENARIO)
    runs = sweep_functions(scenario, spec.sweep, parallel=4)
    report = build_sweep_report(runs, BASELINE_LABEL, scenario.network.name)
    return runs, {r.label: r for r in report.runs}


def total_taps(impact):
    return sum(r.total_with_pv for r in impact.regulators)


def test_sweep_covers_the_nine_functions(desk_sweep):
    runs, _ = desk_sweep
    assert list(runs) == [BASELINE_LABEL] + FUNCTIONS


def test_power_balance_closes_on_every_converged_step(desk_sweep):
    runs, _ = desk_sweep
    for run in runs.values():
        for r in run.timesteps:
            if r.converged:
                assert power_balance_error(r.solution) < 1e-6 * total_load_kva(r.solution)


def test_every_function_leaves_its_dead_zone(desk_sweep):
    runs, impacts = desk_sweep
    for label in ("VoltWatt", "VoltWattRateLimit", "MaxGenLimit80"):
        assert any(np.any(r.p_kw < r.p_avail_kw - 1e-3) for r in runs[label].timesteps), label
    for label in ("VoltVar", "VoltVarAdaptive", "VoltVarHysteresis", "VoltVarLPF", "FPF0.8",
                  "DynReactiveCurrent"):
        assert any(np.any(np.abs(r.q_kvar) > 1e-3) for r in runs[label].timesteps), label
    tallies = {tuple(r.total_with_pv for r in impacts[f].regulators) for f in FUNCTIONS}
    assert len(tallies) >= 8


def test_fixed_power_factor_taps_the_most(desk_sweep):
    _, impacts = desk_sweep
    others = [f for f in FUNCTIONS if f != "FPF0.8"]
    assert all(total_taps(impacts["FPF0.8"]) > total_taps(impacts[f]) for f in others)
    assert all(impacts["FPF0.8"].cii > impacts[f].cii for f in others)


def test_rate_limited_volt_watt_taps_the_least(desk_sweep):
    _, impacts = desk_sweep
    others = [f for f in FUNCTIONS if f != "VoltWattRateLimit"]
    assert all(total_taps(impacts["VoltWattRateLimit"]) < total_taps(impacts[f]) for f in others)
    assert all(impacts["VoltWattRateLimit"].cii < impacts[f].cii for f in others)


def test_every_function_reduces_midday_losses(desk_sweep):
    _, impacts = desk_sweep
    for label in FUNCTIONS:
        assert impacts[label].losses.midday_delta_p_loss_kw < 0.0, label


def test_generation_limit_gives_largest_loss_reduction(desk_sweep):
    _, impacts = desk_sweep
    reductions = {f: -impacts[f].losses.midday_delta_p_loss_kw for f in FUNCTIONS}
    best = max(reductions.values())
    assert reductions["MaxGenLimit80"] >= 0.98 * best


def test_current_distortion_varies_less_than_voltage_distortion(desk_sweep):
    runs, _ = desk_sweep
    mean_v, mean_i = [], []
    for label in FUNCTIONS:
        rows = thd_table(runs[label].harmonics[0].result)
        mean_v.append(np.mean([thd_v for _, _, thd_v, _ in rows]))
        mean_i.append(np.mean([thd_i for _, _, _, thd_i in rows]))
    spread_v = np.ptp(mean_v) / np.mean(mean_v)
    spread_i = np.ptp(mean_i) / np.mean(mean_i)
    assert spread_i < spread_v


def test_device_limits_hold_under_adversarial_irradiance(desk_network, scenario_factory):
    profiles = {"irradiance": {"generator": "square_wave", "params": {"low": 0.0, "high": 1000.0,
                                                                      "period_min": 2.0}},
                "loads": {"default": {"generator": "residential"}}}
    scenario = scenario_factory(desk_network, n_steps=1440, profiles=profiles,
                                function=InverterFunctionConfig(function=FunctionKind.CONSTANT_PF,
                                                                power_factor=0.8).dict())
    run = run_series(scenario)

    tap_limits = {r.id: r.daily_tap_limit for r in desk_network.regulators}
    switch_limits = {c.id: c.daily_switch_limit for c in desk_network.capacitors}
    for counts in run.log.daily_counts().values():
        for (device, _), n in counts.items():
            assert n <= tap_limits.get(device, switch_limits.get(device))
    caps_by_bus = {}
    for k, cap in enumerate(desk_network.capacitors):
        caps_by_bus.setdefault(cap.bus, []).append((k, cap.q_max_node))
    for r in run.timesteps:
        assert np.all(np.abs(r.tap_positions) <= 16)
        for banks in caps_by_bus.values():
            q_max = min(q for _, q in banks)
            assert sum(np.sum(r.cap_kvar[k]) for k, _ in banks) <= q_max + 1e-9
