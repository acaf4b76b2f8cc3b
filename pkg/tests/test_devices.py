import pickle

import numpy as np
import pytest

from conftest import bus, feeder, line
from feeder_analyzer.controllers.devices import (
    capacitor_decide,
    check_voltage_limits,
    node_on_kvar,
    regulator_decide,
)
from feeder_analyzer.models.devices import DeviceActionLog, NoteKind, SwitchAction, TapAction
from feeder_analyzer.models.solution import InjectionSet, Solution
from feeder_analyzer.solvers.network import build_network
from feeder_analyzer.solvers.power_flow import PHASE_SHIFT, cap_array, tap_array


def solution_at(network, magnitudes=None):
    """Solution factice: |V| en pu imposé par noeud (scalaire ou par phase), 1.0 ailleurs."""
    mags = np.ones((network.n_buses, 3))
    for bus_id, value in (magnitudes or {}).items():
        mags[network.bus_index[bus_id]] = value
    v = np.where(network.phase_mask, mags * network.base_volts[:, None] * PHASE_SHIFT, 0.0)
    n_edges = len(network.edges)
    zeros = np.zeros((n_edges, 3), dtype=complex)
    return Solution(network=network, v=v, i_from=zeros, i_to=zeros, s_from=zeros, s_to=zeros,
                    source_kva=np.zeros(3, dtype=complex),
                    cap_kvar=np.zeros((len(network.capacitors), 3)),
                    injections=InjectionSet.empty(network), tap_positions=tap_array(network),
                    converged=True, iterations=1, max_mismatch_pu=0.0)


def regulator(network):
    return network.regulators[0]


def test_regulator_inside_band_does_nothing(regulated_network):
    decision = regulator_decide(solution_at(regulated_network, {"R": 1.0167}),
                                regulator(regulated_network), {}, {})
    assert decision.actions == []
    assert decision.notes == []


def test_regulator_taps_down_by_rounded_excess(regulated_network):
    decision = regulator_decide(solution_at(regulated_network, {"R": [1.0333, 1.0167, 1.0167]}),
                                regulator(regulated_network), {"A": 0, "B": 0, "C": 0}, {})
    assert decision.actions == [TapAction("VR", "A", -2, -2)]


def test_regulator_taps_up_on_undervoltage(regulated_network):
    decision = regulator_decide(solution_at(regulated_network, {"R": 0.98}),
                                regulator(regulated_network), {"A": 3, "B": 3, "C": 3}, {})
    assert [(a.phase, a.delta, a.position) for a in decision.actions] == [
        ("A", 5, 8), ("B", 5, 8), ("C", 5, 8)]
    assert all(a.operations == 5 for a in decision.actions)


def test_regulator_at_upper_limit_notes_clamp(regulated_network):
    decision = regulator_decide(solution_at(regulated_network, {"R": [0.95, 1.0167, 1.0167]}),
                                regulator(regulated_network), {"A": 16}, {})
    assert decision.actions == []
    assert ("VR", "A", NoteKind.LIMIT_CLAMPED) in decision.notes


def test_regulator_respects_remaining_daily_budget(regulated_network):
    reg = regulator(regulated_network)
    counters = {("VR", "A"): reg.daily_tap_limit - 1}
    decision = regulator_decide(solution_at(regulated_network, {"R": [0.98, 1.0167, 1.0167]}),
                                reg, {"A": 0}, counters)
    assert decision.actions == [TapAction("VR", "A", 1, 1)]
    assert ("VR", "A", NoteKind.BUDGET_EXHAUSTED) in decision.notes

    counters[("VR", "A")] = reg.daily_tap_limit
    decision = regulator_decide(solution_at(regulated_network, {"R": [0.98, 1.0167, 1.0167]}),
                                reg, {"A": 1}, counters)
    assert decision.actions == []


def test_regulator_decision_is_idempotent(regulated_network):
    reg = regulator(regulated_network)
    rng = np.random.default_rng(23)
    for _ in range(200):
        mags = rng.uniform(reg.setpoint_pu - 0.05, reg.setpoint_pu + 0.05, size=3)
        positions = dict(zip("ABC", rng.integers(-8, 9, size=3).tolist()))
        counters = {}
        solution = solution_at(regulated_network, {"R": mags})
        first = regulator_decide(solution, reg, positions, counters)
        again = regulator_decide(solution, reg, dict(positions), {})
        assert first.actions == again.actions
        assert counters == {}

        moved = mags.copy()
        for action in first.actions:
            moved["ABC".index(action.phase)] += action.delta * reg.step_pu
            positions[action.phase] = action.position
        settled = regulator_decide(solution_at(regulated_network, {"R": moved}), reg, positions, {})
        assert settled.actions == []


def capacitor(network):
    return network.capacitors[0]


def test_capacitor_switches_on_below_threshold(regulated_network):
    decision = capacitor_decide(solution_at(regulated_network, {"B2": 0.96}), capacitor(regulated_network),
                                {"A": False, "B": False, "C": False}, {})
    assert decision.actions == [SwitchAction("CAP", "ABC", True)]


def test_capacitor_holds_between_thresholds(regulated_network):
    bank = capacitor(regulated_network)
    for state in (True, False):
        states = {p: state for p in "ABC"}
        decision = capacitor_decide(solution_at(regulated_network, {"B2": 1.0}), bank, states, {})
        assert decision.actions == []


def test_capacitor_switches_off_above_threshold(regulated_network):
    decision = capacitor_decide(solution_at(regulated_network, {"B2": 1.04}), capacitor(regulated_network),
                                {"A": True, "B": True, "C": True}, {}, node_on_kvar=600.0)
    assert decision.actions == [SwitchAction("CAP", "ABC", False)]


def test_capacitor_daily_limit_blocks_switching(regulated_network):
    bank = capacitor(regulated_network)
    decision = capacitor_decide(solution_at(regulated_network, {"B2": 0.96}), bank,
                                {"A": False, "B": False, "C": False}, {("CAP", "ABC"): bank.daily_switch_limit})
    assert decision.actions == []
    assert decision.notes == [("CAP", "ABC", NoteKind.BUDGET_EXHAUSTED)]


def test_capacitor_node_cap_blocks_switching(regulated_network):
    decision = capacitor_decide(solution_at(regulated_network, {"B2": 0.96}), capacitor(regulated_network),
                                {"A": False, "B": False, "C": False}, {}, node_on_kvar=400.0)
    assert decision.actions == []
    assert decision.notes == [("CAP", "ABC", NoteKind.NODE_CAP_BINDING)]


def test_per_phase_capacitor_switches_only_low_phases():
    description = feeder(
        [bus("S"), bus("a")], [line("L1", "S", "a")],
        capacitors=[{"id": "C", "bus": "a", "kvar_rating": {"A": 100.0, "B": 100.0, "C": 100.0},
                     "per_phase_switching": True, "q_max_node": 300.0}],
    )
    network = build_network(description)
    decision = capacitor_decide(solution_at(network, {"a": [0.96, 1.0, 0.965]}), network.capacitors[0],
                                {p: False for p in "ABC"}, {})
    assert decision.actions == [SwitchAction("C", "A", True), SwitchAction("C", "C", True)]


def test_fixed_capacitor_never_acts(six_bus_description):
    network = build_network(six_bus_description)
    decision = capacitor_decide(solution_at(network, {"m2": 1.2}), network.capacitors[0],
                                {p: True for p in "ABC"}, {})
    assert decision.actions == []


def test_node_on_kvar_sums_energized_phases(regulated_network):
    states = cap_array(regulated_network, {"CAP": {"A": True, "B": False, "C": True}})
    assert node_on_kvar(regulated_network, states) == {"B2": 400.0}


def test_voltage_limits_are_closed_interval(regulated_network):
    assert check_voltage_limits(solution_at(regulated_network)) == []
    assert check_voltage_limits(solution_at(regulated_network, {"B1": 1.05, "B2": 0.95})) == []

    records = check_voltage_limits(solution_at(regulated_network, {"B3": [1.06, 1.0, 1.0]}), timestep=7)
    assert len(records) == 1
    record = records[0]
    assert (record.timestep, record.bus, record.phase, record.bound) == (7, "B3", "A", "upper")
    assert record.v_pu == pytest.approx(1.06)


def test_voltage_limits_report_undervoltage(regulated_network):
    records = check_voltage_limits(solution_at(regulated_network, {"B2": 0.93}))
    assert [r.bound for r in records] == ["lower"] * 3


def test_action_log_counts_operations_per_day():
    log = DeviceActionLog()
    log.append(0, 0, TapAction("VR", "A", -2, -2))
    log.append(5, 0, TapAction("VR", "A", 1, -1))
    log.append(1500, 1, TapAction("VR", "A", 3, 2))
    log.append(6, 0, SwitchAction("CAP", "ABC", True))
    assert log.total("VR", "A") == 6
    assert log.counters(0)[("VR", "A")] == 3
    assert log.daily_counts()[1] == {("VR", "A"): 3}
    assert log.replay_positions({("VR", "A"): 0}) == {("VR", "A"): 2}
    assert len(list(log.switch_actions())) == 1
    assert len(log) == 4


def test_action_log_notes_are_deduplicated():
    log = DeviceActionLog()
    for _ in range(3):
        log.note(4, "VR", "A", NoteKind.BUDGET_EXHAUSTED)
    log.note(5, "VR", "A", NoteKind.BUDGET_EXHAUSTED)
    assert len(log.notes) == 2


def test_action_log_survives_pickling():
    log = DeviceActionLog()
    log.append(2, 0, TapAction("VR", "B", 1, 1))
    restored = pickle.loads(pickle.dumps(log))
    restored.append(3, 0, TapAction("VR", "B", 1, 2))
    assert restored.counters(0)[("VR", "B")] == 2
    assert restored.counters(4)[("VR", "B")] == 0
