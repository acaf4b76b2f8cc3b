import numpy as np
import pytest

from feeder_analyzer.errors import UnconvergedSolution
from feeder_analyzer.solvers.network import build_network
from feeder_analyzer.solvers.power_flow import (
    build_injections,
    cap_array,
    capacitor_kvar,
    power_balance_error,
    solve,
    total_load_kva,
    total_losses,
)


def test_two_bus_matches_closed_form(two_bus_description):
    network = build_network(two_bus_description)
    solution = solve(network, build_injections(network))
    assert solution.converged

    v_s = 2400.0
    z = network.edges[0].z_ohm[0, 0]
    p = 500e3
    a = v_s ** 2 - 2.0 * z.real * p
    v_load = np.sqrt((a + np.sqrt(a ** 2 - 4.0 * abs(z) ** 2 * p ** 2)) / 2.0)
    assert solution.phase_voltage_pu("L", "A") == pytest.approx(v_load / v_s, abs=1e-8)


@pytest.mark.parametrize("fixture", ["two_bus_description", "chain_description", "six_bus_description"])
def test_sweep_agrees_with_newton(fixture, request, newton_oracle):
    network = build_network(request.getfixturevalue(fixture))
    pv = {u.id: (350.0, -40.0) for u in network.pv_units}
    injections = build_injections(network, 1.0, pv)
    solution = solve(network, injections, tolerance_pu=1e-12)
    reference = newton_oracle(network, injections, capacitor_kvar(network, cap_array(network)))

    mask = network.phase_mask
    error = np.abs(solution.v - reference)[mask] / np.broadcast_to(network.base_volts[:, None], mask.shape)[mask]
    assert solution.converged
    assert error.max() < 1e-7


def test_zero_load_gives_flat_voltage(chain_description):
    network = build_network(chain_description)
    solution = solve(network, build_injections(network, 0.0))
    np.testing.assert_allclose(solution.v_mag_pu[network.phase_mask], 1.0, atol=1e-12)
    p_loss, q_loss = total_losses(solution)
    assert p_loss == pytest.approx(0.0, abs=1e-9)
    assert q_loss == pytest.approx(0.0, abs=1e-9)


def test_source_phases_are_120_degrees_apart(chain_description):
    network = build_network(chain_description)
    v = solve(network, build_injections(network, 0.0)).bus_voltage_pu("S")
    np.testing.assert_allclose(np.angle(v, deg=True), [0.0, -120.0, 120.0], atol=1e-9)


def test_tap_raises_downstream_voltage_by_step(regulated_network):
    network = regulated_network
    injections = build_injections(network, 0.0)
    solution = solve(network, injections, tap_positions={"VR": {"A": 5, "B": 0, "C": -3}}, cap_states={})
    v = solution.bus_voltage_pu("B3")
    np.testing.assert_allclose(np.abs(v), [1.0 + 5 * 0.00625, 1.0, 1.0 - 3 * 0.00625], atol=1e-12)
    np.testing.assert_array_equal(solution.tap_positions[0], [5, 0, -3])


def test_voltage_drops_along_loaded_chain(chain_description):
    network = build_network(chain_description)
    solution = solve(network, build_injections(network))
    assert solution.mean_voltage_pu("b") < solution.mean_voltage_pu("a") < 1.0


def test_energized_capacitor_raises_local_voltage(regulated_network):
    network = regulated_network
    injections = build_injections(network)
    off = solve(network, injections, cap_states={"CAP": {"A": False, "B": False, "C": False}})
    on = solve(network, injections, cap_states={"CAP": {"A": True, "B": True, "C": True}})
    assert on.mean_voltage_pu("B2") > off.mean_voltage_pu("B2")
    np.testing.assert_allclose(on.cap_kvar[0], [200.0, 200.0, 200.0])
    assert np.sum(off.cap_kvar) == 0.0


def test_power_balance_closes_on_desk_feeder(desk_network):
    pv = {u.id: (800.0, -200.0) for u in desk_network.pv_units}
    solution = solve(desk_network, build_injections(desk_network, {"default": 0.9, "commercial": 1.1}, pv))
    assert solution.converged
    assert power_balance_error(solution) < 1e-6 * total_load_kva(solution)
    p_loss, q_loss = total_losses(solution)
    assert p_loss > 0.0
    assert q_loss > 0.0


def test_losses_equal_series_element_dissipation(six_bus_description):
    network = build_network(six_bus_description)
    solution = solve(network, build_injections(network))
    expected = 0.0
    for k, edge in enumerate(network.edges):
        current = solution.i_from[k]
        expected += np.real(current.conj() @ edge.z_ohm @ current) / 1000.0
    assert total_losses(solution)[0] == pytest.approx(expected, rel=1e-9)


def test_pv_output_is_split_over_unit_phases(six_bus_description):
    network = build_network(six_bus_description)
    injections = build_injections(network, 1.0, {"PV": (300.0, 30.0)})
    np.testing.assert_allclose(injections.pv_kva[network.bus_index["pv"]], [100 + 10j] * 3)


def test_unknown_profile_reference_uses_unit_multiplier(chain_description):
    network = build_network(chain_description)
    scaled = build_injections(network, {"other": 2.0})
    np.testing.assert_allclose(scaled.load_kva, build_injections(network, 1.0).load_kva)


def test_iteration_cap_reports_unconverged(desk_network):
    solution = solve(desk_network, build_injections(desk_network), max_iterations=1)
    assert not solution.converged
    assert solution.iterations == 1
    with pytest.raises(UnconvergedSolution):
        total_losses(solution)


def test_node_voltages_cover_every_existing_phase(desk_network):
    solution = solve(desk_network, build_injections(desk_network))
    voltages = solution.node_voltages()
    assert list(voltages) == desk_network.node_labels()
    v_max, v_min = solution.voltage_extremes()
    assert v_max == max(voltages.values())
    assert v_min == min(voltages.values())


def test_balanced_feeder_gives_symmetric_phases():
    from conftest import bus, feeder, line, load

    description = feeder(
        [bus("S"), bus("a"), bus("b"), bus("c")],
        [line("L1", "S", "a", length_km=2.0), line("L2", "a", "b", length_km=1.5),
         line("L3", "a", "c", length_km=1.0)],
        loads=[load("La", "a", {"A": 200.0, "B": 200.0, "C": 200.0}),
               load("Lb", "b", {"A": 350.0, "B": 350.0, "C": 350.0})],
        capacitors=[{"id": "C", "bus": "b", "kvar_rating": {"A": 150.0, "B": 150.0, "C": 150.0},
                     "mode": "fixed", "q_max_node": 600.0}],
        pv_units=[{"id": "PV", "bus": "c", "p_rated_kW": 600.0, "s_inverter_kVA": 700.0}],
    )
    network = build_network(description)
    solution = solve(network, build_injections(network, 1.0, {"PV": (450.0, -90.0)}), tolerance_pu=1e-12)
    assert solution.converged

    shift = np.exp(-2j * np.pi / 3 * np.arange(3))
    for bus_id in network.bus_ids:
        v = solution.bus_voltage_pu(bus_id)
        np.testing.assert_allclose(np.abs(v), np.abs(v[0]), rtol=0.0, atol=1e-10)
        np.testing.assert_allclose(v / shift, v[0], rtol=0.0, atol=1e-10)
    currents = np.abs(solution.i_from)
    np.testing.assert_allclose(currents, currents[:, :1].repeat(3, axis=1), rtol=1e-10)
