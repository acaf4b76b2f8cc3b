import json
import os
from typing import Dict, List, Optional

import numpy as np
import pytest

from feeder_analyzer.models.feeder import FeederDescription
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.scenario import ScenarioFile
from feeder_analyzer.solvers.network import build_network
from feeder_analyzer.solvers.power_flow import source_voltage
from feeder_analyzer.utils.io import build_scenario, load_feeder, serialize_feeder


DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
DESK_FEEDER = os.path.join(DATA_DIR, "desk8500_mini.json")
DESK_SCENARIO = os.path.join(DATA_DIR, "desk_cloudy_day.json")

MAIN3 = [
    [[0.19, 0.39], [0.06, 0.125], [0.06, 0.125]],
    [[0.06, 0.125], [0.19, 0.39], [0.06, 0.125]],
    [[0.06, 0.125], [0.06, 0.125], [0.19, 0.39]],
]
LATERAL2 = [[[0.35, 0.48], [0.07, 0.14]], [[0.07, 0.14], [0.35, 0.48]]]
LATERAL1 = [[[0.45, 0.50]]]
ABC = ["A", "B", "C"]


def bus(bus_id: str, phases=ABC, base_kv: float = 7.2, **extra) -> Dict:
    return {"id": bus_id, "phases": list(phases), "base_kV": base_kv, **extra}


def line(line_id: str, a: str, b: str, z=MAIN3, length_km: float = 1.0) -> Dict:
    return {"id": line_id, "from_bus": a, "to_bus": b,
            "z_matrix": [[[r * length_km, x * length_km] for r, x in row] for row in z]}


def load(load_id: str, bus_id: str, kw: Dict[str, float], pf_ratio: float = 0.33, **extra) -> Dict:
    return {"id": load_id, "bus": bus_id,
            "phases": {p: {"kw": v, "kvar": v * pf_ratio} for p, v in kw.items()}, **extra}


def feeder(buses: List[Dict], lines: List[Dict], source: str = "S", **extra) -> FeederDescription:
    return FeederDescription.parse_obj({"name": extra.pop("name", "test"), "source": {"bus": source},
                                        "buses": buses, "lines": lines, **extra})


@pytest.fixture
def two_bus_description() -> FeederDescription:
    """Source 2.4 kV phase-neutre, z = 0.01 + j0.02 pu sur 1 MVA, charge 500 kW."""
    z_base = 2400.0 ** 2 / 1e6
    return feeder(
        [bus("S", ["A"], 2.4), bus("L", ["A"], 2.4)],
        [{"id": "L1", "from_bus": "S", "to_bus": "L", "z_matrix": [[[0.01 * z_base, 0.02 * z_base]]]}],
        loads=[{"id": "P", "bus": "L", "phases": {"A": {"kw": 500.0, "kvar": 0.0}}}],
    )


@pytest.fixture
def chain_description() -> FeederDescription:
    return feeder(
        [bus("S"), bus("a"), bus("b")],
        [line("L1", "S", "a", length_km=2.0), line("L2", "a", "b", length_km=1.5)],
        loads=[load("La", "a", {"A": 200.0, "B": 150.0, "C": 180.0}),
               load("Lb", "b", {"A": 250.0, "B": 100.0, "C": 300.0})],
    )


@pytest.fixture
def six_bus_description() -> FeederDescription:
    """Étoile déséquilibrée: latérale biphasée, latérale monophasée, banc et PV."""
    return feeder(
        [bus("S"), bus("m1"), bus("m2"), bus("bc", ["B", "C"]), bus("c", ["C"]), bus("pv")],
        [line("L1", "S", "m1", length_km=1.5), line("L2", "m1", "m2", length_km=1.0),
         line("L3", "m1", "bc", LATERAL2, 0.8), line("L4", "bc", "c", LATERAL1, 0.6),
         line("L5", "m2", "pv", length_km=0.5)],
        loads=[load("Lm1", "m1", {"A": 120.0, "B": 90.0, "C": 60.0}),
               load("Lbc", "bc", {"B": 110.0, "C": 70.0}),
               load("Lc", "c", {"C": 80.0}),
               load("Lm2", "m2", {"A": 150.0, "B": 150.0, "C": 150.0})],
        capacitors=[{"id": "C1", "bus": "m2", "kvar_rating": {"A": 100.0, "B": 100.0, "C": 100.0},
                     "mode": "fixed", "q_max_node": 600.0}],
        pv_units=[{"id": "PV", "bus": "pv", "p_rated_kW": 600.0, "s_inverter_kVA": 700.0}],
    )


@pytest.fixture
def regulated_description() -> FeederDescription:
    """Régulateur en tête, banc commuté et PV en bout de ligne."""
    return feeder(
        [bus("S"), bus("H"), bus("R"), bus("B1"), bus("B2"), bus("B3")],
        [line("L0", "S", "H", length_km=3.0), line("L1", "R", "B1", length_km=2.0), line("L2", "B1", "B2", length_km=2.0),
         line("L3", "B2", "B3", length_km=1.0)],
        regulators=[{"id": "VR", "from_bus": "H", "to_bus": "R", "phases": ABC}],
        loads=[load("L_B1", "B1", {"A": 300.0, "B": 300.0, "C": 300.0}),
               load("L_B2", "B2", {"A": 300.0, "B": 250.0, "C": 300.0}),
               load("L_B3", "B3", {"A": 50.0, "B": 50.0, "C": 50.0})],
        capacitors=[{"id": "CAP", "bus": "B2", "kvar_rating": {"A": 200.0, "B": 200.0, "C": 200.0},
                     "mode": "voltage", "q_max_node": 900.0}],
        pv_units=[{"id": "PV", "bus": "B3", "p_rated_kW": 1000.0, "s_inverter_kVA": 1200.0}],
    )


@pytest.fixture
def regulated_network(regulated_description) -> Network:
    return build_network(regulated_description)


@pytest.fixture(scope="session")
def desk_description() -> FeederDescription:
    return load_feeder(DESK_FEEDER)


@pytest.fixture(scope="session")
def desk_network(desk_description) -> Network:
    return build_network(desk_description)


def small_scenario(network: Network, n_steps: int = 30, dt_s: float = 60.0,
                   **overrides):
    """Scénario court sur `network`: créneau d'éclairement, charge constante."""
    spec = {
        "feeder": "inline",
        "dt_s": dt_s,
        "duration_s": n_steps * dt_s,
        "profiles": {
            "irradiance": {"generator": "square_wave",
                           "params": {"low": 300.0, "high": 1000.0, "period_min": 10.0}},
            "loads": {"default": {"value": 1.0}},
        },
    }
    spec.update(overrides)
    return build_scenario(ScenarioFile.parse_obj(spec), network)


@pytest.fixture
def scenario_factory():
    return small_scenario


@pytest.fixture
def scenario_path(tmp_path, regulated_description) -> str:
    """Départ régulé (bande étroite) et scénario de 30 min écrits dans `tmp_path`."""
    description = regulated_description.copy(deep=True)
    description.regulators[0].bandwidth_pu = 0.002
    (tmp_path / "feeder.json").write_text(serialize_feeder(description), encoding="utf-8")
    spec = {
        "name": "cli",
        "feeder": "feeder.json",
        "dt_s": 60.0,
        "duration_s": 1800.0,
        "seed": 7,
        "profiles": {
            "irradiance": {"generator": "square_wave", "params": {"low": 200.0, "high": 1000.0,
                                                                  "period_min": 6.0}},
            "loads": {"default": {"generator": "square_wave", "params": {"low": 0.5, "high": 1.2,
                                                                         "period_min": 8.0}}},
        },
        "function": {"function": "VoltVar"},
        "sweep": [{"function": "VoltWatt"}, {"function": "ConstantPF", "power_factor": -0.95}],
        "harmonics": {"snapshots_s": [600.0]},
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(spec), encoding="utf-8")
    return str(path)


def _admittance(network: Network):
    """Matrice nodale des lignes sur les noeuds-phases existants."""
    nodes = [(i, j) for i in range(network.n_buses) for j in range(3) if network.phase_mask[i, j]]
    number = {node: k for k, node in enumerate(nodes)}
    y = np.zeros((len(nodes), len(nodes)), dtype=complex)
    for edge in network.edges:
        if edge.is_regulator:
            raise ValueError("l'oracle de Newton ne traite que les lignes")
        idx = np.flatnonzero(edge.phase_mask)
        y_line = np.linalg.inv(edge.z_ohm[np.ix_(idx, idx)])
        f = [number[(edge.from_idx, j)] for j in idx]
        t = [number[(edge.to_idx, j)] for j in idx]
        for a in range(len(idx)):
            for b in range(len(idx)):
                y[f[a], f[b]] += y_line[a, b]
                y[t[a], t[b]] += y_line[a, b]
                y[f[a], t[b]] -= y_line[a, b]
                y[t[a], f[b]] -= y_line[a, b]
    return nodes, y


def newton_solve(network: Network, injections, cap_kvar: Optional[np.ndarray] = None,
                 tol: float = 1e-12, max_iterations: int = 50) -> np.ndarray:
    """Newton-Raphson complexe (forme de Wirtinger) sur la matrice nodale; volts."""
    nodes, y = _admittance(network)
    s_inj = injections.total_kva.copy() * 1000.0
    if cap_kvar is not None:
        for k, cap in enumerate(network.capacitors):
            s_inj[network.bus_index[cap.bus]] += 1j * cap_kvar[k] * 1000.0
    slack = [k for k, (i, _) in enumerate(nodes) if i == 0]
    free = [k for k, (i, _) in enumerate(nodes) if i != 0]
    v_src = source_voltage(network)
    v = np.array([v_src[j] if i == 0 else network.base_kv[i] * 1000.0 * np.exp(-2j * np.pi / 3 * j)
                  for i, j in nodes], dtype=complex)
    s = np.array([s_inj[i, j] for i, j in nodes])[free]
    y_ff = y[np.ix_(free, free)]
    y_fs = y[np.ix_(free, slack)]
    for _ in range(max_iterations):
        vf = v[free]
        mismatch = y_ff @ vf + y_fs @ v[slack] - np.conj(s / vf)
        if np.max(np.abs(mismatch)) < tol:
            break
        a = y_ff
        b = np.diag(np.conj(s) / np.conj(vf) ** 2)
        jac = np.block([[np.real(a + b), np.real(1j * (a - b))],
                        [np.imag(a + b), np.imag(1j * (a - b))]])
        step = np.linalg.solve(jac, -np.concatenate([mismatch.real, mismatch.imag]))
        n = len(free)
        v[free] = vf + step[:n] + 1j * step[n:]
    out = np.zeros((network.n_buses, 3), dtype=complex)
    for k, (i, j) in enumerate(nodes):
        out[i, j] = v[k]
    return out


@pytest.fixture
def newton_oracle():
    return newton_solve


def phase(p: str) -> int:
    return PHASE_INDEX[p]
