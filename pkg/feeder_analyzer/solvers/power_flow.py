"""Écoulement de charge par balayage amont/aval sur réseau radial déséquilibré."""
from typing import Mapping, Optional, Tuple, Union

import numpy as np

from feeder_analyzer.errors import SingularSegment, UnconvergedSolution
from feeder_analyzer.models.feeder import PHASES
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.solution import InjectionSet, Solution


TOLERANCE_PU = 1e-8
MAX_ITERATIONS = 200
PHASE_SHIFT = np.exp(-2j * np.pi / 3 * np.arange(3))

TapInput = Union[np.ndarray, Mapping[str, Mapping[str, int]], None]
CapInput = Union[np.ndarray, Mapping[str, Mapping[str, bool]], None]


def tap_array(network: Network, taps: TapInput = None) -> np.ndarray:
    """Positions de prises (nreg, 3); accepte un tableau ou {régulateur: {phase: prise}}."""
    if isinstance(taps, np.ndarray):
        return taps.astype(int)
    out = np.zeros((len(network.regulators), 3), dtype=int)
    for k, reg in enumerate(network.regulators):
        source = (taps or {}).get(reg.id)
        for phase in reg.phases:
            pos = source.get(phase, reg.initial_tap(phase)) if source is not None else reg.initial_tap(phase)
            out[k, PHASE_INDEX[phase]] = int(pos)
    return out


def cap_array(network: Network, states: CapInput = None) -> np.ndarray:
    """États des bancs (ncap, 3); accepte un tableau ou {banc: {phase: état}}."""
    if isinstance(states, np.ndarray):
        return states.astype(bool)
    out = np.zeros((len(network.capacitors), 3), dtype=bool)
    for k, cap in enumerate(network.capacitors):
        source = (states or {}).get(cap.id)
        for phase in cap.phases:
            on = source.get(phase, cap.initial_state(phase)) if source is not None else cap.initial_state(phase)
            out[k, PHASE_INDEX[phase]] = bool(on)
    return out


def capacitor_kvar(network: Network, states: np.ndarray) -> np.ndarray:
    """kVAR injectés par banc et par phase pour un état donné."""
    out = np.zeros((len(network.capacitors), 3))
    for k, cap in enumerate(network.capacitors):
        for phase, kvar in cap.kvar_rating.items():
            if states[k, PHASE_INDEX[phase]]:
                out[k, PHASE_INDEX[phase]] = kvar
    return out


def regulator_ratios(network: Network, taps: np.ndarray) -> np.ndarray:
    """Rapport V_aval/V_amont (volts) par élément série; 1 pour les lignes."""
    ratios = np.ones((len(network.edges), 3))
    for k, edge in enumerate(network.edges):
        if not edge.is_regulator:
            continue
        reg = network.regulators[edge.regulator_idx]
        regulated = np.array([p in reg.phases for p in PHASES])
        ratios[k] = edge.nominal_ratio * np.where(regulated, 1.0 + taps[edge.regulator_idx] * reg.step_pu, 1.0)
    return ratios


def source_voltage(network: Network) -> np.ndarray:
    src = network.source
    angle = np.exp(1j * np.deg2rad(src.angle_deg))
    v = network.base_volts[0] * src.voltage_pu * angle * PHASE_SHIFT
    return np.where(network.phase_mask[0], v, 0.0)


def no_load_voltages(network: Network, ratios: np.ndarray) -> np.ndarray:
    """Tensions à vide: la source propagée par les rapports des régulateurs."""
    v = np.zeros((network.n_buses, 3), dtype=complex)
    v[0] = source_voltage(network)
    for k, edge in enumerate(network.edges):
        v[edge.to_idx] = np.where(edge.phase_mask, ratios[k] * v[edge.from_idx], 0.0)
    return v


def build_injections(
    network: Network,
    load_multipliers: Union[float, Mapping[str, float]] = 1.0,
    pv_outputs: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> InjectionSet:
    """Agrège charges (négatives) et sorties PV (positives) par noeud et par phase.

    La puissance d'un onduleur est répartie également sur ses phases.
    """
    load = np.zeros((network.n_buses, 3), dtype=complex)
    pv = np.zeros((network.n_buses, 3), dtype=complex)
    for item in network.loads:
        if isinstance(load_multipliers, Mapping):
            mult = load_multipliers.get(item.profile_ref, 1.0)
        else:
            mult = load_multipliers
        i = network.bus_index[item.bus]
        for phase, pq in item.phases.items():
            load[i, PHASE_INDEX[phase]] -= mult * complex(pq.kw, pq.kvar)
    for unit in network.pv_units:
        if not pv_outputs or unit.id not in pv_outputs:
            continue
        p_kw, q_kvar = pv_outputs[unit.id]
        phases = network.pv_phases(unit)
        i = network.bus_index[unit.bus]
        for phase in phases:
            pv[i, PHASE_INDEX[phase]] += complex(p_kw, q_kvar) / len(phases)
    return InjectionSet(load, pv)


def solve(
    network: Network,
    injections: InjectionSet,
    tap_positions: TapInput = None,
    cap_states: CapInput = None,
    v_init: Optional[np.ndarray] = None,
    tolerance_pu: float = TOLERANCE_PU,
    max_iterations: int = MAX_ITERATIONS,
) -> Solution:
    """Résout le point de fonctionnement par balayage amont/aval.

    Les calculs sont faits en volts et ampères; la solution expose les tensions
    en pu sur la base de chaque noeud. Si le plafond d'itérations est atteint,
    la solution est retournée avec `converged=False`.
    """
    taps = tap_array(network, tap_positions)
    caps = cap_array(network, cap_states)
    cap_kvar = capacitor_kvar(network, caps)
    ratios = regulator_ratios(network, taps)
    edges = network.edges
    mask = network.phase_mask
    base = network.base_volts[:, None]

    for edge in edges:
        if not edge.is_regulator and np.any(np.abs(np.diag(edge.z_ohm))[edge.phase_mask] == 0.0):
            raise SingularSegment("impédance nulle", locus=f"ligne {edge.id}")

    # Puissance consommée par noeud (VA): charges moins PV et condensateurs
    s_node = -injections.total_kva * 1000.0
    for k, cap in enumerate(network.capacitors):
        s_node[network.bus_index[cap.bus]] -= 1j * cap_kvar[k] * 1000.0

    v = no_load_voltages(network, ratios) if v_init is None else np.array(v_init, dtype=complex)
    v_src = source_voltage(network)
    i_to = np.zeros((len(edges), 3), dtype=complex)
    i_from = np.zeros((len(edges), 3), dtype=complex)
    converged = False
    mismatch = np.inf
    iterations = 0

    for iterations in range(1, max_iterations + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            i_node = np.where(mask, np.conj(s_node / v), 0.0)
        # Balayage amont: cumul des courants des feuilles vers la source
        acc = i_node.copy()
        for k in range(len(edges) - 1, -1, -1):
            edge = edges[k]
            i_to[k] = acc[edge.to_idx]
            i_from[k] = ratios[k] * i_to[k] if edge.is_regulator else i_to[k]
            acc[edge.from_idx] += i_from[k]
        # Balayage aval: chutes de tension depuis la source
        v_new = np.zeros_like(v)
        v_new[0] = v_src
        for k, edge in enumerate(edges):
            upstream = v_new[edge.from_idx]
            if edge.is_regulator:
                v_new[edge.to_idx] = np.where(edge.phase_mask, ratios[k] * upstream, 0.0)
            else:
                v_new[edge.to_idx] = np.where(edge.phase_mask, upstream - edge.z_ohm @ i_from[k], 0.0)
        mismatch = float(np.max(np.abs(v_new - v) / base))
        v = v_new
        if not np.isfinite(mismatch):
            break
        if mismatch < tolerance_pu:
            converged = True
            break

    s_from = np.zeros((len(edges), 3), dtype=complex)
    s_to = np.zeros((len(edges), 3), dtype=complex)
    for k, edge in enumerate(edges):
        s_from[k] = v[edge.from_idx] * np.conj(i_from[k]) / 1000.0
        s_to[k] = -v[edge.to_idx] * np.conj(i_to[k]) / 1000.0
    with np.errstate(divide="ignore", invalid="ignore"):
        i_src_node = np.where(mask[0], np.conj(s_node[0] / v[0]), 0.0)
    i_src = i_src_node + sum(i_from[k] for k, e in enumerate(edges) if e.from_idx == 0)
    source_kva = v[0] * np.conj(i_src) / 1000.0

    return Solution(
        network=network,
        v=v,
        i_from=i_from,
        i_to=i_to,
        s_from=s_from,
        s_to=s_to,
        source_kva=source_kva,
        cap_kvar=cap_kvar,
        injections=injections,
        tap_positions=taps,
        converged=converged,
        iterations=iterations,
        max_mismatch_pu=mismatch,
    )


def total_losses(solution: Solution) -> Tuple[float, float]:
    """Pertes totales (kW, kVAR): somme sur les éléments de S_entrée + S_sortie."""
    if not solution.converged:
        raise UnconvergedSolution("pertes demandées sur une solution non convergée")
    loss = complex(np.sum(solution.s_from + solution.s_to))
    return loss.real, loss.imag


def power_balance_error(solution: Solution) -> float:
    """|source + injections - consommation - pertes| en kVA."""
    p_loss, q_loss = total_losses(solution)
    injected = np.sum(solution.injections.total_kva) + 1j * np.sum(solution.cap_kvar)
    return float(abs(np.sum(solution.source_kva) + injected - complex(p_loss, q_loss)))


def total_load_kva(solution: Solution) -> float:
    return float(np.sum(np.abs(solution.injections.load_kva)))
