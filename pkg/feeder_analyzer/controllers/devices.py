"""Décisions des régulateurs et des bancs de condensateurs, et contrôle des limites de tension."""
import math
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from feeder_analyzer.models.devices import (
    ControlDecision,
    NoteKind,
    SwitchAction,
    TapAction,
    ViolationRecord,
)
from feeder_analyzer.models.feeder import PHASES, CapacitorBank, CapacitorMode, RegulatorBank
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.solution import Solution


LIMIT_TOLERANCE_PU = 1e-9

Counters = Mapping[Tuple[str, str], int]


def regulator_decide(solution: Solution, regulator: RegulatorBank, positions: Mapping[str, int],
                     counters: Counters) -> ControlDecision:
    """Déplacement de prises par phase pour ramener la tension régulée dans la bande.

    La tension de commande est celle du noeud aval (pas de compensation de chute
    de ligne). Un déplacement de n prises compte pour n manoeuvres.
    """
    decision = ControlDecision.none()
    half_band = regulator.bandwidth_pu / 2.0
    for phase in regulator.phases:
        v = solution.phase_voltage_pu(regulator.to_bus, phase)
        error = v - regulator.setpoint_pu
        if abs(error) <= half_band:
            continue
        steps = math.ceil((abs(error) - half_band) / regulator.step_pu - 1e-9)
        direction = -1 if error > 0 else 1
        current = int(positions.get(phase, regulator.initial_tap(phase)))
        target = min(max(current + direction * steps, regulator.tap_min), regulator.tap_max)
        if target != current + direction * steps:
            decision.notes.append((regulator.id, phase, NoteKind.LIMIT_CLAMPED))
        delta = target - current
        remaining = regulator.daily_tap_limit - counters.get((regulator.id, phase), 0)
        if delta != 0 and remaining <= 0:
            decision.notes.append((regulator.id, phase, NoteKind.BUDGET_EXHAUSTED))
            continue
        if abs(delta) > remaining:
            decision.notes.append((regulator.id, phase, NoteKind.BUDGET_EXHAUSTED))
            delta = direction * remaining
        if delta == 0:
            continue
        decision.actions.append(TapAction(regulator.id, phase, delta, current + delta))
    return decision


def _switch_allowed(bank: CapacitorBank, counters: Counters, kvar_on: float,
                    node_on_kvar: float, phase_label: str, decision: ControlDecision) -> bool:
    used = sum(n for (device, _), n in counters.items() if device == bank.id)
    if used >= bank.daily_switch_limit:
        decision.notes.append((bank.id, phase_label, NoteKind.BUDGET_EXHAUSTED))
        return False
    if kvar_on > 0 and node_on_kvar + kvar_on > bank.q_max_node + 1e-9:
        decision.notes.append((bank.id, phase_label, NoteKind.NODE_CAP_BINDING))
        return False
    return True


def capacitor_decide(solution: Solution, bank: CapacitorBank, states: Mapping[str, bool],
                     counters: Counters, node_on_kvar: Optional[float] = None) -> ControlDecision:
    """Enclenchement/déclenchement d'un banc commuté en tension.

    `node_on_kvar` est la puissance réactive déjà enclenchée au noeud (tous bancs
    confondus, y compris celui-ci); par défaut celle du banc seul.
    """
    decision = ControlDecision.none()
    if bank.mode == CapacitorMode.FIXED:
        return decision
    if node_on_kvar is None:
        node_on_kvar = sum(q for p, q in bank.kvar_rating.items() if states.get(p, False))

    if not bank.per_phase_switching:
        phases = bank.phases
        label = "".join(phases)
        v = solution.mean_voltage_pu(bank.bus, phases)
        is_on = any(states.get(p, False) for p in phases)
        if v < bank.on_threshold_pu and not is_on:
            kvar = sum(bank.kvar_rating[p] for p in phases)
            if _switch_allowed(bank, counters, kvar, node_on_kvar, label, decision):
                decision.actions.append(SwitchAction(bank.id, label, True))
        elif v > bank.off_threshold_pu and is_on:
            if _switch_allowed(bank, counters, 0.0, node_on_kvar, label, decision):
                decision.actions.append(SwitchAction(bank.id, label, False))
        return decision

    pending = dict(counters)
    for phase in bank.phases:
        v = solution.phase_voltage_pu(bank.bus, phase)
        is_on = states.get(phase, False)
        if v < bank.on_threshold_pu and not is_on:
            kvar = bank.kvar_rating[phase]
            if _switch_allowed(bank, pending, kvar, node_on_kvar, phase, decision):
                decision.actions.append(SwitchAction(bank.id, phase, True))
                node_on_kvar += kvar
                pending[(bank.id, phase)] = pending.get((bank.id, phase), 0) + 1
        elif v > bank.off_threshold_pu and is_on:
            if _switch_allowed(bank, pending, 0.0, node_on_kvar, phase, decision):
                decision.actions.append(SwitchAction(bank.id, phase, False))
                node_on_kvar -= bank.kvar_rating[phase]
                pending[(bank.id, phase)] = pending.get((bank.id, phase), 0) + 1
    return decision


def check_voltage_limits(solution: Solution, network: Optional[Network] = None,
                         timestep: int = 0) -> List[ViolationRecord]:
    """Un enregistrement par (noeud, phase) hors de [v_min, v_max] (intervalle fermé)."""
    network = network or solution.network
    mags = solution.v_mag_pu
    records = []
    over = (mags > network.v_max_pu[:, None] + LIMIT_TOLERANCE_PU) & network.phase_mask
    under = (mags < network.v_min_pu[:, None] - LIMIT_TOLERANCE_PU) & network.phase_mask
    for i, j in zip(*np.nonzero(over | under)):
        bound = "upper" if over[i, j] else "lower"
        records.append(ViolationRecord(timestep, network.bus_ids[i], PHASES[j], float(mags[i, j]), bound))
    return records


def node_on_kvar(network: Network, cap_states: np.ndarray) -> Dict[str, float]:
    """kVAR enclenchés par noeud, tous bancs confondus."""
    totals: Dict[str, float] = {}
    for k, cap in enumerate(network.capacitors):
        on = sum(q for p, q in cap.kvar_rating.items() if cap_states[k, PHASE_INDEX[p]])
        totals[cap.bus] = totals.get(cap.bus, 0.0) + on
    return totals
