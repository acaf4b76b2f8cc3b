"""Boucle de simulation quasi-statique.

À chaque pas de temps: calcul d'écoulement de charge et pas des fonctions
d'onduleur (mise à jour de Q amortie) jusqu'à stabilisation de P et Q, puis
une décision des régulateurs ou des condensateurs, et ainsi de suite jusqu'à
un point fixe. Les états dynamiques des onduleurs ne sont avancés qu'une fois
par pas de temps, après la boucle.
"""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from feeder_analyzer.controllers.devices import (
    capacitor_decide,
    check_voltage_limits,
    node_on_kvar,
    regulator_decide,
)
from feeder_analyzer.controllers.inverter_functions import NOMINAL_FREQUENCY_HZ, pv_available_power, step_function
from feeder_analyzer.errors import EmptySweep
from feeder_analyzer.models.devices import DeviceActionLog, TapAction
from feeder_analyzer.models.inverter import (
    FunctionKind,
    InverterFunctionConfig,
    InverterRating,
    InverterState,
    initial_state,
)
from feeder_analyzer.models.network import PHASE_INDEX
from feeder_analyzer.models.run import HarmonicSnapshot, RunResult, TimestepResult
from feeder_analyzer.models.scenario import DeviceOrder, Scenario
from feeder_analyzer.models.solution import Solution
from feeder_analyzer.solvers.harmonics import harmonic_solution
from feeder_analyzer.solvers.power_flow import (
    build_injections,
    cap_array,
    solve,
    tap_array,
    total_losses,
)
from feeder_analyzer.utils.helpers import get_logger, unique_label


logger = get_logger(__name__)

BASELINE_LABEL = "baseline"

# Le gain de boucle de la courbe volt-Watt peut dépasser 1 sur une liaison résistive
DAMPED_P_FUNCTIONS = {FunctionKind.VOLT_WATT, FunctionKind.VOLT_WATT_RATE_LIMIT}


@dataclass
class RunState:
    """État mutable d'une série: positions des appareils, mémoire des onduleurs, journal."""
    taps: np.ndarray
    caps: np.ndarray
    inverter_states: Dict[str, InverterState] = field(default_factory=dict)
    last_q: Dict[str, float] = field(default_factory=dict)
    v_warm: Optional[np.ndarray] = None
    log: DeviceActionLog = field(default_factory=DeviceActionLog)

    @classmethod
    def initial(cls, scenario: Scenario) -> "RunState":
        network = scenario.network
        return cls(taps=tap_array(network), caps=cap_array(network))


@dataclass
class _LoopOutcome:
    solution: Solution
    p_avail: Dict[str, float]
    p_kw: Dict[str, float]
    q_kvar: Dict[str, float]
    candidates: Dict[str, InverterState]
    control_converged: bool
    iterations: int


def _pv_voltage(solution: Solution, scenario: Scenario, unit) -> float:
    return solution.mean_voltage_pu(unit.bus, scenario.network.pv_phases(unit))


def _apply(action, scenario: Scenario, state: RunState) -> None:
    network = scenario.network
    if isinstance(action, TapAction):
        k = [r.id for r in network.regulators].index(action.device)
        state.taps[k, PHASE_INDEX[action.phase]] = action.position
    else:
        k = [c.id for c in network.capacitors].index(action.device)
        for phase in action.phase:
            state.caps[k, PHASE_INDEX[phase]] = action.new_state


def _decide_devices(solution: Solution, scenario: Scenario, state: RunState, counters,
                    t: int, log: Optional[DeviceActionLog], day: int) -> int:
    """Décisions des appareils sur une solution figée; retourne le nombre d'actions appliquées."""
    network = scenario.network

    def regulators():
        # De l'amont vers l'aval; un régulateur en aval d'un autre qui manoeuvre attend la solution suivante
        actions = []
        acting: List[str] = []
        order = sorted(range(len(network.regulators)),
                       key=lambda k: network.bus_index[network.regulators[k].to_bus])
        for k in order:
            reg = network.regulators[k]
            if any(bus in acting for bus in network.upstream_buses(reg.to_bus)):
                continue
            positions = {p: int(state.taps[k, PHASE_INDEX[p]]) for p in reg.phases}
            decision = regulator_decide(solution, reg, positions, counters)
            if decision.actions:
                acting.append(reg.to_bus)
            actions.append(decision)
        return actions

    def capacitors():
        actions = []
        for k, cap in enumerate(network.capacitors):
            states = {p: bool(state.caps[k, PHASE_INDEX[p]]) for p in cap.phases}
            node_total = node_on_kvar(network, state.caps).get(cap.bus, 0.0)
            decision = capacitor_decide(solution, cap, states, counters, node_total)
            for action in decision.actions:
                _apply(action, scenario, state)
            actions.append(decision)
        return actions

    groups = [regulators, capacitors]
    if scenario.control.device_order == DeviceOrder.CAPACITORS_FIRST:
        groups.reverse()

    applied = 0
    for group in groups:
        decisions = group()
        count = 0
        for decision in decisions:
            for device, phase, kind in decision.notes:
                if log is not None:
                    log.note(t, device, phase, kind)
            for action in decision.actions:
                if isinstance(action, TapAction):
                    _apply(action, scenario, state)
                if log is not None:
                    log.append(t, day, action)
                logger.debug(f"t={t} {action}")
                count += 1
        applied += count
        if count:
            # Le groupe suivant décidera sur la solution recalculée
            break
    return applied


def _control_loop(scenario: Scenario, t: int, state: RunState, record: bool) -> _LoopOutcome:
    """Point fixe d'un pas de temps.

    Les appareils ne décident que sur une solution où P et Q des onduleurs sont
    stabilisés; une seule décision (un groupe d'appareils) par solution. Les
    sorties retenues sont les consignes exactes des fonctions d'onduleur, sur
    lesquelles la dernière solution a été calculée.
    """
    network = scenario.network
    control = scenario.control
    day = scenario.day(t)
    log = state.log if record else DeviceActionLog()
    counters = log.counters(day)
    multipliers = scenario.load_multipliers_at(t)
    f_hz = float(scenario.frequency[t]) if scenario.frequency is not None else NOMINAL_FREQUENCY_HZ

    units = list(network.pv_units) if scenario.pv_enabled else []
    p_avail = {
        u.id: pv_available_power(float(scenario.irradiance[t]), float(scenario.temperature[t]),
                                 u.p_rated_kW, u.temp_coeff_per_degC)
        for u in units
    }
    # Démarrage depuis les sorties du pas précédent (0 à froid)
    p_cur = {u.id: _previous_p(state, u.id) for u in units}
    q_cur = {u.id: state.last_q.get(u.id, 0.0) for u in units}
    damp_p = {u.id: scenario.function_for(u.id).function in DAMPED_P_FUNCTIONS for u in units}
    candidates: Dict[str, InverterState] = {}
    solution = None
    commit = False

    for iteration in range(1, control.max_iterations + 1):
        injections = build_injections(network, multipliers, {u: (p_cur[u], q_cur[u]) for u in p_cur})
        solution = solve(network, injections, state.taps.copy(), state.caps.copy(), v_init=state.v_warm,
                         tolerance_pu=control.power_flow_tolerance_pu,
                         max_iterations=control.power_flow_max_iterations)
        if not solution.converged:
            logger.warning(f"Pas {t}: écoulement de charge non convergé "
                           f"(écart {solution.max_mismatch_pu:.2e} pu)")
            state.v_warm = None
            return _LoopOutcome(solution, p_avail, dict(p_cur), dict(q_cur), {}, False, iteration)
        state.v_warm = solution.v

        if commit:
            # Solution recalculée sur les consignes exactes
            commit = False
            if _decide_devices(solution, scenario, state, counters, t, log, day) == 0:
                return _LoopOutcome(solution, p_avail, dict(p_cur), dict(q_cur), candidates, True, iteration)
            continue

        p_new, q_new = {}, {}
        for unit in units:
            v_pu = _pv_voltage(solution, scenario, unit)
            prior = state.inverter_states.get(unit.id) or initial_state(v_pu)
            out = step_function(scenario.function_for(unit.id), v_pu, p_avail[unit.id], prior,
                                InverterRating.of(unit), scenario.dt_s, f_hz)
            candidates[unit.id] = out.state
            p_new[unit.id], q_new[unit.id] = out.p_kw, out.q_kvar
        dq = max((abs(q_new[u] - q_cur[u]) for u in q_cur), default=0.0)
        dp = max((abs(p_new[u] - p_cur[u]) for u in p_cur), default=0.0)

        if dq < control.q_tol_kvar and dp < control.p_tol_kw:
            if p_new == p_cur and q_new == q_cur:
                if _decide_devices(solution, scenario, state, counters, t, log, day) == 0:
                    return _LoopOutcome(solution, p_avail, dict(p_cur), dict(q_cur), candidates, True, iteration)
                continue
            p_cur, q_cur = dict(p_new), dict(q_new)
            commit = True
            continue

        for u in q_cur:
            q_cur[u] += control.damping * (q_new[u] - q_cur[u])
            if damp_p[u]:
                p_cur[u] += control.damping * (p_new[u] - p_cur[u])
            else:
                p_cur[u] = p_new[u]

    logger.warning(f"Pas {t}: boucle de contrôle non convergée après {control.max_iterations} itérations")
    return _LoopOutcome(solution, p_avail, dict(p_cur), dict(q_cur), candidates, False, control.max_iterations)


def _previous_p(state: RunState, unit_id: str) -> float:
    previous = state.inverter_states.get(unit_id)
    return previous.p_prev if previous is not None else 0.0


def settle_devices(scenario: Scenario, state: RunState) -> None:
    """Amène régulateurs et condensateurs à leur point fixe aux conditions de t = 0, sans journaliser."""
    outcome = _control_loop(scenario, 0, state, record=False)
    logger.debug(f"Positions initiales après {outcome.iterations} itération(s): "
                 f"prises={state.taps.tolist()}")


def run_timestep(scenario: Scenario, t: int, state: RunState) -> TimestepResult:
    """Résout le pas t jusqu'au point fixe et avance les états dynamiques une fois."""
    network = scenario.network
    outcome = _control_loop(scenario, t, state, record=True)
    solution = outcome.solution

    for unit_id, candidate in outcome.candidates.items():
        state.inverter_states[unit_id] = replace(candidate, q_prev=outcome.q_kvar[unit_id],
                                                 p_prev=outcome.p_kw[unit_id])
        state.last_q[unit_id] = outcome.q_kvar[unit_id]

    if solution.converged:
        p_loss, q_loss = total_losses(solution)
        violations = check_voltage_limits(solution, network, t)
    else:
        p_loss, q_loss = float("nan"), float("nan")
        violations = []

    ids = [u.id for u in network.pv_units]
    return TimestepResult(
        timestep=t,
        time_s=scenario.time_s(t),
        solution=solution,
        p_avail_kw=np.array([outcome.p_avail.get(u, 0.0) for u in ids]),
        p_kw=np.array([outcome.p_kw.get(u, 0.0) for u in ids]),
        q_kvar=np.array([outcome.q_kvar.get(u, 0.0) for u in ids]),
        tap_positions=solution.tap_positions.copy(),
        cap_states=solution.cap_kvar > 0,
        p_loss_kw=p_loss,
        q_loss_kvar=q_loss,
        violations=violations,
        converged=solution.converged,
        control_converged=outcome.control_converged,
        control_iterations=outcome.iterations,
    )


def _harmonic_snapshots(scenario: Scenario, results: List[TimestepResult]) -> List[HarmonicSnapshot]:
    config = scenario.harmonics
    network = scenario.network
    snapshots = []
    spectra = {u.id: config.pv_spectra.get(u.id, config.spectrum) for u in network.pv_units}
    for time_s in config.snapshots_s:
        t = int(round(time_s / scenario.dt_s))
        if not 0 <= t < len(results):
            logger.warning(f"Instantané harmonique hors de la série ignoré: {time_s} s")
            continue
        record = results[t]
        outputs = {u.id: (float(record.p_kw[k]), float(record.q_kvar[k]))
                   for k, u in enumerate(network.pv_units)} if scenario.pv_enabled else {}
        result = harmonic_solution(network, record.solution, spectra, config.orders,
                                   config.monitored or None, pv_outputs=outputs)
        snapshots.append(HarmonicSnapshot(t, record.time_s, result))
    return snapshots


def run_series(scenario: Scenario) -> RunResult:
    """Traite les pas de temps dans l'ordre; déterministe."""
    started = time.perf_counter()
    label = scenario.run_label
    logger.info(f"Simulation '{label}': {scenario.n_steps} pas de {scenario.dt_s:g} s "
                f"(PV {'actif' if scenario.pv_enabled else 'exclu'})")
    state = RunState.initial(scenario)
    if scenario.control.settle_initial:
        settle_devices(scenario, state)
        state.v_warm = None
    initial_taps, initial_caps = state.taps.copy(), state.caps.copy()

    results = [run_timestep(scenario, t, state) for t in range(scenario.n_steps)]
    harmonics = _harmonic_snapshots(scenario, results) if scenario.harmonics.snapshots_s else []

    run = RunResult(
        label=label,
        network=scenario.network,
        function=scenario.function if scenario.pv_enabled else None,
        pv_enabled=scenario.pv_enabled,
        dt_s=scenario.dt_s,
        timesteps=results,
        log=state.log,
        initial_taps=initial_taps,
        initial_caps=initial_caps,
        final_taps=state.taps.copy(),
        final_caps=state.caps.copy(),
        harmonics=harmonics,
        wall_clock_s=time.perf_counter() - started,
    )
    if run.n_not_converged:
        logger.warning(f"'{label}': {run.n_not_converged} pas non convergés")
    if run.n_control_unconverged:
        logger.warning(f"'{label}': {run.n_control_unconverged} pas avec boucle de contrôle non convergée")
    logger.info(f"Simulation '{label}' terminée en {run.wall_clock_s:.1f} s, "
                f"{len(run.log)} manoeuvre(s) d'appareils")
    return run


def sweep_functions(scenario: Scenario, configs: Sequence[InverterFunctionConfig],
                    parallel: int = 1) -> Dict[str, RunResult]:
    """Une série par configuration plus la référence sans PV, profils identiques.

    Le dictionnaire retourné commence par la référence (clé "baseline"), puis
    suit l'ordre des configurations.
    """
    if not configs:
        raise EmptySweep("la liste de fonctions à comparer est vide")
    labelled: Dict[str, Scenario] = {BASELINE_LABEL: scenario.baseline()}
    for config in configs:
        label = unique_label(config.display_label, labelled)
        labelled[label] = scenario.with_function(config, label)

    logger.info(f"Balayage de {len(configs)} fonction(s) + référence, {parallel} processus")
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            runs = list(pool.map(run_series, labelled.values()))
    else:
        runs = [run_series(s) for s in labelled.values()]
    return dict(zip(labelled.keys(), runs))
