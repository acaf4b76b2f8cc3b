"""Indicateurs d'impact: tallies de manoeuvres, DCF, OMC, CII, pertes et tensions.

Les fonctions opèrent sur `RunData`, vue aplatie d'une série qui se construit
soit depuis un `RunResult` en mémoire, soit depuis un bundle CSV relu; les deux
chemins produisent des rapports identiques.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from feeder_analyzer.errors import ConfigurationError, DurationMismatch, EmptyList, UndefinedBaseline
from feeder_analyzer.models.feeder import PHASES
from feeder_analyzer.models.devices import DeviceActionLog
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.report import (
    CapacitorImpact,
    EnergySummary,
    ImpactReport,
    LossSummary,
    RegulatorImpact,
    SweepReport,
    SwitchTally,
    VoltageSummary,
)
from feeder_analyzer.models.run import RunResult
from feeder_analyzer.utils.helpers import get_logger


logger = get_logger(__name__)

MIDDAY_WINDOW_H = (10.0, 14.0)
DEFAULT_OMC = 1.0


@dataclass(eq=False)
class RunData:
    """Séries et totaux d'une série nécessaires aux indicateurs."""
    label: str
    function: Optional[str]
    pv_enabled: bool
    dt_s: float
    time_s: np.ndarray
    p_loss_kw: np.ndarray
    q_loss_kvar: np.ndarray
    pv_available_kw: np.ndarray
    pv_delivered_kw: np.ndarray
    v_max_pu: np.ndarray
    v_min_pu: np.ndarray
    upper_violations: int
    lower_violations: int
    tally: SwitchTally
    cap_kvar: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    regulators: List[Tuple[str, List[str], bool]] = field(default_factory=list)
    capacitors: List[Tuple[str, List[str]]] = field(default_factory=list)
    not_converged: int = 0
    control_unconverged: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.time_s)

    @classmethod
    def from_run(cls, run: RunResult) -> "RunData":
        network = run.network
        steps = run.timesteps
        p_loss, q_loss = run.losses()
        extremes = np.array([r.solution.voltage_extremes() for r in steps]).reshape(len(steps), 2)
        violations = [v for r in steps for v in r.violations]
        cap_kvar = {
            cap.id: {p: np.array([r.cap_kvar[k, PHASE_INDEX[p]] for r in steps]) for p in cap.phases}
            for k, cap in enumerate(network.capacitors)
        }
        return cls(
            label=run.label,
            function=run.function.function.value if run.function is not None else None,
            pv_enabled=run.pv_enabled,
            dt_s=run.dt_s,
            time_s=run.time_s(),
            p_loss_kw=p_loss,
            q_loss_kvar=q_loss,
            pv_available_kw=np.array([np.sum(r.p_avail_kw) for r in steps]),
            pv_delivered_kw=np.array([np.sum(r.p_kw) for r in steps]),
            v_max_pu=extremes[:, 0],
            v_min_pu=extremes[:, 1],
            upper_violations=sum(1 for v in violations if v.bound == "upper"),
            lower_violations=sum(1 for v in violations if v.bound == "lower"),
            tally=tally_from_log(run.log, network, len(steps) * run.dt_s),
            cap_kvar=cap_kvar,
            regulators=regulator_inventory(network),
            capacitors=[(c.id, c.phases) for c in network.capacitors],
            not_converged=run.n_not_converged,
            control_unconverged=run.n_control_unconverged,
        )


RunLike = Union[RunResult, RunData]


def as_run_data(run: RunLike) -> RunData:
    return run if isinstance(run, RunData) else RunData.from_run(run)


def regulator_inventory(network: Network) -> List[Tuple[str, List[str], bool]]:
    return [(r.id, list(r.phases), r.is_substation_ltc) for r in network.regulators]


def tally_from_log(log: DeviceActionLog, network: Network, duration_s: float) -> SwitchTally:
    taps = {r.id: {p: log.total(r.id, p) for p in r.phases} for r in network.regulators}
    switches = {c.id: 0 for c in network.capacitors}
    for _, action in log.switch_actions():
        switches[action.device] += 1
    return SwitchTally(duration_s=duration_s, taps=taps, cap_switches=switches)


def tally_from_rows(rows: pd.DataFrame, regulators: Sequence[Tuple[str, List[str], bool]],
                    capacitors: Sequence[Tuple[str, List[str]]], duration_s: float) -> SwitchTally:
    """Ré-agrège un journal d'actions relu depuis devices.csv."""
    taps = {rid: {p: 0 for p in phases} for rid, phases, _ in regulators}
    switches = {cid: 0 for cid, _ in capacitors}
    for device, phase, action, delta in zip(rows["device"], rows["phase"], rows["action"], rows["delta"]):
        if action == "tap":
            taps.setdefault(device, {}).setdefault(phase, 0)
            taps[device][phase] += abs(int(delta))
        else:
            switches[device] = switches.get(device, 0) + 1
    return SwitchTally(duration_s=duration_s, taps=taps, cap_switches=switches)


def device_cost_factor(with_pv: SwitchTally, baseline: SwitchTally, device: str) -> float:
    """Manoeuvres avec PV / manoeuvres sans PV (phases A+B+C pour un régulateur)."""
    if with_pv.duration_s != baseline.duration_s:
        raise DurationMismatch(f"durées différentes: {with_pv.duration_s} s / {baseline.duration_s} s")
    base = baseline.device_total(device)
    if base == 0:
        raise UndefinedBaseline("aucune manoeuvre de référence", locus=f"appareil {device}")
    return with_pv.device_total(device) / base


def scaled_omc(omc_baseline: float, dcf: Optional[float]) -> float:
    if dcf is None:
        raise UndefinedBaseline("DCF indéfini, OMC non calculable")
    if omc_baseline < 0:
        raise ConfigurationError(f"OMC de référence négatif: {omc_baseline}")
    return omc_baseline * dcf


def circuit_impact_index(dcfs_with_pv: Union[Sequence[Optional[float]], Mapping[str, Optional[float]]],
                         omc: Optional[Mapping[str, float]] = None) -> float:
    """Somme des OMC mis à l'échelle sur somme des OMC de référence.

    Avec des OMC égaux (cas par défaut) c'est la moyenne des DCF. Les DCF
    indéfinis sont exclus avec un avertissement.
    """
    if not isinstance(dcfs_with_pv, Mapping):
        dcfs_with_pv = {str(k): v for k, v in enumerate(dcfs_with_pv)}
    if not dcfs_with_pv:
        raise EmptyList("aucun régulateur pour le CII")
    defined = {k: v for k, v in dcfs_with_pv.items() if v is not None}
    excluded = sorted(set(dcfs_with_pv) - set(defined))
    if excluded:
        logger.warning(f"DCF indéfinis exclus du CII: {', '.join(excluded)}")
    if not defined:
        raise UndefinedBaseline("tous les DCF sont indéfinis")
    weights = {k: (omc or {}).get(k, DEFAULT_OMC) for k in defined}
    total = sum(weights.values())
    if total <= 0:
        raise ConfigurationError("somme des OMC de référence nulle")
    return sum(weights[k] * defined[k] for k in defined) / total


def _check_grid(run: RunData, baseline: RunData) -> None:
    if run.n_steps != baseline.n_steps or run.dt_s != baseline.dt_s:
        raise DurationMismatch(f"grilles différentes: {run.n_steps}x{run.dt_s:g} s / "
                               f"{baseline.n_steps}x{baseline.dt_s:g} s")


def _masked_delta(values: np.ndarray, reference: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        return 0.0
    return float(np.nanmean(values[mask] - reference[mask]))


def loss_summary(run: RunLike, baseline: RunLike,
                 midday_window_h: Tuple[float, float] = MIDDAY_WINDOW_H) -> LossSummary:
    """Statistiques de pertes et écarts à la référence sur les pas avec production PV."""
    run, baseline = as_run_data(run), as_run_data(baseline)
    _check_grid(run, baseline)
    generating = run.pv_available_kw > 0
    hours = (run.time_s % 86400.0) / 3600.0
    midday = generating & (hours >= midday_window_h[0]) & (hours < midday_window_h[1])
    return LossSummary(
        mean_p_loss_kw=float(np.nanmean(run.p_loss_kw)),
        min_p_loss_kw=float(np.nanmin(run.p_loss_kw)),
        mean_q_loss_kvar=float(np.nanmean(run.q_loss_kvar)),
        min_q_loss_kvar=float(np.nanmin(run.q_loss_kvar)),
        baseline_mean_p_loss_kw=float(np.nanmean(baseline.p_loss_kw)),
        baseline_mean_q_loss_kvar=float(np.nanmean(baseline.q_loss_kvar)),
        pv_steps=int(np.sum(generating)),
        delta_p_loss_kw=_masked_delta(run.p_loss_kw, baseline.p_loss_kw, generating),
        delta_q_loss_kvar=_masked_delta(run.q_loss_kvar, baseline.q_loss_kvar, generating),
        midday_delta_p_loss_kw=_masked_delta(run.p_loss_kw, baseline.p_loss_kw, midday),
        midday_delta_q_loss_kvar=_masked_delta(run.q_loss_kvar, baseline.q_loss_kvar, midday),
    )


def voltage_summary(run: RunLike) -> VoltageSummary:
    run = as_run_data(run)
    return VoltageSummary(
        v_max_pu=float(np.nanmax(run.v_max_pu)),
        v_min_pu=float(np.nanmin(run.v_min_pu)),
        upper_violations=run.upper_violations,
        lower_violations=run.lower_violations,
    )


def energy_summary(run: RunLike) -> EnergySummary:
    run = as_run_data(run)
    hours = run.dt_s / 3600.0
    available = float(np.sum(run.pv_available_kw) * hours)
    delivered = float(np.sum(run.pv_delivered_kw) * hours)
    return EnergySummary(available_kwh=available, delivered_kwh=delivered,
                         curtailed_kwh=available - delivered)


def capacitor_mean_kvar(run: RunLike) -> Dict[str, Dict[str, float]]:
    """kVAR moyens injectés par banc et par phase sur la série."""
    run = as_run_data(run)
    return {bank: {p: float(np.mean(series)) for p, series in phases.items()}
            for bank, phases in run.cap_kvar.items()}


def _dcf_or_none(with_pv: SwitchTally, baseline: SwitchTally, device: str) -> Optional[float]:
    try:
        return device_cost_factor(with_pv, baseline, device)
    except UndefinedBaseline:
        return None


def build_impact_report(run: RunLike, baseline: RunLike, omc_baseline: Optional[Mapping[str, float]] = None,
                        include_capacitors_in_cii: bool = False,
                        is_baseline: bool = False) -> ImpactReport:
    run, baseline = as_run_data(run), as_run_data(baseline)
    _check_grid(run, baseline)
    omc_baseline = omc_baseline or {}

    regulators = []
    dcfs: Dict[str, Optional[float]] = {}
    for device, phases, is_ltc in run.regulators:
        dcf = _dcf_or_none(run.tally, baseline.tally, device)
        omc = omc_baseline.get(device, DEFAULT_OMC)
        dcfs[device] = dcf
        regulators.append(RegulatorImpact(
            device=device,
            is_substation_ltc=is_ltc,
            taps_with_pv={p: run.tally.taps.get(device, {}).get(p, 0) for p in phases},
            taps_baseline={p: baseline.tally.taps.get(device, {}).get(p, 0) for p in phases},
            total_with_pv=run.tally.device_total(device),
            total_baseline=baseline.tally.device_total(device),
            dcf=dcf,
            omc_baseline=omc,
            omc_scaled=scaled_omc(omc, dcf) if dcf is not None else None,
        ))

    run_kvar, base_kvar = capacitor_mean_kvar(run), capacitor_mean_kvar(baseline)
    capacitors = []
    for device, _ in run.capacitors:
        dcf = _dcf_or_none(run.tally, baseline.tally, device)
        if include_capacitors_in_cii:
            dcfs[device] = dcf
        capacitors.append(CapacitorImpact(
            device=device,
            switches_with_pv=run.tally.cap_switches.get(device, 0),
            switches_baseline=baseline.tally.cap_switches.get(device, 0),
            dcf=dcf,
            mean_kvar=run_kvar.get(device, {}),
            mean_kvar_baseline=base_kvar.get(device, {}),
        ))

    undefined = sorted(k for k, v in dcfs.items() if v is None)
    if is_baseline:
        cii: Optional[float] = 1.0
    elif dcfs and len(undefined) < len(dcfs):
        cii = circuit_impact_index(dcfs, omc_baseline)
    else:
        cii = None

    return ImpactReport(
        label=run.label,
        function=run.function,
        cii=cii,
        cii_devices=sorted(dcfs),
        undefined_dcf=undefined,
        regulators=regulators,
        capacitors=capacitors,
        losses=loss_summary(run, baseline),
        voltages=voltage_summary(run),
        energy=energy_summary(run),
        not_converged_steps=run.not_converged,
        control_unconverged_steps=run.control_unconverged,
    )


def build_sweep_report(runs: Mapping[str, RunLike], baseline_label: str, feeder: str,
                       omc_baseline: Optional[Mapping[str, float]] = None,
                       include_capacitors_in_cii: bool = False) -> SweepReport:
    data = {label: as_run_data(run) for label, run in runs.items()}
    baseline = data[baseline_label]
    reports = [
        build_impact_report(run, baseline, omc_baseline, include_capacitors_in_cii,
                            is_baseline=(label == baseline_label))
        for label, run in data.items()
    ]
    return SweepReport(feeder=feeder, baseline=baseline_label,
                       include_capacitors_in_cii=include_capacitors_in_cii, runs=reports)


def comparison_table(report: SweepReport) -> pd.DataFrame:
    """Une ligne par fonction: prises par régulateur et par phase, manoeuvres de bancs, CII, pertes."""
    rows = []
    for run in report.runs:
        row = {"function": run.label}
        for reg in run.regulators:
            for phase in PHASES:
                if phase in reg.taps_with_pv:
                    row[f"{reg.device}.{phase}"] = reg.taps_with_pv[phase]
            row[f"{reg.device}.total"] = reg.total_with_pv
        for cap in run.capacitors:
            row[f"{cap.device}.switches"] = cap.switches_with_pv
        row["cii"] = run.cii
        for reg in run.regulators:
            row[f"dcf.{reg.device}"] = reg.dcf
        for cap in run.capacitors:
            row[f"dcf.{cap.device}"] = cap.dcf
        row["mean_P_loss_kW"] = run.losses.mean_p_loss_kw
        row["mean_Q_loss_kVAR"] = run.losses.mean_q_loss_kvar
        row["delta_P_loss_kW"] = run.losses.delta_p_loss_kw
        row["delta_Q_loss_kVAR"] = run.losses.delta_q_loss_kvar
        row["midday_delta_P_loss_kW"] = run.losses.midday_delta_p_loss_kw
        row["v_max_pu"] = run.voltages.v_max_pu
        row["v_min_pu"] = run.voltages.v_min_pu
        row["violations"] = run.voltages.upper_violations + run.voltages.lower_violations
        row["curtailed_kWh"] = run.energy.curtailed_kwh
        rows.append(row)
    return pd.DataFrame(rows)
