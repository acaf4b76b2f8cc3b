"""Écriture et relecture des bundles de résultats (CSV + JSON).

Dialecte CSV: virgule, point décimal, fin de ligne LF, UTF-8, en-tête
obligatoire. Les flottants sont écrits au plus court aller-retour et relus
avec `float_precision="round_trip"`, si bien que les indicateurs recalculés
depuis un bundle sont identiques à ceux du chemin en mémoire.

Arborescence d'un dossier de sortie:

    <out>/manifest.json          ordre des séries, référence, options de métriques
    <out>/report.json            SweepReport
    <out>/comparison.csv         une ligne par série
    <out>/plot_*.csv             données de tracé
    <out>/<label>/run.json       métadonnées déterministes de la série
    <out>/<label>/*.csv          séries temporelles et journal
"""
import json
import os
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from feeder_analyzer.analysis.metrics import RunData, comparison_table, tally_from_rows
from feeder_analyzer.errors import BundleError, MissingBaseline, MissingFile
from feeder_analyzer.models.devices import TapAction
from feeder_analyzer.models.feeder import PHASES
from feeder_analyzer.models.network import PHASE_INDEX
from feeder_analyzer.models.report import SweepReport
from feeder_analyzer.models.run import RunResult
from feeder_analyzer.solvers.harmonics import thd
from feeder_analyzer.utils.helpers import create_directory_if_not_exists, get_logger


logger = get_logger(__name__)

BUNDLE_SCHEMA_VERSION = "1.0"
MANIFEST_FILE = "manifest.json"
RUN_FILE = "run.json"
REPORT_FILE = "report.json"
COMPARISON_FILE = "comparison.csv"

VOLTAGES_CSV = "voltages.csv"
INVERTERS_CSV = "inverters.csv"
DEVICES_CSV = "devices.csv"
LOSSES_CSV = "losses.csv"
CAPACITORS_CSV = "capacitors.csv"
VIOLATIONS_CSV = "violations.csv"
NOTES_CSV = "notes.csv"
HARMONICS_CSV = "harmonics.csv"
THD_CSV = "thd.csv"

DEVICE_COLUMNS = ["timestep", "time_s", "device", "phase", "action", "delta", "position"]
VIOLATION_COLUMNS = ["timestep", "time_s", "bus", "phase", "v_pu", "bound"]
NOTE_COLUMNS = ["timestep", "device", "phase", "kind"]


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def _read_csv(path: str, **kwargs) -> pd.DataFrame:
    if not os.path.exists(path):
        raise MissingFile("fichier de bundle introuvable", locus=path)
    return pd.read_csv(path, float_precision="round_trip", encoding="utf-8", **kwargs)


def _write_json(payload: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise MissingFile("fichier de bundle introuvable", locus=path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise BundleError(f"JSON illisible: {e}", locus=path)


def run_directory(out_dir: str, label: str) -> str:
    return os.path.join(out_dir, label.replace(os.sep, "_"))


class BundleWriter:
    """Sérialise les séries et rapports d'un dossier de sortie."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        create_directory_if_not_exists(out_dir)

    def write_run(self, run: RunResult) -> str:
        """Écrit le bundle d'une série et retourne son dossier."""
        directory = run_directory(self.out_dir, run.label)
        create_directory_if_not_exists(directory)
        network = run.network
        steps = run.timesteps
        times = run.time_s()
        index = pd.DataFrame({"timestep": [r.timestep for r in steps], "time_s": times})

        voltages = pd.DataFrame([r.solution.node_voltages() for r in steps], columns=network.node_labels())
        _write_csv(pd.concat([index, voltages], axis=1), os.path.join(directory, VOLTAGES_CSV))

        inverter_rows = []
        for r in steps:
            for k, unit in enumerate(network.pv_units):
                inverter_rows.append({
                    "timestep": r.timestep,
                    "time_s": r.time_s,
                    "pv": unit.id,
                    "p_avail_kW": float(r.p_avail_kw[k]),
                    "P_kW": float(r.p_kw[k]),
                    "Q_kVAR": float(r.q_kvar[k]),
                    "v_pu": r.solution.mean_voltage_pu(unit.bus, network.pv_phases(unit)),
                })
        _write_csv(pd.DataFrame(inverter_rows, columns=["timestep", "time_s", "pv", "p_avail_kW",
                                                        "P_kW", "Q_kVAR", "v_pu"]),
                   os.path.join(directory, INVERTERS_CSV))

        device_rows = []
        for t, action in run.log.entries:
            if isinstance(action, TapAction):
                device_rows.append([t, t * run.dt_s, action.device, action.phase, "tap",
                                    action.delta, action.position])
            else:
                device_rows.append([t, t * run.dt_s, action.device, action.phase,
                                    "switch_on" if action.new_state else "switch_off",
                                    0, int(action.new_state)])
        _write_csv(pd.DataFrame(device_rows, columns=DEVICE_COLUMNS), os.path.join(directory, DEVICES_CSV))

        p_loss, q_loss = run.losses()
        losses = index.assign(
            P_loss_kW=p_loss,
            Q_loss_kVAR=q_loss,
            converged=[r.converged for r in steps],
            control_converged=[r.control_converged for r in steps],
            control_iterations=[r.control_iterations for r in steps],
        )
        _write_csv(losses, os.path.join(directory, LOSSES_CSV))

        cap_columns = {}
        for k, cap in enumerate(network.capacitors):
            for phase in cap.phases:
                cap_columns[f"{cap.id}.{phase}"] = [float(r.cap_kvar[k, PHASE_INDEX[phase]]) for r in steps]
        _write_csv(pd.concat([index, pd.DataFrame(cap_columns)], axis=1),
                   os.path.join(directory, CAPACITORS_CSV))

        violation_rows = [[v.timestep, v.timestep * run.dt_s, v.bus, v.phase, v.v_pu, v.bound]
                          for r in steps for v in r.violations]
        _write_csv(pd.DataFrame(violation_rows, columns=VIOLATION_COLUMNS),
                   os.path.join(directory, VIOLATIONS_CSV))

        note_rows = [[n.timestep, n.device, n.phase, n.kind.value] for n in run.log.notes]
        _write_csv(pd.DataFrame(note_rows, columns=NOTE_COLUMNS), os.path.join(directory, NOTES_CSV))

        if run.harmonics:
            self._write_harmonics(run, directory)

        _write_json(run_metadata(run), os.path.join(directory, RUN_FILE))
        logger.info(f"Bundle écrit: {directory}")
        return directory

    def _write_harmonics(self, run: RunResult, directory: str) -> None:
        rows, thd_rows = [], []
        for snapshot in run.harmonics:
            result = snapshot.result
            for e, element in enumerate(result.elements):
                phases = [PHASES[j] for j in np.flatnonzero(result.phase_mask[e])]
                for o, order in enumerate(result.orders):
                    for phase in phases:
                        j = PHASE_INDEX[phase]
                        rows.append([snapshot.timestep, snapshot.time_s, element, phase, order,
                                     float(result.v_pu[e, o, j]), float(result.i_a[e, o, j])])
                thd_v, thd_i = thd(result, element)
                for phase in phases:
                    j = PHASE_INDEX[phase]
                    thd_rows.append([snapshot.timestep, snapshot.time_s, element, phase,
                                     float(thd_v[j]), float(thd_i[j])])
        _write_csv(pd.DataFrame(rows, columns=["timestep", "time_s", "element", "phase", "order",
                                               "v_pu", "i_A"]),
                   os.path.join(directory, HARMONICS_CSV))
        _write_csv(pd.DataFrame(thd_rows, columns=["timestep", "time_s", "element", "phase",
                                                   "thd_v_pct", "thd_i_pct"]),
                   os.path.join(directory, THD_CSV))

    def write_manifest(self, feeder: str, baseline: str, labels: List[str],
                       omc_baseline: Optional[Mapping[str, float]] = None,
                       include_capacitors_in_cii: bool = False) -> None:
        _write_json({
            "schema_version": BUNDLE_SCHEMA_VERSION,
            "feeder": feeder,
            "baseline": baseline,
            "runs": list(labels),
            "omc_baseline": dict(omc_baseline or {}),
            "include_capacitors_in_cii": include_capacitors_in_cii,
        }, os.path.join(self.out_dir, MANIFEST_FILE))

    def write_report(self, report: SweepReport, runs: Mapping[str, RunData]) -> None:
        """Rapport JSON, tableau comparatif et fichiers de données de tracé."""
        _write_json(json.loads(report.json()), os.path.join(self.out_dir, REPORT_FILE))
        _write_csv(comparison_table(report), os.path.join(self.out_dir, COMPARISON_FILE))
        self._write_plots(report, runs)
        logger.info(f"Rapport écrit: {os.path.join(self.out_dir, REPORT_FILE)}")

    def _write_plots(self, report: SweepReport, runs: Mapping[str, RunData]) -> None:
        baseline = runs[report.baseline]
        time_s = pd.DataFrame({"time_s": baseline.time_s})
        losses = pd.DataFrame({label: run.p_loss_kw for label, run in runs.items()})
        _write_csv(pd.concat([time_s, losses], axis=1), os.path.join(self.out_dir, "plot_losses.csv"))

        voltage = {}
        for label, run in runs.items():
            voltage[f"{label}.v_max"] = run.v_max_pu
            voltage[f"{label}.v_min"] = run.v_min_pu
        _write_csv(pd.concat([time_s, pd.DataFrame(voltage)], axis=1),
                   os.path.join(self.out_dir, "plot_voltage.csv"))

        _write_csv(pd.DataFrame([{"function": r.label, "cii": r.cii} for r in report.runs],
                                columns=["function", "cii"]),
                   os.path.join(self.out_dir, "plot_cii.csv"))

        taps = [{"function": r.label, "regulator": reg.device, "phase": phase, "taps": count}
                for r in report.runs for reg in r.regulators for phase, count in reg.taps_with_pv.items()]
        _write_csv(pd.DataFrame(taps, columns=["function", "regulator", "phase", "taps"]),
                   os.path.join(self.out_dir, "plot_taps.csv"))


def _positions(network, array: np.ndarray, devices, cast) -> Dict[str, Dict[str, Any]]:
    return {d.id: {p: cast(array[k, PHASE_INDEX[p]]) for p in d.phases} for k, d in enumerate(devices)}


def run_metadata(run: RunResult) -> Dict[str, Any]:
    """Métadonnées déterministes (pas de durée d'exécution)."""
    network = run.network
    return {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "label": run.label,
        "feeder": network.name,
        "function": json.loads(run.function.json()) if run.function is not None else None,
        "pv_enabled": run.pv_enabled,
        "dt_s": run.dt_s,
        "n_steps": len(run.timesteps),
        "regulators": [{"id": r.id, "phases": list(r.phases), "is_substation_ltc": r.is_substation_ltc}
                       for r in network.regulators],
        "capacitors": [{"id": c.id, "phases": c.phases, "mode": c.mode.value} for c in network.capacitors],
        "pv_units": [u.id for u in network.pv_units],
        "initial_taps": _positions(network, run.initial_taps, network.regulators, int),
        "final_taps": _positions(network, run.final_taps, network.regulators, int),
        "initial_caps": _positions(network, run.initial_caps, network.capacitors, bool),
        "final_caps": _positions(network, run.final_caps, network.capacitors, bool),
        "not_converged_steps": run.n_not_converged,
        "control_unconverged_steps": run.n_control_unconverged,
    }


class BundleReader:
    """Relit un dossier de sortie et reconstruit les `RunData` depuis les CSV bruts."""

    def __init__(self, out_dir: str):
        if not os.path.isdir(out_dir):
            raise MissingFile("dossier de résultats introuvable", locus=out_dir)
        self.out_dir = out_dir

    def manifest(self) -> Dict[str, Any]:
        path = os.path.join(self.out_dir, MANIFEST_FILE)
        if os.path.exists(path):
            return _read_json(path)
        # Sans manifeste: toutes les séries du dossier, référence en tête
        labels, baseline = [], None
        for name in sorted(os.listdir(self.out_dir)):
            run_file = os.path.join(self.out_dir, name, RUN_FILE)
            if os.path.exists(run_file):
                meta = _read_json(run_file)
                labels.append(meta["label"])
                if not meta["pv_enabled"]:
                    baseline = meta["label"]
        if baseline is None:
            raise MissingBaseline("aucune série de référence sans PV", locus=self.out_dir)
        labels.remove(baseline)
        return {"feeder": _read_json(os.path.join(run_directory(self.out_dir, baseline), RUN_FILE))["feeder"],
                "baseline": baseline, "runs": [baseline] + labels,
                "omc_baseline": {}, "include_capacitors_in_cii": False}

    def read_runs(self) -> Dict[str, RunData]:
        manifest = self.manifest()
        baseline = manifest["baseline"]
        if not os.path.exists(os.path.join(run_directory(self.out_dir, baseline), RUN_FILE)):
            raise MissingBaseline(f"bundle de référence '{baseline}' absent", locus=self.out_dir)
        return {label: self.read_run(label) for label in manifest["runs"]}

    def read_run(self, label: str) -> RunData:
        directory = run_directory(self.out_dir, label)
        meta = _read_json(os.path.join(directory, RUN_FILE))
        dt_s = float(meta["dt_s"])
        n_steps = int(meta["n_steps"])
        regulators = [(r["id"], list(r["phases"]), bool(r["is_substation_ltc"])) for r in meta["regulators"]]
        capacitors = [(c["id"], list(c["phases"])) for c in meta["capacitors"]]

        losses = _read_csv(os.path.join(directory, LOSSES_CSV))
        voltages = _read_csv(os.path.join(directory, VOLTAGES_CSV))
        inverters = _read_csv(os.path.join(directory, INVERTERS_CSV))
        devices = _read_csv(os.path.join(directory, DEVICES_CSV),
                            dtype={"device": str, "phase": str, "action": str})
        capacitor_kvar = _read_csv(os.path.join(directory, CAPACITORS_CSV))
        violations = _read_csv(os.path.join(directory, VIOLATIONS_CSV), dtype={"bus": str, "phase": str})
        if len(losses) != n_steps or len(voltages) != n_steps:
            raise BundleError(f"nombre de pas incohérent avec {RUN_FILE}", locus=directory)

        nodes = voltages.drop(columns=["timestep", "time_s"]).to_numpy(dtype=float)
        units = meta["pv_units"]
        available = self._pv_matrix(inverters, "p_avail_kW", units, n_steps)
        delivered = self._pv_matrix(inverters, "P_kW", units, n_steps)

        function = meta["function"]
        return RunData(
            label=meta["label"],
            function=function["function"] if function else None,
            pv_enabled=bool(meta["pv_enabled"]),
            dt_s=dt_s,
            time_s=losses["time_s"].to_numpy(dtype=float),
            p_loss_kw=losses["P_loss_kW"].to_numpy(dtype=float),
            q_loss_kvar=losses["Q_loss_kVAR"].to_numpy(dtype=float),
            pv_available_kw=np.sum(available, axis=1),
            pv_delivered_kw=np.sum(delivered, axis=1),
            v_max_pu=np.max(nodes, axis=1),
            v_min_pu=np.min(nodes, axis=1),
            upper_violations=int(np.sum(violations["bound"] == "upper")),
            lower_violations=int(np.sum(violations["bound"] == "lower")),
            tally=tally_from_rows(devices, regulators, capacitors, n_steps * dt_s),
            cap_kvar={cid: {p: capacitor_kvar[f"{cid}.{p}"].to_numpy(dtype=float) for p in phases}
                      for cid, phases in capacitors},
            regulators=regulators,
            capacitors=capacitors,
            not_converged=int(np.sum(~losses["converged"].astype(bool))),
            control_unconverged=int(np.sum(~losses["control_converged"].astype(bool))),
        )

    @staticmethod
    def _pv_matrix(inverters: pd.DataFrame, column: str, units: List[str], n_steps: int) -> np.ndarray:
        if not units:
            return np.zeros((n_steps, 0))
        table = inverters.pivot(index="timestep", columns="pv", values=column).reindex(columns=units)
        return np.ascontiguousarray(table.to_numpy(dtype=float))
