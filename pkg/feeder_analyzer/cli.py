"""Interface en ligne de commande: validate, run, sweep, report, serve.

Codes de sortie: voir `feeder_analyzer.errors`.
"""
import argparse
import sys
from dataclasses import replace
from typing import Any, Dict, List, Mapping, Optional

from feeder_analyzer.analysis.metrics import RunData, build_sweep_report
from feeder_analyzer.config import resolve_out_dir
from feeder_analyzer.errors import (
    EXIT_OK,
    EXIT_UNEXPECTED,
    ConvergenceFlagged,
    EmptySweep,
    FeederAnalyzerError,
)
from feeder_analyzer.models.report import SweepReport
from feeder_analyzer.models.run import RunResult
from feeder_analyzer.models.scenario import MetricsConfig
from feeder_analyzer.simulation.qsts import BASELINE_LABEL, run_series, sweep_functions
from feeder_analyzer.solvers.network import build_network
from feeder_analyzer.utils.bundle import BundleReader, BundleWriter
from feeder_analyzer.utils.helpers import configure_logging, get_logger, unique_label
from feeder_analyzer.utils.io import load_feeder, load_scenario, parse_harmonic_times


logger = get_logger(__name__)

DEFAULT_HOST = "0.0.0.0"
DEFAULT_PORT = 8000


def cmd_validate(feeder_path: str) -> Dict[str, Any]:
    """Valide schéma et invariants d'un départ; lève l'erreur de la première violation."""
    network = build_network(load_feeder(feeder_path))
    diagnostics = {
        "valid": True,
        "feeder": network.name,
        "buses": network.n_buses,
        "lines": sum(1 for e in network.edges if not e.is_regulator),
        "regulators": len(network.regulators),
        "capacitors": len(network.capacitors),
        "loads": len(network.loads),
        "pv_units": len(network.pv_units),
    }
    logger.info(f"'{feeder_path}' valide: {diagnostics['buses']} noeuds, {diagnostics['lines']} lignes, "
                f"{diagnostics['regulators']} régulateurs")
    return diagnostics


def _write_outputs(out_dir: str, runs: Mapping[str, RunResult], feeder: str,
                   metrics: MetricsConfig) -> SweepReport:
    writer = BundleWriter(out_dir)
    for run in runs.values():
        writer.write_run(run)
    data = {label: RunData.from_run(run) for label, run in runs.items()}
    report = build_sweep_report(data, BASELINE_LABEL, feeder, metrics.omc_baseline,
                                metrics.include_capacitors_in_cii)
    writer.write_manifest(feeder, BASELINE_LABEL, list(runs), metrics.omc_baseline,
                          metrics.include_capacitors_in_cii)
    writer.write_report(report, data)
    return report


def _check_convergence(runs: Mapping[str, RunResult]) -> None:
    flagged = {label: run.n_not_converged for label, run in runs.items() if run.n_not_converged}
    if flagged:
        detail = ", ".join(f"{label}: {n}" for label, n in flagged.items())
        raise ConvergenceFlagged(f"pas de temps non convergés ({detail})")


def cmd_run(scenario_path: str, out: Optional[str] = None, seed: Optional[int] = None,
            harmonics: Optional[List[float]] = None) -> SweepReport:
    """Simule la fonction du scénario et la référence sans PV, puis écrit bundles et rapport."""
    spec, scenario = load_scenario(scenario_path, seed=seed, harmonic_times=harmonics)
    out_dir = resolve_out_dir(out, spec.output_dir)
    runs: Dict[str, RunResult] = {BASELINE_LABEL: run_series(scenario.baseline())}
    if scenario.pv_enabled:
        label = unique_label(scenario.run_label, runs)
        runs[label] = run_series(replace(scenario, label=label))
    report = _write_outputs(out_dir, runs, scenario.network.name, scenario.metrics)
    _check_convergence(runs)
    return report


def cmd_sweep(scenario_path: str, out: Optional[str] = None, seed: Optional[int] = None,
              parallel: int = 1, harmonics: Optional[List[float]] = None) -> SweepReport:
    """Une série par fonction de la liste `sweep` plus la référence, mêmes profils."""
    spec, scenario = load_scenario(scenario_path, seed=seed, harmonic_times=harmonics)
    if not spec.sweep:
        raise EmptySweep("la liste 'sweep' du scénario est vide")
    out_dir = resolve_out_dir(out, spec.output_dir)
    runs = sweep_functions(scenario, spec.sweep, parallel=max(1, parallel))
    report = _write_outputs(out_dir, runs, scenario.network.name, scenario.metrics)
    _check_convergence(runs)
    return report


def cmd_report(results_dir: str) -> SweepReport:
    """Recalcule les indicateurs depuis les CSV bruts d'un dossier de résultats."""
    reader = BundleReader(results_dir)
    manifest = reader.manifest()
    runs = reader.read_runs()
    report = build_sweep_report(runs, manifest["baseline"], manifest["feeder"],
                                manifest.get("omc_baseline") or {},
                                bool(manifest.get("include_capacitors_in_cii", False)))
    BundleWriter(results_dir).write_report(report, runs)
    return report


def _log_report(report: SweepReport) -> None:
    for run in report.runs:
        cii = f"{run.cii:.4f}" if run.cii is not None else "indéfini"
        taps = sum(r.total_with_pv for r in run.regulators)
        logger.info(f"{run.label:<22} prises={taps:<5} CII={cii:<10} "
                    f"ΔP_pertes={run.losses.delta_p_loss_kw:+.2f} kW")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feeder_analyzer",
        description="Simulation QSTS de départs radiaux avec onduleurs intelligents",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="journalisation DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="valider un fichier de départ")
    validate.add_argument("feeder", help="chemin du fichier feeder JSON")

    for name, text in (("run", "simuler le scénario"), ("sweep", "comparer les fonctions du scénario")):
        command = commands.add_parser(name, help=text)
        command.add_argument("--scenario", required=True, help="chemin du fichier de scénario")
        command.add_argument("--out", help="dossier de sortie")
        command.add_argument("--seed", type=int, help="graine des générateurs de profils")
        command.add_argument("--harmonics", help="instants des balayages harmoniques, \"t1,t2\" en s")
        if name == "sweep":
            command.add_argument("--parallel", type=int, default=1, help="nombre de processus")

    report = commands.add_parser("report", help="recalculer les indicateurs d'un dossier de résultats")
    report.add_argument("results_dir", nargs="?", help="dossier de résultats")
    report.add_argument("--out", help="dossier de résultats (alias)")

    serve = commands.add_parser("serve", help="démarrer l'API HTTP")
    serve.add_argument("--host", default=DEFAULT_HOST)
    serve.add_argument("--port", type=int, default=DEFAULT_PORT)

    for command in commands.choices.values():
        command.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                             help="journalisation DEBUG")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    harmonics = parse_harmonic_times(args.harmonics) if getattr(args, "harmonics", None) else None
    if args.command == "validate":
        cmd_validate(args.feeder)
    elif args.command == "run":
        _log_report(cmd_run(args.scenario, args.out, args.seed, harmonics))
    elif args.command == "sweep":
        _log_report(cmd_sweep(args.scenario, args.out, args.seed, args.parallel, harmonics))
    elif args.command == "report":
        _log_report(cmd_report(args.results_dir or args.out or resolve_out_dir(None, None)))
    elif args.command == "serve":
        import uvicorn
        uvicorn.run("feeder_analyzer.api.app:app", host=args.host, port=args.port)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return _dispatch(args)
    except FeederAnalyzerError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Erreur inattendue: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
