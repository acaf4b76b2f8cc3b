import traceback
from typing import Any, Dict, Optional

from feeder_analyzer.cli import cmd_run, cmd_sweep
from feeder_analyzer.errors import FeederAnalyzerError
from feeder_analyzer.utils.helpers import (
    get_background_task_status,
    get_logger,
    set_background_task_status,
)


logger = get_logger(__name__)


def execute_run(run_id: str, scenario_path: str, out_dir: str, sweep: bool = False,
                seed: Optional[int] = None, parallel: int = 1) -> None:
    """
    Exécute une simulation (run ou sweep) en arrière-plan et met à jour son état.
    """
    set_background_task_status(run_id, {"status": "processing", "out_dir": out_dir,
                                        "message": "Simulation en cours..."})
    try:
        if sweep:
            report = cmd_sweep(scenario_path, out_dir, seed, parallel)
        else:
            report = cmd_run(scenario_path, out_dir, seed)
        set_background_task_status(run_id, {
            "status": "completed",
            "out_dir": out_dir,
            "runs": [r.label for r in report.runs],
        })
        logger.info(f"Simulation {run_id} terminée")
    except FeederAnalyzerError as e:
        logger.error(f"Simulation {run_id} en échec: {e}")
        set_background_task_status(run_id, {
            "status": "failed",
            "out_dir": out_dir,
            "error": str(e),
            "error_type": type(e).__name__,
            "exit_code": e.exit_code,
        })
    except Exception as e:
        logger.error(f"Erreur inattendue pour {run_id}: {e}")
        traceback.print_exc()
        set_background_task_status(run_id, {"status": "failed", "out_dir": out_dir,
                                            "error": str(e), "exit_code": 1})


def get_task_status(run_id: str) -> Dict[str, Any]:
    """
    Récupère l'état actuel d'une tâche d'arrière-plan.
    """
    status = get_background_task_status(run_id)
    if status is None:
        return {"status": "unknown", "message": "Aucune tâche trouvée pour ce run"}
    return status
