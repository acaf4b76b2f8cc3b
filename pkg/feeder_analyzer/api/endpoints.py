import json
import os
from typing import Any, Dict, Optional

import aiofiles
from fastapi import BackgroundTasks, FastAPI, File, HTTPException, UploadFile
from fastapi.responses import FileResponse
from pydantic import BaseModel

from feeder_analyzer.api.background import execute_run, get_task_status
from feeder_analyzer.cli import cmd_validate
from feeder_analyzer.config import get_settings
from feeder_analyzer.errors import BundleError, FeederAnalyzerError
from feeder_analyzer.utils.bundle import REPORT_FILE
from feeder_analyzer.utils.helpers import (
    create_directory_if_not_exists,
    generate_run_id,
    get_logger,
    set_background_task_status,
)


logger = get_logger(__name__)

# Constantes
UPLOAD_DIR = "uploads"


# Modèles de données
class RunRequest(BaseModel):
    scenario_path: str
    out_dir: Optional[str] = None
    sweep: bool = False
    seed: Optional[int] = None
    parallel: int = 1


class RunStatus(BaseModel):
    id: str
    status: str
    out_dir: Optional[str] = None
    error: Optional[str] = None
    exit_code: Optional[int] = None


def http_status_for(error: FeederAnalyzerError) -> int:
    """404 pour un fichier absent, 422 pour un contenu invalide, 400 sinon."""
    if isinstance(error, BundleError):
        return 404
    if error.exit_code in (2, 3):
        return 422
    return 400


def _run_out_dir(run_id: str) -> str:
    status = get_task_status(run_id)
    if status.get("status") == "unknown":
        raise HTTPException(status_code=404, detail="Run inconnu")
    return status["out_dir"]


def setup_routes(app: FastAPI) -> None:
    """Configure les routes de l'API"""

    @app.get("/")
    async def root():
        return {"message": "API feeder_analyzer", "docs": "/docs"}

    @app.post("/feeders/validate")
    async def validate_feeder(file: UploadFile = File(...)) -> Dict[str, Any]:
        if not file.filename.endswith(".json"):
            raise HTTPException(status_code=400, detail="Le fichier doit être au format .json")
        create_directory_if_not_exists(UPLOAD_DIR)
        path = os.path.join(UPLOAD_DIR, f"{generate_run_id()}_{os.path.basename(file.filename)}")
        async with aiofiles.open(path, "wb") as f:
            await f.write(await file.read())
        try:
            return cmd_validate(path)
        except FeederAnalyzerError as e:
            return {"valid": False, "error_type": type(e).__name__, "detail": str(e),
                    "exit_code": e.exit_code}
        finally:
            os.remove(path)

    @app.post("/runs", response_model=RunStatus)
    async def submit_run(request: RunRequest, background_tasks: BackgroundTasks):
        if not os.path.exists(request.scenario_path):
            raise HTTPException(status_code=404, detail=f"Scénario introuvable: {request.scenario_path}")
        run_id = generate_run_id()
        out_dir = request.out_dir or os.path.join(get_settings().out_dir, run_id)
        set_background_task_status(run_id, {"status": "pending", "out_dir": out_dir})
        background_tasks.add_task(execute_run, run_id, request.scenario_path, out_dir,
                                  request.sweep, request.seed, request.parallel)
        logger.info(f"Run {run_id} soumis ({request.scenario_path})")
        return RunStatus(id=run_id, status="pending", out_dir=out_dir)

    @app.get("/runs/{run_id}/status", response_model=RunStatus)
    async def run_status(run_id: str):
        status = get_task_status(run_id)
        if status.get("status") == "unknown":
            raise HTTPException(status_code=404, detail="Run inconnu")
        return RunStatus(id=run_id, **{k: status.get(k) for k in ("status", "out_dir", "error", "exit_code")})

    @app.get("/runs/{run_id}/report")
    async def run_report(run_id: str):
        path = os.path.join(_run_out_dir(run_id), REPORT_FILE)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail="Rapport non disponible")
        async with aiofiles.open(path, "r", encoding="utf-8") as f:
            return json.loads(await f.read())

    @app.get("/runs/{run_id}/files/{name:path}")
    async def run_file(run_id: str, name: str):
        root = os.path.realpath(_run_out_dir(run_id))
        path = os.path.realpath(os.path.join(root, name))
        if not path.startswith(root + os.sep) or not os.path.isfile(path):
            raise HTTPException(status_code=404, detail="Fichier non trouvé")
        media_type = "text/csv" if path.endswith(".csv") else "application/json"
        return FileResponse(path, media_type=media_type, filename=os.path.basename(path))
