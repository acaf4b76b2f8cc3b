from typing import Any, Dict, Optional
import logging
import os
import uuid


LOG_FORMAT = "[%(levelname)s] %(message)s"

_logging_configured = False


def configure_logging(verbose: bool = False) -> None:
    """Configure le logging racine au format des tags [INFO]/[DEBUG]."""
    global _logging_configured
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("feeder_analyzer")
    if not _logging_configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _logging_configured = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    """Retourne le logger d'un module du paquet."""
    if not name.startswith("feeder_analyzer"):
        name = f"feeder_analyzer.{name}"
    return logging.getLogger(name)


def generate_run_id() -> str:
    """Génère un ID unique pour un run soumis à l'API."""
    return str(uuid.uuid4())


def create_directory_if_not_exists(directory_path: str) -> None:
    """Crée un répertoire s'il n'existe pas déjà."""
    if not os.path.exists(directory_path):
        os.makedirs(directory_path)


def resolve_path(path: str, base_dir: Optional[str]) -> str:
    """Résout un chemin relatif par rapport au dossier du fichier qui le référence."""
    if os.path.isabs(path) or not base_dir:
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def unique_label(label: str, taken: Dict[str, Any]) -> str:
    """Rend un libellé unique en suffixant -2, -3... si nécessaire."""
    if label not in taken:
        return label
    index = 2
    while f"{label}-{index}" in taken:
        index += 1
    return f"{label}-{index}"


# Dictionnaire global pour suivre l'état des tâches en arrière-plan
_background_tasks_status: Dict[str, Dict[str, Any]] = {}


def set_background_task_status(task_id: str, status: Dict[str, Any]) -> None:
    """
    Définit l'état d'une tâche d'arrière-plan.

    Args:
        task_id: Identifiant de la tâche
        status: Dictionnaire contenant l'état de la tâche
    """
    _background_tasks_status[task_id] = status


def get_background_task_status(task_id: str) -> Optional[Dict[str, Any]]:
    """
    Récupère l'état d'une tâche d'arrière-plan.

    Args:
        task_id: Identifiant de la tâche

    Returns:
        Dictionnaire contenant l'état de la tâche ou None si la tâche n'existe pas
    """
    return _background_tasks_status.get(task_id)
