"""Configuration d'environnement (seul le dossier de sortie est surchargeable)."""
from typing import Optional

from pydantic import BaseSettings


DEFAULT_OUT_DIR = "results"


class Settings(BaseSettings):
    """Paramètres lus depuis l'environnement ou un fichier .env.

    FEEDER_ANALYZER_OUT_DIR: dossier de sortie par défaut des bundles.
    """
    out_dir: str = DEFAULT_OUT_DIR

    class Config:
        env_prefix = "FEEDER_ANALYZER_"
        env_file = ".env"
        env_file_encoding = "utf-8"


def get_settings() -> Settings:
    return Settings()


def resolve_out_dir(cli_out: Optional[str], scenario_out: Optional[str]) -> str:
    """Ordre de priorité: --out > output_dir du scénario > environnement > défaut."""
    if cli_out:
        return cli_out
    if scenario_out:
        return scenario_out
    return get_settings().out_dir
