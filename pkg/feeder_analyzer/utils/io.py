"""Lecture des fichiers feeder, scénario et profils."""
import json
import os
from typing import Dict, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from feeder_analyzer.errors import ConfigurationError, MissingFile, ParseError, ProfileError
from feeder_analyzer.models.feeder import FeederDescription
from feeder_analyzer.models.network import Network
from feeder_analyzer.models.scenario import ProfileSource, Scenario, ScenarioFile
from feeder_analyzer.simulation.profiles import DEFAULT_SEED, generate
from feeder_analyzer.solvers.network import build_network
from feeder_analyzer.utils.helpers import get_logger, resolve_path


logger = get_logger(__name__)

Model = TypeVar("Model", bound=BaseModel)

PROFILE_COLUMNS = ("timestamp", "value")
UNIFORM_RTOL = 1e-9


def _validation_locus(error: ValidationError) -> str:
    first = error.errors()[0]
    return " -> ".join(str(part) for part in first["loc"] if part != "__root__") or "document"


def _parse_model(text: str, model: Type[Model], source: Optional[str]) -> Model:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        where = f"{source}:{e.lineno}:{e.colno}" if source else f"ligne {e.lineno}, colonne {e.colno}"
        raise ParseError(f"JSON invalide: {e.msg}", locus=where)
    try:
        return model.parse_obj(payload)
    except ValidationError as e:
        message = e.errors()[0]["msg"]
        locus = _validation_locus(e)
        raise ParseError(message, locus=f"{source}: {locus}" if source else locus)


def _read_text(path: str) -> str:
    if not os.path.exists(path):
        raise MissingFile("fichier introuvable", locus=path)
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def parse_feeder(text: str, source: Optional[str] = None) -> FeederDescription:
    return _parse_model(text, FeederDescription, source)


def serialize_feeder(description: FeederDescription) -> str:
    """JSON à clés triées; `parse_feeder(serialize_feeder(d)) == d`."""
    return json.dumps(json.loads(description.json(exclude_none=True)), indent=2, sort_keys=True) + "\n"


def load_feeder(path: str) -> FeederDescription:
    return parse_feeder(_read_text(path), source=path)


def load_network(path: str) -> Network:
    description = load_feeder(path)
    network = build_network(description)
    logger.info(f"Départ '{network.name}' chargé: {network.n_buses} noeuds, "
                f"{len(network.regulators)} régulateurs, {len(network.capacitors)} bancs, "
                f"{len(network.pv_units)} unités PV")
    return network


def parse_scenario_file(text: str, source: Optional[str] = None) -> ScenarioFile:
    return _parse_model(text, ScenarioFile, source)


def read_profile_csv(path: str, n_steps: int, dt_s: float) -> np.ndarray:
    """Lit un profil `timestamp,value` et l'échantillonne sur la grille du scénario.

    Les horodatages sont des secondes ou des dates ISO; ils doivent être
    strictement croissants et uniformément espacés, et couvrir la durée.
    """
    if not os.path.exists(path):
        raise MissingFile("fichier de profil introuvable", locus=path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ProfileError(f"CSV illisible: {e}", locus=path)
    if tuple(frame.columns) != PROFILE_COLUMNS:
        raise ProfileError(f"en-tête attendu 'timestamp,value', lu '{','.join(map(str, frame.columns))}'",
                           locus=path)
    if len(frame) < 1:
        raise ProfileError("profil vide", locus=path)

    stamps = frame["timestamp"]
    if pd.api.types.is_numeric_dtype(stamps):
        seconds = stamps.to_numpy(dtype=float)
    else:
        try:
            parsed = pd.to_datetime(stamps)
        except (ValueError, TypeError) as e:
            raise ProfileError(f"horodatages illisibles: {e}", locus=path)
        seconds = (parsed - parsed.iloc[0]).dt.total_seconds().to_numpy()
    values = pd.to_numeric(frame["value"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        row = int(np.flatnonzero(~np.isfinite(values))[0]) + 2
        raise ProfileError("valeur non numérique", locus=f"{path}:{row}")

    steps = np.diff(seconds)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 3
        raise ProfileError("horodatages non strictement croissants", locus=f"{path}:{row}")
    if len(steps) and not np.allclose(steps, steps[0], rtol=UNIFORM_RTOL, atol=0.0):
        raise ProfileError("pas de temps non uniforme", locus=path)

    grid = seconds[0] + np.arange(n_steps) * dt_s
    if len(seconds) == 1 or grid[-1] > seconds[-1] + 1e-9:
        raise ProfileError(f"le profil couvre {seconds[-1] - seconds[0]:g} s, "
                           f"{(n_steps - 1) * dt_s:g} s requis", locus=path)
    return np.interp(grid, seconds, values)


def resolve_profile(source: ProfileSource, n_steps: int, dt_s: float, base_dir: Optional[str],
                    seed: int) -> np.ndarray:
    if source.path is not None:
        return read_profile_csv(resolve_path(source.path, base_dir), n_steps, dt_s)
    if source.value is not None:
        return np.full(n_steps, float(source.value))
    return generate(source.generator, n_steps, dt_s, seed=seed, **source.params)


def _seed_for(source: ProfileSource, scenario_seed: Optional[int], override: Optional[int]) -> int:
    if override is not None:
        return override
    if source.seed is not None:
        return source.seed
    return scenario_seed if scenario_seed is not None else DEFAULT_SEED


def build_scenario(spec: ScenarioFile, network: Network, base_dir: Optional[str] = None,
                   seed: Optional[int] = None,
                   harmonic_times: Optional[Sequence[float]] = None) -> Scenario:
    """Résout les profils et assemble un `Scenario` prêt à simuler."""
    n_steps = int(round(spec.duration_s / spec.dt_s))
    dt_s = spec.dt_s

    def series(source: ProfileSource) -> np.ndarray:
        return resolve_profile(source, n_steps, dt_s, base_dir, _seed_for(source, spec.seed, seed))

    profiles = spec.profiles
    irradiance = series(profiles.irradiance)
    if np.any(irradiance < 0):
        raise ProfileError("irradiance négative")
    temperature = series(profiles.temperature)
    frequency = series(profiles.frequency) if profiles.frequency is not None else None

    loads: Dict[str, np.ndarray] = {ref: series(src) for ref, src in profiles.loads.items()}
    referenced = {load.profile_ref for load in network.loads}
    for ref in sorted(referenced - set(loads)):
        if "default" not in loads:
            raise ProfileError(f"profil de charge inconnu: {ref}")
        loads[ref] = loads["default"]

    for pv_id in spec.pv_functions:
        if pv_id not in {u.id for u in network.pv_units}:
            raise ConfigurationError(f"unité PV inconnue dans pv_functions: {pv_id}")

    harmonics = spec.harmonics
    if harmonic_times is not None:
        harmonics = harmonics.copy(update={"snapshots_s": list(harmonic_times)})

    return Scenario(
        name=spec.name,
        network=network,
        dt_s=dt_s,
        n_steps=n_steps,
        irradiance=irradiance,
        temperature=temperature,
        frequency=frequency,
        load_multipliers=loads,
        function=spec.function,
        pv_functions=dict(spec.pv_functions),
        pv_enabled=spec.pv_enabled,
        control=spec.control,
        harmonics=harmonics,
        metrics=spec.metrics,
    )


def load_scenario(path: str, seed: Optional[int] = None,
                  harmonic_times: Optional[Sequence[float]] = None) -> Tuple[ScenarioFile, Scenario]:
    """Charge un fichier de scénario; les chemins sont relatifs à son dossier."""
    spec = parse_scenario_file(_read_text(path), source=path)
    base_dir = os.path.dirname(os.path.abspath(path))
    network = load_network(resolve_path(spec.feeder, base_dir))
    scenario = build_scenario(spec, network, base_dir, seed, harmonic_times)
    logger.info(f"Scénario '{spec.name}' chargé: {scenario.n_steps} pas de {scenario.dt_s:g} s")
    return spec, scenario


def parse_harmonic_times(text: str) -> List[float]:
    """Analyse l'option `--harmonics "t1,t2"` (secondes)."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ParseError(f"instants harmoniques invalides: {text}")
