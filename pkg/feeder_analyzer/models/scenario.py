from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, root_validator, validator

from feeder_analyzer.models.harmonics import DEFAULT_ORDERS, HarmonicSpectrum
from feeder_analyzer.models.inverter import FunctionKind, InverterFunctionConfig, nine_function_set
from feeder_analyzer.models.network import Network


SCENARIO_SCHEMA_VERSION = "1.0"
DEFAULT_DT_S = 60.0
DEFAULT_DURATION_S = 86400.0
DEFAULT_DAMPING = 0.5
DEFAULT_CONTROL_ITERATIONS = 50
DEFAULT_Q_TOL_KVAR = 1.0
DEFAULT_P_TOL_KW = 1.0
SWEEP_NINE_SET = "nine"


class ProfileSource(BaseModel):
    """Origine d'une série: fichier CSV, valeur constante ou générateur synthétique."""
    path: Optional[str] = None
    value: Optional[float] = None
    generator: Optional[str] = None
    seed: Optional[int] = None
    params: Dict[str, float] = {}

    @root_validator(skip_on_failure=True)
    def _exactly_one(cls, values):
        given = [k for k in ("path", "value", "generator") if values.get(k) is not None]
        if len(given) != 1:
            raise ValueError("une source de profil demande exactement un de path/value/generator")
        return values


class ProfileSet(BaseModel):
    irradiance: ProfileSource  # W/m²
    temperature: ProfileSource = ProfileSource(value=25.0)  # °C
    frequency: Optional[ProfileSource] = None  # Hz
    loads: Dict[str, ProfileSource] = {"default": ProfileSource(value=1.0)}  # multiplicateurs


class HarmonicsConfig(BaseModel):
    snapshots_s: List[float] = []
    orders: List[int] = list(DEFAULT_ORDERS)
    spectrum: HarmonicSpectrum = HarmonicSpectrum.default()
    pv_spectra: Dict[str, HarmonicSpectrum] = {}
    monitored: List[str] = []  # vide: tous les éléments série

    @validator("orders")
    def _with_fundamental(cls, orders):
        if 1 not in orders:
            orders = [1] + list(orders)
        return sorted(set(orders))


class DeviceOrder(str, Enum):
    REGULATORS_FIRST = "regulators_first"
    CAPACITORS_FIRST = "capacitors_first"


class ControlConfig(BaseModel):
    damping: float = DEFAULT_DAMPING
    max_iterations: int = DEFAULT_CONTROL_ITERATIONS
    q_tol_kvar: float = DEFAULT_Q_TOL_KVAR
    p_tol_kw: float = DEFAULT_P_TOL_KW
    device_order: DeviceOrder = DeviceOrder.REGULATORS_FIRST
    settle_initial: bool = True
    power_flow_tolerance_pu: float = 1e-8
    power_flow_max_iterations: int = 200

    @validator("damping")
    def _damping_range(cls, value):
        if not 0.0 < value <= 1.0:
            raise ValueError("l'amortissement doit être dans ]0, 1]")
        return value

    @validator("max_iterations", "power_flow_max_iterations")
    def _positive(cls, value):
        if value < 1:
            raise ValueError("au moins une itération est requise")
        return value


class MetricsConfig(BaseModel):
    omc_baseline: Dict[str, float] = {}  # par appareil, 1.0 sinon
    include_capacitors_in_cii: bool = False


def _default_function() -> InverterFunctionConfig:
    return InverterFunctionConfig(function=FunctionKind.CONSTANT_PF, power_factor=1.0)


class ScenarioFile(BaseModel):
    """Fichier de scénario (JSON versionné)."""
    schema_version: str = SCENARIO_SCHEMA_VERSION
    name: str = "scenario"
    feeder: str
    dt_s: float = DEFAULT_DT_S
    duration_s: float = DEFAULT_DURATION_S
    profiles: ProfileSet
    function: InverterFunctionConfig = _default_function()
    pv_functions: Dict[str, InverterFunctionConfig] = {}
    pv_enabled: bool = True
    sweep: List[InverterFunctionConfig] = []
    harmonics: HarmonicsConfig = HarmonicsConfig()
    control: ControlConfig = ControlConfig()
    metrics: MetricsConfig = MetricsConfig()
    output_dir: Optional[str] = None
    seed: Optional[int] = None

    @validator("schema_version")
    def _known_version(cls, value):
        if value != SCENARIO_SCHEMA_VERSION:
            raise ValueError(f"version de schéma non prise en charge: {value}")
        return value

    @validator("sweep", pre=True)
    def _nine_set(cls, value):
        if value == SWEEP_NINE_SET:
            return [cfg.dict() for cfg in nine_function_set()]
        return value

    @root_validator(skip_on_failure=True)
    def _time_grid(cls, values):
        dt, duration = values["dt_s"], values["duration_s"]
        if dt <= 0 or duration <= 0:
            raise ValueError("dt_s et duration_s doivent être > 0")
        steps = duration / dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration_s doit être un multiple de dt_s")
        return values

    class Config:
        extra = "forbid"


@dataclass(frozen=True, eq=False)
class Scenario:
    """Scénario résolu: réseau construit et séries échantillonnées à dt."""
    name: str
    network: Network
    dt_s: float
    n_steps: int
    irradiance: np.ndarray
    temperature: np.ndarray
    frequency: Optional[np.ndarray]
    load_multipliers: Dict[str, np.ndarray]
    function: InverterFunctionConfig
    pv_functions: Dict[str, InverterFunctionConfig] = field(default_factory=dict)
    pv_enabled: bool = True
    control: ControlConfig = ControlConfig()
    harmonics: HarmonicsConfig = HarmonicsConfig()
    metrics: MetricsConfig = MetricsConfig()
    label: Optional[str] = None

    @property
    def duration_s(self) -> float:
        return self.n_steps * self.dt_s

    @property
    def run_label(self) -> str:
        return self.label or self.function.display_label

    def time_s(self, t: int) -> float:
        return t * self.dt_s

    def day(self, t: int) -> int:
        return int(np.floor(t * self.dt_s / 86400.0))

    def load_multipliers_at(self, t: int) -> Dict[str, float]:
        return {ref: float(series[t]) for ref, series in self.load_multipliers.items()}

    def function_for(self, pv_id: str) -> InverterFunctionConfig:
        """Fonction d'une unité: carte du scénario, puis config propre à l'unité, puis défaut."""
        if pv_id in self.pv_functions:
            return self.pv_functions[pv_id]
        for unit in self.network.pv_units:
            if unit.id == pv_id and unit.function_config is not None:
                return unit.function_config
        return self.function

    def with_function(self, config: InverterFunctionConfig, label: Optional[str] = None) -> "Scenario":
        """Même scénario, une seule fonction appliquée à toutes les unités."""
        assignment = {unit.id: config for unit in self.network.pv_units}
        return replace(self, function=config, pv_functions=assignment,
                       label=label or config.display_label)

    def baseline(self) -> "Scenario":
        return replace(self, pv_enabled=False, label="baseline")
