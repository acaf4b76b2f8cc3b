from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator

from feeder_analyzer.models.inverter import InverterFunctionConfig


SCHEMA_VERSION = "1.0"
PHASES = ("A", "B", "C")

# Réglages par défaut des appareils historiques
DEFAULT_V_MIN_PU = 0.95
DEFAULT_V_MAX_PU = 1.05
TAP_MIN = -16
TAP_MAX = 16
TAP_STEP_PU = 0.00625
DEFAULT_SETPOINT_PU = 1.0167
DEFAULT_BANDWIDTH_PU = 0.0167
DEFAULT_DAILY_TAP_LIMIT = 273
DEFAULT_CAP_ON_PU = 0.97
DEFAULT_CAP_OFF_PU = 1.03
DEFAULT_DAILY_SWITCH_LIMIT = 6
DEFAULT_TEMP_COEFF = -0.004

ComplexPair = Tuple[float, float]


def _check_phases(phases: List[str]) -> List[str]:
    if not phases:
        raise ValueError("au moins une phase est requise")
    unknown = [p for p in phases if p not in PHASES]
    if unknown:
        raise ValueError(f"phases inconnues: {unknown}")
    if len(set(phases)) != len(phases):
        raise ValueError(f"phases dupliquées: {phases}")
    return [p for p in PHASES if p in phases]


def pairs_to_matrix(pairs: List[List[ComplexPair]]) -> np.ndarray:
    """Convertit une matrice de couples [r, x] en matrice complexe numpy."""
    return np.array([[complex(r, x) for r, x in row] for row in pairs], dtype=complex)


def matrix_to_pairs(matrix: np.ndarray) -> List[List[ComplexPair]]:
    return [[(float(z.real), float(z.imag)) for z in row] for row in matrix]


class Bus(BaseModel):
    """Noeud du départ."""
    id: str
    phases: List[str]
    base_kV: float  # tension phase-neutre
    v_min_pu: float = DEFAULT_V_MIN_PU
    v_max_pu: float = DEFAULT_V_MAX_PU

    _phases = validator("phases", allow_reuse=True)(_check_phases)


class LineCode(BaseModel):
    """Matrice d'impédance linéique (ohm/km), à la manière des LineCode OpenDSS."""
    z_matrix: List[List[ComplexPair]]


class LineSegment(BaseModel):
    """Tronçon de ligne. L'impédance est totale, la longueur est informative."""
    id: str
    from_bus: str
    to_bus: str
    z_matrix: Optional[List[List[ComplexPair]]] = None
    code: Optional[str] = None
    length_km: float = 1.0

    @root_validator(skip_on_failure=True)
    def _impedance_source(cls, values):
        if values.get("z_matrix") is None and values.get("code") is None:
            raise ValueError(f"ligne {values.get('id')}: z_matrix ou code requis")
        return values


class RegulatorBank(BaseModel):
    """Régulateur de tension (ou LTC de poste) modélisé comme élément série idéal."""
    id: str
    from_bus: str
    to_bus: str
    phases: List[str]
    tap_positions: Dict[str, int] = {}
    tap_min: int = TAP_MIN
    tap_max: int = TAP_MAX
    step_pu: float = TAP_STEP_PU
    setpoint_pu: float = DEFAULT_SETPOINT_PU
    bandwidth_pu: float = DEFAULT_BANDWIDTH_PU
    daily_tap_limit: int = DEFAULT_DAILY_TAP_LIMIT
    is_substation_ltc: bool = False

    _phases = validator("phases", allow_reuse=True)(_check_phases)

    def initial_tap(self, phase: str) -> int:
        return int(self.tap_positions.get(phase, 0))


class CapacitorMode(str, Enum):
    FIXED = "fixed"
    VOLTAGE = "voltage"


class CapacitorBank(BaseModel):
    """Banc de condensateurs, fixe ou commuté en tension."""
    id: str
    bus: str
    kvar_rating: Dict[str, float]
    mode: CapacitorMode = CapacitorMode.VOLTAGE
    on_threshold_pu: float = DEFAULT_CAP_ON_PU
    off_threshold_pu: float = DEFAULT_CAP_OFF_PU
    state: Dict[str, bool] = {}
    daily_switch_limit: int = DEFAULT_DAILY_SWITCH_LIMIT
    q_max_node: float
    per_phase_switching: bool = False

    @property
    def phases(self) -> List[str]:
        return [p for p in PHASES if p in self.kvar_rating]

    def initial_state(self, phase: str) -> bool:
        if self.mode == CapacitorMode.FIXED:
            return True
        return bool(self.state.get(phase, False))


class PhaseLoad(BaseModel):
    kw: float
    kvar: float = 0.0


class LoadPoint(BaseModel):
    """Charge PQ constante."""
    id: str
    bus: str
    phases: Dict[str, PhaseLoad]
    profile_ref: str = "default"


class PVUnit(BaseModel):
    """Centrale PV et son onduleur intelligent."""
    id: str
    bus: str
    phases: Optional[List[str]] = None  # par défaut: toutes les phases du noeud
    p_rated_kW: float = 1000.0
    s_inverter_kVA: float = 1200.0
    temp_coeff_per_degC: float = DEFAULT_TEMP_COEFF
    # Configuration de fonction propre à l'unité (sinon celle du scénario)
    function_config: Optional[InverterFunctionConfig] = None


class Source(BaseModel):
    bus: str
    voltage_pu: float = 1.0
    angle_deg: float = 0.0
    z_ohm: ComplexPair = (0.0, 0.0)


class FeederDescription(BaseModel):
    """Document décrivant un départ (fichier JSON versionné)."""
    schema_version: str = SCHEMA_VERSION
    name: str = "feeder"
    source: Source
    buses: List[Bus]
    line_codes: Dict[str, LineCode] = {}
    lines: List[LineSegment] = []
    regulators: List[RegulatorBank] = []
    capacitors: List[CapacitorBank] = []
    loads: List[LoadPoint] = []
    pv_units: List[PVUnit] = []

    @validator("schema_version")
    def _known_version(cls, value):
        if value != SCHEMA_VERSION:
            raise ValueError(f"version de schéma non prise en charge: {value}")
        return value

    @root_validator(skip_on_failure=True)
    def _unique_ids(cls, values):
        groups = {
            "buses": values.get("buses", []),
            "lines": values.get("lines", []),
            "regulators": values.get("regulators", []),
            "capacitors": values.get("capacitors", []),
            "loads": values.get("loads", []),
            "pv_units": values.get("pv_units", []),
        }
        for group, items in groups.items():
            seen = set()
            for item in items:
                if item.id in seen:
                    raise ValueError(f"id dupliqué dans {group}: {item.id}")
                seen.add(item.id)
        edge_ids = [l.id for l in groups["lines"]] + [r.id for r in groups["regulators"]]
        if len(set(edge_ids)) != len(edge_ids):
            raise ValueError("les id de lignes et de régulateurs doivent être distincts")
        return values

    class Config:
        extra = "forbid"


def resolved_z_matrix(line: LineSegment, line_codes: Dict[str, LineCode]) -> Optional[np.ndarray]:
    """Impédance totale (ohm) du tronçon, ou None si le code est inconnu."""
    if line.z_matrix is not None:
        return pairs_to_matrix(line.z_matrix)
    code = line_codes.get(line.code)
    if code is None:
        return None
    return pairs_to_matrix(code.z_matrix) * line.length_km


__all__ = [
    "Bus", "LineCode", "LineSegment", "RegulatorBank", "CapacitorMode", "CapacitorBank",
    "PhaseLoad", "LoadPoint", "PVUnit", "Source", "FeederDescription",
    "PHASES", "SCHEMA_VERSION", "pairs_to_matrix", "matrix_to_pairs", "resolved_z_matrix",
]
