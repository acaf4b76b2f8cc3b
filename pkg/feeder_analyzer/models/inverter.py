from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, PrivateAttr, root_validator, validator

from feeder_analyzer.errors import ZeroPowerFactor


# Courbes et constantes par défaut (pas de valeurs numériques publiées, pratique IEEE 1547 cat. B)
DEFAULT_VOLT_VAR = [(0.92, 0.44), (0.98, 0.0), (1.02, 0.0), (1.08, -0.44)]
DEFAULT_VOLT_WATT = [(1.03, 1.0), (1.06, 0.0)]
DEFAULT_FREQ_WATT = [(60.02, 1.0), (60.50, 0.0)]
DEFAULT_WATT_PF = [(0.5, -1.0), (1.0, -0.9)]
DEFAULT_HYSTERESIS_OFFSET_PU = 0.01
DEFAULT_TAU_ADAPT_S = 600.0
DEFAULT_TAU_LPF_S = 300.0
DEFAULT_RAMP_PER_MIN = 0.10
DEFAULT_GEN_LIMIT = 0.80
DEFAULT_DYN_GAIN = 2.0
DEFAULT_DYN_DEADBAND_PU = 0.02
DEFAULT_DYN_WINDOW_MIN = 10.0


class PiecewiseLinearCurve(BaseModel):
    """Caractéristique affine par morceaux, bornée aux valeurs extrêmes."""
    breakpoints: List[Tuple[float, float]]

    _xs: np.ndarray = PrivateAttr()
    _ys: np.ndarray = PrivateAttr()

    @validator("breakpoints")
    def _ordered(cls, points):
        if len(points) < 2:
            raise ValueError("une courbe demande au moins 2 points")
        xs = [x for x, _ in points]
        if not all(np.isfinite(v) for pt in points for v in pt):
            raise ValueError("points de courbe non finis")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("abscisses strictement croissantes requises")
        return points

    def __init__(self, **data):
        super().__init__(**data)
        self._xs = np.array([x for x, _ in self.breakpoints], dtype=float)
        self._ys = np.array([y for _, y in self.breakpoints], dtype=float)

    @classmethod
    def of(cls, points) -> "PiecewiseLinearCurve":
        return cls(breakpoints=[tuple(p) for p in points])

    def evaluate(self, x: float) -> float:
        return float(np.interp(x, self._xs, self._ys))

    def shifted(self, dx: float) -> "PiecewiseLinearCurve":
        return PiecewiseLinearCurve.of([(x + dx, y) for x, y in self.breakpoints])

    def crosses_zero(self) -> bool:
        ys = self._ys
        return bool(np.any(ys == 0.0) or np.any(np.sign(ys[:-1]) != np.sign(ys[1:])))


class FunctionKind(str, Enum):
    CONSTANT_PF = "ConstantPF"
    VOLT_VAR = "VoltVar"
    VOLT_VAR_HYSTERESIS = "VoltVarHysteresis"
    VOLT_VAR_ADAPTIVE = "VoltVarAdaptive"
    VOLT_VAR_LPF = "VoltVarLPF"
    VOLT_WATT = "VoltWatt"
    VOLT_WATT_RATE_LIMIT = "VoltWattRateLimit"
    FREQ_WATT = "FreqWatt"
    MAX_GEN_LIMIT = "MaxGenLimit"
    DYN_REACTIVE_CURRENT = "DynReactiveCurrent"
    WATT_PF = "WattPF"


VOLT_VAR_FAMILY = {
    FunctionKind.VOLT_VAR,
    FunctionKind.VOLT_VAR_HYSTERESIS,
    FunctionKind.VOLT_VAR_ADAPTIVE,
    FunctionKind.VOLT_VAR_LPF,
}


class Precedence(str, Enum):
    WATT = "watt-priority"
    VAR = "var-priority"


def _as_curve(value):
    if value is None or isinstance(value, (PiecewiseLinearCurve, dict)):
        return value
    return {"breakpoints": value}


class InverterFunctionConfig(BaseModel):
    """Fonction d'onduleur et ses paramètres."""
    function: FunctionKind
    label: Optional[str] = None
    power_factor: float = 1.0
    volt_var_curve: PiecewiseLinearCurve = PiecewiseLinearCurve.of(DEFAULT_VOLT_VAR)
    volt_var_curve_up: Optional[PiecewiseLinearCurve] = None
    volt_var_curve_down: Optional[PiecewiseLinearCurve] = None
    hysteresis_offset_pu: float = DEFAULT_HYSTERESIS_OFFSET_PU
    tau_adapt_s: float = DEFAULT_TAU_ADAPT_S
    tau_lpf_s: float = DEFAULT_TAU_LPF_S
    volt_watt_curve: PiecewiseLinearCurve = PiecewiseLinearCurve.of(DEFAULT_VOLT_WATT)
    ramp_up_per_min: float = DEFAULT_RAMP_PER_MIN
    ramp_down_per_min: float = DEFAULT_RAMP_PER_MIN
    freq_watt_curve: PiecewiseLinearCurve = PiecewiseLinearCurve.of(DEFAULT_FREQ_WATT)
    freq_watt_hysteresis_hz: float = 0.0
    storage_enabled: bool = False
    gen_limit_fraction: float = DEFAULT_GEN_LIMIT
    dyn_gain_kq: float = DEFAULT_DYN_GAIN
    dyn_deadband_pu: float = DEFAULT_DYN_DEADBAND_PU
    dyn_window_min: float = DEFAULT_DYN_WINDOW_MIN
    watt_pf_curve: PiecewiseLinearCurve = PiecewiseLinearCurve.of(DEFAULT_WATT_PF)
    kva_precedence: Optional[Precedence] = None

    _curves = validator(
        "volt_var_curve", "volt_var_curve_up", "volt_var_curve_down",
        "volt_watt_curve", "freq_watt_curve", "watt_pf_curve",
        pre=True, allow_reuse=True,
    )(_as_curve)

    @validator("power_factor")
    def _pf_range(cls, pf):
        if pf == 0:
            raise ZeroPowerFactor("un facteur de puissance nul n'est pas autorisé")
        if not -1.0 <= pf <= 1.0:
            raise ValueError(f"facteur de puissance hors de [-1, 1]: {pf}")
        return pf

    @validator("tau_adapt_s", "tau_lpf_s", "ramp_up_per_min", "ramp_down_per_min",
               "dyn_gain_kq", "dyn_window_min")
    def _positive(cls, value, field):
        if value <= 0:
            raise ValueError(f"{field.name} doit être > 0")
        return value

    @validator("freq_watt_hysteresis_hz")
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("freq_watt_hysteresis_hz doit être >= 0")
        return value

    @validator("gen_limit_fraction")
    def _fraction(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("gen_limit_fraction doit être dans [0, 1]")
        return value

    @root_validator(skip_on_failure=True)
    def _watt_pf_curve(cls, values):
        if values.get("function") == FunctionKind.WATT_PF and values["watt_pf_curve"].crosses_zero():
            raise ZeroPowerFactor("la courbe watt-PF passe par un facteur de puissance nul")
        return values

    @property
    def precedence(self) -> Precedence:
        if self.kva_precedence is not None:
            return self.kva_precedence
        if self.function in VOLT_VAR_FAMILY or self.function == FunctionKind.DYN_REACTIVE_CURRENT:
            return Precedence.VAR
        return Precedence.WATT

    @property
    def display_label(self) -> str:
        if self.label:
            return self.label
        if self.function == FunctionKind.CONSTANT_PF:
            return f"ConstantPF({self.power_factor:g})"
        if self.function == FunctionKind.MAX_GEN_LIMIT:
            return f"MaxGenLimit({self.gen_limit_fraction:g})"
        return self.function.value

    def hysteresis_curves(self) -> Tuple[PiecewiseLinearCurve, PiecewiseLinearCurve]:
        """Courbes montante et descendante; décalées de ±offset/2 si non fournies."""
        half = self.hysteresis_offset_pu / 2.0
        up = self.volt_var_curve_up or self.volt_var_curve.shifted(+half)
        down = self.volt_var_curve_down or self.volt_var_curve.shifted(-half)
        return up, down


@dataclass(frozen=True)
class InverterState:
    """Mémoire d'un contrôleur d'onduleur entre deux pas de temps."""
    q_prev: float = 0.0
    p_prev: float = 0.0
    v_avg: Optional[float] = None
    v_ref_adaptive: Optional[float] = None
    v_prev: Optional[float] = None
    v_window: Tuple[float, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class InverterRating:
    p_rated_kw: float = 1000.0
    s_rated_kva: float = 1200.0

    @classmethod
    def of(cls, unit) -> "InverterRating":
        return cls(unit.p_rated_kW, unit.s_inverter_kVA)


def initial_state(v_pu: float) -> InverterState:
    """État de démarrage à froid: aucune histoire fabriquée."""
    return InverterState(v_avg=v_pu, v_ref_adaptive=v_pu, v_prev=v_pu)


def nine_function_set() -> List[InverterFunctionConfig]:
    """Les neuf fonctions du balayage comparatif, avec les réglages par défaut."""
    return [
        InverterFunctionConfig(function=FunctionKind.VOLT_WATT, label="VoltWatt"),
        InverterFunctionConfig(function=FunctionKind.VOLT_WATT_RATE_LIMIT, label="VoltWattRateLimit"),
        InverterFunctionConfig(function=FunctionKind.VOLT_VAR, label="VoltVar"),
        InverterFunctionConfig(function=FunctionKind.VOLT_VAR_ADAPTIVE, label="VoltVarAdaptive"),
        InverterFunctionConfig(function=FunctionKind.VOLT_VAR_HYSTERESIS, label="VoltVarHysteresis"),
        InverterFunctionConfig(function=FunctionKind.VOLT_VAR_LPF, label="VoltVarLPF"),
        InverterFunctionConfig(function=FunctionKind.MAX_GEN_LIMIT, label="MaxGenLimit80",
                               gen_limit_fraction=0.8),
        InverterFunctionConfig(function=FunctionKind.CONSTANT_PF, label="FPF0.8", power_factor=0.8),
        InverterFunctionConfig(function=FunctionKind.DYN_REACTIVE_CURRENT, label="DynReactiveCurrent"),
    ]
