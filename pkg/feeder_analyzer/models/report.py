from typing import Dict, List, Optional

from pydantic import BaseModel


REPORT_SCHEMA_VERSION = "1.0"
LTC_ALIAS_NOTE = (
    "Le régulateur marqué LTC est le changeur de prises du poste; "
    "il occupe la première colonne VR des tableaux de prises."
)


class SwitchTally(BaseModel):
    """Totaux de manoeuvres d'une série: prises par régulateur et par phase, manoeuvres par banc."""
    duration_s: float
    taps: Dict[str, Dict[str, int]] = {}
    cap_switches: Dict[str, int] = {}

    def regulator_total(self, device: str) -> int:
        return sum(self.taps.get(device, {}).values())

    def device_total(self, device: str) -> int:
        if device in self.taps:
            return self.regulator_total(device)
        return self.cap_switches.get(device, 0)


class RegulatorImpact(BaseModel):
    device: str
    is_substation_ltc: bool = False
    taps_with_pv: Dict[str, int]
    taps_baseline: Dict[str, int]
    total_with_pv: int
    total_baseline: int
    dcf: Optional[float] = None
    omc_baseline: float = 1.0
    omc_scaled: Optional[float] = None


class CapacitorImpact(BaseModel):
    device: str
    switches_with_pv: int
    switches_baseline: int
    dcf: Optional[float] = None
    mean_kvar: Dict[str, float] = {}
    mean_kvar_baseline: Dict[str, float] = {}


class LossSummary(BaseModel):
    mean_p_loss_kw: float
    min_p_loss_kw: float
    mean_q_loss_kvar: float
    min_q_loss_kvar: float
    baseline_mean_p_loss_kw: float
    baseline_mean_q_loss_kvar: float
    pv_steps: int
    delta_p_loss_kw: float  # moyenne sur les pas avec production PV
    delta_q_loss_kvar: float
    midday_delta_p_loss_kw: float
    midday_delta_q_loss_kvar: float


class VoltageSummary(BaseModel):
    v_max_pu: float
    v_min_pu: float
    upper_violations: int
    lower_violations: int


class EnergySummary(BaseModel):
    available_kwh: float
    delivered_kwh: float
    curtailed_kwh: float


class ImpactReport(BaseModel):
    """Indicateurs d'impact d'une série comparée à la référence sans PV."""
    label: str
    function: Optional[str] = None
    cii: Optional[float] = None
    cii_devices: List[str] = []
    undefined_dcf: List[str] = []
    regulators: List[RegulatorImpact] = []
    capacitors: List[CapacitorImpact] = []
    losses: LossSummary
    voltages: VoltageSummary
    energy: EnergySummary
    not_converged_steps: int = 0
    control_unconverged_steps: int = 0


class SweepReport(BaseModel):
    schema_version: str = REPORT_SCHEMA_VERSION
    feeder: str
    baseline: str
    include_capacitors_in_cii: bool = False
    notes: List[str] = [LTC_ALIAS_NOTE]
    runs: List[ImpactReport]

    def by_label(self) -> Dict[str, ImpactReport]:
        return {r.label: r for r in self.runs}
