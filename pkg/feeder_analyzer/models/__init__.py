from feeder_analyzer.models.feeder import (
    Bus,
    CapacitorBank,
    CapacitorMode,
    FeederDescription,
    LineCode,
    LineSegment,
    LoadPoint,
    PVUnit,
    RegulatorBank,
    Source
)

from feeder_analyzer.models.inverter import (
    FunctionKind,
    InverterFunctionConfig,
    InverterState,
    PiecewiseLinearCurve
)

from feeder_analyzer.models.devices import (
    DeviceActionLog,
    SwitchAction,
    TapAction,
    ViolationRecord
)

from feeder_analyzer.models.network import Network
from feeder_analyzer.models.solution import InjectionSet, Solution
from feeder_analyzer.models.harmonics import HarmonicResult, HarmonicSpectrum
