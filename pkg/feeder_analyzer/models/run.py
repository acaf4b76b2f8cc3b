from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from feeder_analyzer.models.devices import DeviceActionLog, ViolationRecord
from feeder_analyzer.models.harmonics import HarmonicResult
from feeder_analyzer.models.inverter import InverterFunctionConfig
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.solution import Solution


@dataclass(frozen=True, eq=False)
class TimestepResult:
    timestep: int
    time_s: float
    solution: Solution
    p_avail_kw: np.ndarray  # (npv,)
    p_kw: np.ndarray
    q_kvar: np.ndarray
    tap_positions: np.ndarray  # (nreg, 3)
    cap_states: np.ndarray  # (ncap, 3)
    p_loss_kw: float
    q_loss_kvar: float
    violations: List[ViolationRecord]
    converged: bool
    control_converged: bool
    control_iterations: int

    @property
    def pv_available_kw(self) -> float:
        return float(np.sum(self.p_avail_kw))

    @property
    def cap_kvar(self) -> np.ndarray:
        return self.solution.cap_kvar


@dataclass(frozen=True, eq=False)
class HarmonicSnapshot:
    timestep: int
    time_s: float
    result: HarmonicResult


@dataclass(eq=False)
class RunResult:
    """Résultat d'une série temporelle complète pour une configuration."""
    label: str
    network: Network
    function: Optional[InverterFunctionConfig]
    pv_enabled: bool
    dt_s: float
    timesteps: List[TimestepResult]
    log: DeviceActionLog
    initial_taps: np.ndarray
    initial_caps: np.ndarray
    final_taps: np.ndarray
    final_caps: np.ndarray
    harmonics: List[HarmonicSnapshot] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def __len__(self) -> int:
        return len(self.timesteps)

    @property
    def n_not_converged(self) -> int:
        return sum(1 for r in self.timesteps if not r.converged)

    @property
    def n_control_unconverged(self) -> int:
        return sum(1 for r in self.timesteps if not r.control_converged)

    def losses(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.array([r.p_loss_kw for r in self.timesteps]),
                np.array([r.q_loss_kvar for r in self.timesteps]))

    def pv_available(self) -> np.ndarray:
        return np.array([r.pv_available_kw for r in self.timesteps])

    def time_s(self) -> np.ndarray:
        return np.array([r.time_s for r in self.timesteps])

    def initial_positions(self) -> Dict[Tuple[str, str], int]:
        positions = {}
        for k, reg in enumerate(self.network.regulators):
            for phase in reg.phases:
                positions[(reg.id, phase)] = int(self.initial_taps[k, PHASE_INDEX[phase]])
        return positions
