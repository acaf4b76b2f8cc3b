from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from feeder_analyzer.models.network import Network, PHASE_INDEX


@dataclass(frozen=True, eq=False)
class InjectionSet:
    """Injections nodales en kVA (production positive, consommation négative).

    Les condensateurs n'y figurent pas: leur apport dépend de l'état des bancs,
    passé séparément au solveur.
    """
    load_kva: np.ndarray  # (nbus, 3) complexe, négatif
    pv_kva: np.ndarray  # (nbus, 3) complexe, positif

    @property
    def total_kva(self) -> np.ndarray:
        return self.load_kva + self.pv_kva

    @classmethod
    def empty(cls, network: Network) -> "InjectionSet":
        shape = (network.n_buses, 3)
        return cls(np.zeros(shape, dtype=complex), np.zeros(shape, dtype=complex))


@dataclass(frozen=True, eq=False)
class Solution:
    """Point de fonctionnement du réseau à un pas de temps (fréquence fondamentale)."""
    network: Network
    v: np.ndarray  # (nbus, 3) complexe, volts phase-neutre
    i_from: np.ndarray  # (nedge, 3) complexe, A, côté amont
    i_to: np.ndarray  # (nedge, 3) complexe, A, côté aval
    s_from: np.ndarray  # (nedge, 3) kVA entrant côté amont
    s_to: np.ndarray  # (nedge, 3) kVA entrant côté aval (négatif en transit)
    source_kva: np.ndarray  # (3,) puissance fournie par la source
    cap_kvar: np.ndarray  # (ncap, 3) kVAR effectivement injectés
    injections: InjectionSet
    tap_positions: np.ndarray  # (nreg, 3) int
    converged: bool
    iterations: int
    max_mismatch_pu: float

    @property
    def v_pu(self) -> np.ndarray:
        return self.v / self.network.base_volts[:, None]

    @property
    def v_mag_pu(self) -> np.ndarray:
        return np.abs(self.v_pu)

    def bus_voltage_pu(self, bus_id: str) -> np.ndarray:
        return self.v_pu[self.network.bus_index[bus_id]]

    def phase_voltage_pu(self, bus_id: str, phase: str) -> float:
        return float(abs(self.bus_voltage_pu(bus_id)[PHASE_INDEX[phase]]))

    def mean_voltage_pu(self, bus_id: str, phases=None) -> float:
        idx = self.network.bus_index[bus_id]
        mask = self.network.phase_mask[idx].copy()
        if phases is not None:
            mask &= np.array([p in phases for p in PHASE_INDEX])
        return float(np.mean(self.v_mag_pu[idx][mask]))

    def node_voltages(self) -> Dict[str, float]:
        """|V| en pu par noeud `bus.phase`."""
        mags = self.v_mag_pu
        out = {}
        for i, bus in enumerate(self.network.bus_ids):
            for phase, j in PHASE_INDEX.items():
                if self.network.phase_mask[i, j]:
                    out[f"{bus}.{phase}"] = float(mags[i, j])
        return out

    def voltage_extremes(self) -> Tuple[float, float]:
        mags = self.v_mag_pu[self.network.phase_mask]
        return float(mags.max()), float(mags.min())
