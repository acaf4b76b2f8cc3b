from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from feeder_analyzer.models.feeder import (
    PHASES,
    CapacitorBank,
    FeederDescription,
    LoadPoint,
    PVUnit,
    RegulatorBank,
    Source,
)


PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}


@dataclass(frozen=True, eq=False)
class Edge:
    """Élément série orienté amont -> aval (ligne ou régulateur)."""
    id: str
    kind: str  # "line" ou "regulator"
    from_idx: int
    to_idx: int
    phase_mask: np.ndarray  # (3,) bool
    z_ohm: Optional[np.ndarray] = None  # (3, 3) complexe, nul hors phases
    regulator_idx: Optional[int] = None
    nominal_ratio: float = 1.0

    @property
    def is_regulator(self) -> bool:
        return self.kind == "regulator"


@dataclass(frozen=True, eq=False)
class Network:
    """Réseau radial validé, immuable après construction.

    Les noeuds sont rangés dans l'ordre de parcours en largeur depuis la source,
    de sorte que l'indice 0 est la source et que l'ordre inverse convient au
    balayage amont.
    """
    name: str
    bus_ids: Tuple[str, ...]
    phase_mask: np.ndarray  # (nbus, 3) bool
    base_kv: np.ndarray  # (nbus,) kV phase-neutre
    v_min_pu: np.ndarray
    v_max_pu: np.ndarray
    edges: Tuple[Edge, ...]
    parent_edge: np.ndarray  # (nbus,) indice de l'élément amont, -1 pour la source
    source: Source
    regulators: Tuple[RegulatorBank, ...]
    capacitors: Tuple[CapacitorBank, ...]
    loads: Tuple[LoadPoint, ...]
    pv_units: Tuple[PVUnit, ...]
    description: FeederDescription
    bus_index: Dict[str, int] = field(default_factory=dict)
    edge_index: Dict[str, int] = field(default_factory=dict)

    @property
    def n_buses(self) -> int:
        return len(self.bus_ids)

    @property
    def source_idx(self) -> int:
        return 0

    @property
    def base_volts(self) -> np.ndarray:
        return self.base_kv * 1000.0

    def bus_phases(self, bus_id: str) -> List[str]:
        mask = self.phase_mask[self.bus_index[bus_id]]
        return [p for p, on in zip(PHASES, mask) if on]

    def regulator_edge(self, regulator_id: str) -> Edge:
        return self.edges[self.edge_index[regulator_id]]

    def upstream_buses(self, bus_id: str) -> List[str]:
        """Noeuds sur le chemin vers la source, du parent direct jusqu'à la source."""
        path = []
        k = int(self.parent_edge[self.bus_index[bus_id]])
        while k >= 0:
            parent = self.edges[k].from_idx
            path.append(self.bus_ids[parent])
            k = int(self.parent_edge[parent])
        return path

    def pv_phases(self, pv: PVUnit) -> List[str]:
        return list(pv.phases) if pv.phases else self.bus_phases(pv.bus)

    def node_labels(self) -> List[str]:
        """Libellés `bus.phase` de tous les noeuds existants, dans l'ordre du réseau."""
        labels = []
        for i, bus in enumerate(self.bus_ids):
            for j, phase in enumerate(PHASES):
                if self.phase_mask[i, j]:
                    labels.append(f"{bus}.{phase}")
        return labels
