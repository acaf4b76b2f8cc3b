from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, validator


DEFAULT_ORDERS = (1, 3, 5, 7, 11, 13)
# Fractions du courant fondamental, angles nuls
DEFAULT_FRACTIONS = {3: 0.015, 5: 0.025, 7: 0.015, 11: 0.007, 13: 0.005}


class HarmonicSpectrum(BaseModel):
    """Spectre d'injection d'un onduleur: rang -> (fraction du fondamental, angle en degrés)."""
    components: Dict[int, Tuple[float, float]]

    @validator("components")
    def _valid(cls, components):
        components = dict(components)
        fundamental = components.setdefault(1, (1.0, 0.0))
        if fundamental[0] != 1.0:
            raise ValueError("la composante fondamentale doit valoir 1.0")
        for order, (fraction, _) in components.items():
            if order < 1:
                raise ValueError(f"rang harmonique invalide: {order}")
            if fraction < 0:
                raise ValueError(f"fraction négative au rang {order}")
        return dict(sorted(components.items()))

    @property
    def orders(self) -> Tuple[int, ...]:
        return tuple(self.components)

    def fraction(self, order: int) -> float:
        return self.components[order][0]

    def angle_rad(self, order: int) -> float:
        return float(np.deg2rad(self.components[order][1]))

    def scaled(self, order: int, factor: float) -> "HarmonicSpectrum":
        components = dict(self.components)
        fraction, angle = components[order]
        components[order] = (fraction * factor, angle)
        return HarmonicSpectrum(components=components)

    @classmethod
    def default(cls) -> "HarmonicSpectrum":
        return cls(components={h: (f, 0.0) for h, f in DEFAULT_FRACTIONS.items()})

    @classmethod
    def zero(cls, orders=DEFAULT_ORDERS) -> "HarmonicSpectrum":
        return cls(components={h: (0.0, 0.0) for h in orders if h != 1})


@dataclass(frozen=True, eq=False)
class HarmonicResult:
    """Amplitudes par élément surveillé, par rang et par phase."""
    orders: Tuple[int, ...]
    elements: Tuple[str, ...]
    phase_mask: np.ndarray  # (nel, 3)
    v_pu: np.ndarray  # (nel, nord, 3) |V| au noeud aval
    i_a: np.ndarray  # (nel, nord, 3) |I| côté aval
    bus_v: np.ndarray  # (nord, nbus, 3) tensions complexes nodales (volts)

    def element_index(self, element: str) -> int:
        return self.elements.index(element)

    def order_index(self, order: int) -> int:
        return self.orders.index(order)
