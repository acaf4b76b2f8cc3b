from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Tuple, Union


class NoteKind(str, Enum):
    BUDGET_EXHAUSTED = "BudgetExhausted"
    LIMIT_CLAMPED = "LimitClamped"
    NODE_CAP_BINDING = "NodeCapBinding"


@dataclass(frozen=True)
class TapAction:
    device: str
    phase: str
    delta: int
    position: int

    @property
    def operations(self) -> int:
        return abs(self.delta)


@dataclass(frozen=True)
class SwitchAction:
    """Manoeuvre d'un banc. `phase` vaut "ABC" (ou le sous-ensemble) en mode groupé."""
    device: str
    phase: str
    new_state: bool

    @property
    def operations(self) -> int:
        return 1


DeviceAction = Union[TapAction, SwitchAction]


@dataclass(frozen=True)
class DeviceNote:
    timestep: int
    device: str
    phase: str
    kind: NoteKind


@dataclass(frozen=True)
class ViolationRecord:
    timestep: int
    bus: str
    phase: str
    v_pu: float
    bound: str  # "upper" ou "lower"


@dataclass
class ControlDecision:
    """Résultat d'une décision d'appareil: actions à appliquer et notes à journaliser."""
    actions: List[DeviceAction]
    notes: List[Tuple[str, str, NoteKind]]

    @classmethod
    def none(cls) -> "ControlDecision":
        return cls([], [])


class DeviceActionLog:
    """Journal append-only des manoeuvres d'appareils, avec compteurs journaliers.

    Les compteurs sont tenus à jour à chaque ajout et restent donc égaux à
    l'agrégation du journal.
    """

    def __init__(self):
        self.entries: List[Tuple[int, DeviceAction]] = []
        self.notes: List[DeviceNote] = []
        self._daily: Dict[int, Dict[Tuple[str, str], int]] = defaultdict(lambda: defaultdict(int))
        self._totals: Dict[Tuple[str, str], int] = defaultdict(int)
        self._noted = set()

    def append(self, timestep: int, day: int, action: DeviceAction) -> None:
        self.entries.append((timestep, action))
        key = (action.device, action.phase)
        self._daily[day][key] += action.operations
        self._totals[key] += action.operations

    def note(self, timestep: int, device: str, phase: str, kind: NoteKind) -> None:
        key = (timestep, device, phase, kind)
        if key in self._noted:
            return
        self._noted.add(key)
        self.notes.append(DeviceNote(timestep, device, phase, kind))

    def counters(self, day: int) -> Dict[Tuple[str, str], int]:
        """Opérations déjà consommées ce jour, par (appareil, phase)."""
        return self._daily[day]

    def daily_counts(self) -> Dict[int, Dict[Tuple[str, str], int]]:
        return {day: dict(counts) for day, counts in self._daily.items()}

    def total(self, device: str, phase: str) -> int:
        return self._totals.get((device, phase), 0)

    def totals(self) -> Dict[Tuple[str, str], int]:
        return dict(self._totals)

    def tap_actions(self) -> Iterator[Tuple[int, TapAction]]:
        return ((t, a) for t, a in self.entries if isinstance(a, TapAction))

    def switch_actions(self) -> Iterator[Tuple[int, SwitchAction]]:
        return ((t, a) for t, a in self.entries if isinstance(a, SwitchAction))

    def replay_positions(self, initial: Dict[Tuple[str, str], int]) -> Dict[Tuple[str, str], int]:
        """Rejoue les prises depuis les positions initiales."""
        positions = dict(initial)
        for _, action in self.tap_actions():
            key = (action.device, action.phase)
            positions[key] = positions.get(key, 0) + action.delta
        return positions

    def __len__(self) -> int:
        return len(self.entries)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_daily"] = {day: dict(c) for day, c in self._daily.items()}
        state["_totals"] = dict(self._totals)
        return state

    def __setstate__(self, state):
        daily = defaultdict(lambda: defaultdict(int))
        for day, counts in state["_daily"].items():
            daily[day].update(counts)
        state["_daily"] = daily
        state["_totals"] = defaultdict(int, state["_totals"])
        self.__dict__.update(state)
