"""Validation d'une description de départ en réseau radial solvable."""
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np

from feeder_analyzer.errors import (
    CycleDetected,
    DanglingReference,
    DisconnectedBus,
    InvalidSetting,
    NonPositiveRating,
    PhaseMismatch,
    ReversedRegulator,
    SingularSegment,
)
from feeder_analyzer.models.feeder import (
    PHASES,
    CapacitorMode,
    FeederDescription,
    resolved_z_matrix,
)
from feeder_analyzer.models.network import Edge, Network, PHASE_INDEX
from feeder_analyzer.utils.helpers import get_logger


logger = get_logger(__name__)

SYMMETRY_RTOL = 1e-9


def _mask(phases) -> np.ndarray:
    return np.array([p in phases for p in PHASES], dtype=bool)


def _check_buses(description: FeederDescription) -> None:
    for bus in description.buses:
        if bus.base_kV <= 0:
            raise NonPositiveRating("base_kV doit être > 0", locus=f"bus {bus.id}")
        if not 0 < bus.v_min_pu < bus.v_max_pu:
            raise InvalidSetting("limites de tension incohérentes", locus=f"bus {bus.id}")


def _check_z(line_id: str, z: np.ndarray, n_phases: int) -> None:
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise InvalidSetting("z_matrix doit être carrée", locus=f"ligne {line_id}")
    if z.shape[0] != n_phases:
        raise PhaseMismatch(
            f"z_matrix de dimension {z.shape[0]} pour {n_phases} phase(s) commune(s)",
            locus=f"ligne {line_id}",
        )
    if not np.all(np.isfinite(z)):
        raise InvalidSetting("z_matrix non finie", locus=f"ligne {line_id}")
    if np.any(np.abs(np.diag(z)) == 0.0):
        raise SingularSegment("impédance nulle", locus=f"ligne {line_id}")
    if not np.allclose(z, z.T, rtol=SYMMETRY_RTOL, atol=0.0):
        raise InvalidSetting("z_matrix non symétrique", locus=f"ligne {line_id}")
    diag = np.abs(np.diag(z))
    for k in range(n_phases):
        off = np.delete(np.abs(z[k]), k)
        if np.any(off > diag[k]):
            raise InvalidSetting("z_matrix non dominante en diagonale", locus=f"ligne {line_id}")


def _bfs_order(graph: nx.MultiGraph, source: str) -> List[str]:
    order = [source]
    order.extend(v for _, v in nx.bfs_edges(graph, source, sort_neighbors=sorted))
    return order


def build_network(description: FeederDescription) -> Network:
    """Vérifie les invariants du départ et construit le réseau radial.

    Raises:
        CycleDetected, DisconnectedBus, DanglingReference, PhaseMismatch,
        NonPositiveRating, InvalidSetting, SingularSegment, ReversedRegulator
    """
    _check_buses(description)
    buses = {b.id: b for b in description.buses}
    source = description.source.bus
    if source not in buses:
        raise DanglingReference(f"noeud source inconnu: {source}")

    # Topologie: lignes et régulateurs sont les seuls éléments série
    graph = nx.MultiGraph()
    graph.add_nodes_from(sorted(buses))
    series = [(l.id, l.from_bus, l.to_bus) for l in description.lines]
    series += [(r.id, r.from_bus, r.to_bus) for r in description.regulators]
    for edge_id, a, b in series:
        for bus in (a, b):
            if bus not in buses:
                raise DanglingReference(f"noeud inconnu: {bus}", locus=f"élément {edge_id}")
        if a == b:
            raise CycleDetected(f"boucle sur le noeud {a}", locus=f"élément {edge_id}")
        graph.add_edge(a, b, key=edge_id)
    try:
        cycle = nx.find_cycle(graph)
        raise CycleDetected("topologie non radiale: " + " -> ".join(str(e[0]) for e in cycle))
    except nx.NetworkXNoCycle:
        pass
    reachable = nx.node_connected_component(graph, source)
    missing = sorted(set(buses) - reachable)
    if missing:
        raise DisconnectedBus(f"noeud non relié à la source: {missing[0]}")

    order = _bfs_order(graph, source)
    index = {bus: i for i, bus in enumerate(order)}
    phase_mask = np.array([_mask(buses[b].phases) for b in order])
    base_kv = np.array([buses[b].base_kV for b in order], dtype=float)

    edges: List[Edge] = []
    parent = np.full(len(order), -1, dtype=int)

    for line in description.lines:
        a, b = line.from_bus, line.to_bus
        if index[a] > index[b]:
            logger.debug(f"Ligne {line.id} réorientée ({b} -> {a})")
            a, b = b, a
        up, down = set(buses[a].phases), set(buses[b].phases)
        if not down <= up:
            raise PhaseMismatch(
                f"phases {sorted(down - up)} absentes en amont ({a})", locus=f"ligne {line.id}"
            )
        if line.code is not None and line.z_matrix is None and line.code not in description.line_codes:
            raise DanglingReference(f"code de ligne inconnu: {line.code}", locus=f"ligne {line.id}")
        if line.length_km <= 0:
            raise NonPositiveRating("longueur nulle ou négative", locus=f"ligne {line.id}")
        z_small = resolved_z_matrix(line, description.line_codes)
        shared = [p for p in PHASES if p in down]
        _check_z(line.id, z_small, len(shared))
        z = np.zeros((3, 3), dtype=complex)
        idx = [PHASE_INDEX[p] for p in shared]
        z[np.ix_(idx, idx)] = z_small
        edges.append(Edge(line.id, "line", index[a], index[b], _mask(shared), z_ohm=z))

    for k, reg in enumerate(description.regulators):
        a, b = reg.from_bus, reg.to_bus
        if index[a] > index[b]:
            raise ReversedRegulator(f"régulateur orienté de l'aval vers l'amont ({a} -> {b})",
                                    locus=f"régulateur {reg.id}")
        up, down = set(buses[a].phases), set(buses[b].phases)
        if not down <= up:
            raise PhaseMismatch(f"phases {sorted(down - up)} absentes en amont ({a})",
                                locus=f"régulateur {reg.id}")
        if not set(reg.phases) <= down:
            raise PhaseMismatch(f"phases régulées {reg.phases} absentes du noeud {b}",
                                locus=f"régulateur {reg.id}")
        if reg.tap_min > reg.tap_max or reg.step_pu <= 0 or reg.bandwidth_pu <= 0:
            raise InvalidSetting("réglage de prises incohérent", locus=f"régulateur {reg.id}")
        if reg.daily_tap_limit < 0 or reg.setpoint_pu <= 0:
            raise InvalidSetting("consigne ou limite journalière invalide", locus=f"régulateur {reg.id}")
        for phase, tap in reg.tap_positions.items():
            if phase not in reg.phases:
                raise PhaseMismatch(f"prise initiale sur phase non régulée {phase}",
                                    locus=f"régulateur {reg.id}")
            if not reg.tap_min <= tap <= reg.tap_max:
                raise InvalidSetting(f"prise initiale {tap} hors plage", locus=f"régulateur {reg.id}")
        ratio = buses[b].base_kV / buses[a].base_kV
        edges.append(Edge(reg.id, "regulator", index[a], index[b], _mask(down),
                          regulator_idx=k, nominal_ratio=ratio))

    # Ordre des éléments: celui de leur noeud aval
    edges.sort(key=lambda e: e.to_idx)
    for k, edge in enumerate(edges):
        parent[edge.to_idx] = k

    _check_devices(description, buses)

    network = Network(
        name=description.name,
        bus_ids=tuple(order),
        phase_mask=phase_mask,
        base_kv=base_kv,
        v_min_pu=np.array([buses[b].v_min_pu for b in order]),
        v_max_pu=np.array([buses[b].v_max_pu for b in order]),
        edges=tuple(edges),
        parent_edge=parent,
        source=description.source,
        regulators=tuple(description.regulators),
        capacitors=tuple(description.capacitors),
        loads=tuple(description.loads),
        pv_units=tuple(description.pv_units),
        description=description,
        bus_index=index,
        edge_index={e.id: k for k, e in enumerate(edges)},
    )
    for array in (network.phase_mask, network.base_kv, network.v_min_pu, network.v_max_pu,
                  network.parent_edge):
        array.setflags(write=False)
    logger.debug(f"Réseau {network.name}: {network.n_buses} noeuds, {len(edges)} éléments série")
    return network


def _check_phase_subset(kind: str, item_id: str, phases, bus) -> None:
    extra = [p for p in phases if p not in bus.phases]
    if extra:
        raise PhaseMismatch(f"phases {extra} absentes du noeud {bus.id}", locus=f"{kind} {item_id}")


def _check_devices(description: FeederDescription, buses: Dict) -> None:
    def bus_of(kind, item_id, bus_id):
        if bus_id not in buses:
            raise DanglingReference(f"noeud inconnu: {bus_id}", locus=f"{kind} {item_id}")
        return buses[bus_id]

    for cap in description.capacitors:
        bus = bus_of("condensateur", cap.id, cap.bus)
        _check_phase_subset("condensateur", cap.id, cap.kvar_rating.keys(), bus)
        if not cap.kvar_rating or any(q <= 0 for q in cap.kvar_rating.values()):
            raise NonPositiveRating("puissance de banc nulle ou négative", locus=f"condensateur {cap.id}")
        if cap.q_max_node <= 0:
            raise NonPositiveRating("q_max_node doit être > 0", locus=f"condensateur {cap.id}")
        if cap.daily_switch_limit < 0:
            raise InvalidSetting("limite journalière négative", locus=f"condensateur {cap.id}")
        if cap.mode == CapacitorMode.VOLTAGE and not cap.on_threshold_pu < cap.off_threshold_pu:
            raise InvalidSetting("seuil d'enclenchement >= seuil de déclenchement",
                                 locus=f"condensateur {cap.id}")
        _check_phase_subset("condensateur", cap.id, cap.state.keys(), bus)
    _check_node_caps(description)

    for load in description.loads:
        bus = bus_of("charge", load.id, load.bus)
        _check_phase_subset("charge", load.id, load.phases.keys(), bus)
        if any(pq.kw < 0 for pq in load.phases.values()):
            raise InvalidSetting("puissance active de charge négative", locus=f"charge {load.id}")

    for pv in description.pv_units:
        bus = bus_of("pv", pv.id, pv.bus)
        if pv.phases is not None:
            _check_phase_subset("pv", pv.id, pv.phases, bus)
        if pv.p_rated_kW <= 0 or pv.s_inverter_kVA <= 0:
            raise NonPositiveRating("puissances nominales PV doivent être > 0", locus=f"pv {pv.id}")


def _check_node_caps(description: FeederDescription) -> None:
    """Contrainte de plafond réactif au noeud pour l'état initial des bancs."""
    by_bus: Dict[str, List[Tuple[float, float]]] = {}
    for cap in description.capacitors:
        on_kvar = sum(q for p, q in cap.kvar_rating.items() if cap.initial_state(p))
        by_bus.setdefault(cap.bus, []).append((on_kvar, cap.q_max_node))
    for bus_id, entries in by_bus.items():
        total = sum(q for q, _ in entries)
        cap_limit = min(limit for _, limit in entries)
        if total > cap_limit + 1e-9:
            raise InvalidSetting(f"injection initiale {total:.1f} kVAR > plafond {cap_limit:.1f} kVAR",
                                 locus=f"noeud {bus_id}")


def downstream_order(network: Network) -> List[str]:
    """Noeuds de la source vers les extrémités (ordre inverse: balayage amont)."""
    return list(network.bus_ids)
