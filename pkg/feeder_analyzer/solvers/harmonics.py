"""Balayage harmonique par injection de courant.

À chaque rang h > 1 le réseau est linéaire: réactances série multipliées par h,
résistances inchangées, charges converties en admittances à partir de leur
point de fonctionnement fondamental, source court-circuitée derrière son
impédance. Les onduleurs sont des sources de courant proportionnelles à leur
courant fondamental. Le système nodal est résolu directement (analyse nodale
modifiée pour les rapports idéaux des régulateurs).
"""
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from feeder_analyzer.errors import (
    ConfigurationError,
    MissingFundamental,
    UnconvergedFundamental,
    UnknownOrder,
)
from feeder_analyzer.models.harmonics import DEFAULT_ORDERS, HarmonicResult, HarmonicSpectrum
from feeder_analyzer.models.network import Network, PHASE_INDEX
from feeder_analyzer.models.solution import Solution
from feeder_analyzer.solvers.power_flow import regulator_ratios


Spectra = Union[HarmonicSpectrum, Mapping[str, HarmonicSpectrum]]
PVOutputs = Mapping[str, Tuple[float, float]]


def _spectrum_for(spectra: Spectra, pv_id: str) -> Optional[HarmonicSpectrum]:
    if isinstance(spectra, HarmonicSpectrum):
        return spectra
    return spectra.get(pv_id)


def _node_numbering(network: Network, grounded_source: bool) -> Dict[Tuple[int, int], int]:
    numbering = {}
    for i in range(network.n_buses):
        if grounded_source and i == network.source_idx:
            continue
        for j in range(3):
            if network.phase_mask[i, j]:
                numbering[(i, j)] = len(numbering)
    return numbering


def _scaled_impedance(z: np.ndarray, order: int) -> np.ndarray:
    return z.real + 1j * order * z.imag


def _solve_order(network: Network, fundamental: Solution, spectra: Spectra, order: int,
                 ratios: np.ndarray, pv_outputs: Optional[PVOutputs] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Tensions nodales (volts) et courants côté aval des éléments série au rang h."""
    z_src = complex(*network.source.z_ohm)
    grounded = z_src == 0
    numbering = _node_numbering(network, grounded)
    regulated = [(k, j) for k, e in enumerate(network.edges) if e.is_regulator
                 for j in range(3) if e.phase_mask[j]]
    n = len(numbering) + len(regulated)
    y = np.zeros((n, n), dtype=complex)
    rhs = np.zeros(n, dtype=complex)

    def stamp(a, b, value):
        if a is not None and b is not None:
            y[a, b] += value

    v1 = fundamental.v
    # Source derrière son impédance
    if not grounded:
        y_src = 1.0 / (z_src.real + 1j * order * z_src.imag)
        for j in range(3):
            if network.phase_mask[0, j]:
                y[numbering[(0, j)], numbering[(0, j)]] += y_src

    line_admittances = {}
    for k, edge in enumerate(network.edges):
        if edge.is_regulator:
            continue
        idx = np.flatnonzero(edge.phase_mask)
        z_h = _scaled_impedance(edge.z_ohm[np.ix_(idx, idx)], order)
        y_line = np.linalg.inv(z_h)
        line_admittances[k] = (idx, y_line)
        nodes_f = [numbering.get((edge.from_idx, j)) for j in idx]
        nodes_t = [numbering.get((edge.to_idx, j)) for j in idx]
        for a in range(len(idx)):
            for b in range(len(idx)):
                stamp(nodes_f[a], nodes_f[b], y_line[a, b])
                stamp(nodes_t[a], nodes_t[b], y_line[a, b])
                stamp(nodes_f[a], nodes_t[b], -y_line[a, b])
                stamp(nodes_t[a], nodes_f[b], -y_line[a, b])

    # Transformateurs idéaux: courant i_k sortant côté aval, a·i_k appelé côté amont
    for m, (k, j) in enumerate(regulated):
        edge = network.edges[k]
        row = len(numbering) + m
        a = ratios[k, j]
        f, t = numbering.get((edge.from_idx, j)), numbering.get((edge.to_idx, j))
        stamp(t, row, -1.0)
        stamp(f, row, a)
        stamp(row, t, 1.0)
        stamp(row, f, -a)

    # Charges en admittance constante: G = P/|V|², B = -Q/(h|V|²)
    s_cons = -fundamental.injections.load_kva * 1000.0
    for (i, j), node in numbering.items():
        vmag2 = abs(v1[i, j]) ** 2
        if vmag2 == 0:
            continue
        s = s_cons[i, j]
        y[node, node] += s.real / vmag2 - 1j * s.imag / (order * vmag2)
    for c, cap in enumerate(network.capacitors):
        i = network.bus_index[cap.bus]
        for phase in cap.phases:
            j = PHASE_INDEX[phase]
            node = numbering.get((i, j))
            kvar = fundamental.cap_kvar[c, j]
            if node is None or kvar == 0:
                continue
            y[node, node] += 1j * order * kvar * 1000.0 / abs(v1[i, j]) ** 2

    # Injections des onduleurs
    pv_kva = fundamental.injections.pv_kva
    per_bus = _units_per_bus(network)
    for unit in network.pv_units:
        spectrum = _spectrum_for(spectra, unit.id)
        if spectrum is None or order not in spectrum.components:
            continue
        i = network.bus_index[unit.bus]
        share = 1.0 / len(network.pv_phases(unit))
        for phase in network.pv_phases(unit):
            j = PHASE_INDEX[phase]
            node = numbering.get((i, j))
            if node is None or v1[i, j] == 0:
                continue
            if pv_outputs is not None and unit.id in pv_outputs:
                s_unit = complex(*pv_outputs[unit.id]) * share
            else:
                s_unit = complex(pv_kva[i, j]) / per_bus[unit.bus]
            i1 = np.conj(s_unit * 1000.0 / v1[i, j])
            magnitude = spectrum.fraction(order) * abs(i1)
            rhs[node] += magnitude * np.exp(1j * (order * np.angle(i1) + spectrum.angle_rad(order)))

    x = np.linalg.solve(y, rhs) if n else np.zeros(0, dtype=complex)

    v_h = np.zeros((network.n_buses, 3), dtype=complex)
    for (i, j), node in numbering.items():
        v_h[i, j] = x[node]
    i_h = np.zeros((len(network.edges), 3), dtype=complex)
    for k, (idx, y_line) in line_admittances.items():
        edge = network.edges[k]
        i_h[k, idx] = y_line @ (v_h[edge.from_idx, idx] - v_h[edge.to_idx, idx])
    for m, (k, j) in enumerate(regulated):
        i_h[k, j] = x[len(numbering) + m]
    return v_h, i_h


def _units_per_bus(network: Network) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for unit in network.pv_units:
        counts[unit.bus] = counts.get(unit.bus, 0) + 1
    return counts


def harmonic_solution(network: Network, fundamental: Solution, spectra: Spectra,
                      orders: Sequence[int] = DEFAULT_ORDERS,
                      monitored: Optional[Iterable[str]] = None,
                      pv_outputs: Optional[PVOutputs] = None) -> HarmonicResult:
    """Tensions et courants harmoniques aux éléments surveillés (tous par défaut).

    `pv_outputs` donne (P, Q) par unité; sinon l'injection PV du noeud est
    répartie également entre les unités qui y sont raccordées.
    """
    if not fundamental.converged:
        raise UnconvergedFundamental("la solution fondamentale n'a pas convergé")
    orders = tuple(sorted(set(orders) | {1}))
    for unit in network.pv_units:
        spectrum = _spectrum_for(spectra, unit.id)
        if spectrum is None:
            continue
        unknown = [h for h in orders if h not in spectrum.components]
        if unknown:
            raise UnknownOrder(f"rangs absents du spectre: {unknown}", locus=f"pv {unit.id}")
    elements = tuple(monitored) if monitored else tuple(e.id for e in network.edges)
    for element in elements:
        if element not in network.edge_index:
            raise ConfigurationError(f"élément surveillé inconnu: {element}")

    ratios = regulator_ratios(network, fundamental.tap_positions)
    bus_v = np.zeros((len(orders), network.n_buses, 3), dtype=complex)
    edge_i = np.zeros((len(orders), len(network.edges), 3), dtype=complex)
    for o, order in enumerate(orders):
        if order == 1:
            bus_v[o] = fundamental.v
            edge_i[o] = fundamental.i_to
        else:
            bus_v[o], edge_i[o] = _solve_order(network, fundamental, spectra, order, ratios, pv_outputs)

    edge_idx = [network.edge_index[e] for e in elements]
    to_idx = [network.edges[k].to_idx for k in edge_idx]
    base = network.base_volts[to_idx][:, None, None]
    v_pu = np.abs(bus_v[:, to_idx, :]).transpose(1, 0, 2) / base
    i_a = np.abs(edge_i[:, edge_idx, :]).transpose(1, 0, 2)
    mask = np.array([network.edges[k].phase_mask for k in edge_idx]).reshape(len(elements), 3)
    return HarmonicResult(orders, elements, mask, v_pu, i_a, bus_v)


def _thd(magnitudes: np.ndarray) -> np.ndarray:
    fundamental = magnitudes[0]
    harmonics = np.sqrt(np.sum(magnitudes[1:] ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fundamental > 0, harmonics / fundamental * 100.0, 0.0)


def thd(result: HarmonicResult, element: str) -> Tuple[np.ndarray, np.ndarray]:
    """(THD_v %, THD_i %) par phase; 0 sur une phase sans fondamental."""
    if 1 not in result.orders:
        raise MissingFundamental("rang 1 absent du résultat", locus=f"élément {element}")
    k = result.element_index(element)
    order_idx = [result.order_index(1)] + [result.order_index(h) for h in result.orders if h != 1]
    return _thd(result.v_pu[k][order_idx]), _thd(result.i_a[k][order_idx])


def thd_table(result: HarmonicResult) -> List[Tuple[str, int, float, float]]:
    rows = []
    for element in result.elements:
        thd_v, thd_i = thd(result, element)
        mask = result.phase_mask[result.element_index(element)]
        for j in np.flatnonzero(mask):
            rows.append((element, int(j), float(thd_v[j]), float(thd_i[j])))
    return rows
