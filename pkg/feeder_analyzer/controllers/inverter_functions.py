"""Fonctions d'onduleur intelligent en temps discret.

Chaque fonction est pure: elle reçoit la tension (ou fréquence) aux bornes, la
puissance DC disponible et l'état précédent, et retourne (P, Q, nouvel état).
Convention de signe: Q > 0 est une injection (comportement capacitif).
"""
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from feeder_analyzer.errors import ZeroPowerFactor
from feeder_analyzer.models.inverter import (
    FunctionKind,
    InverterFunctionConfig,
    InverterRating,
    InverterState,
    PiecewiseLinearCurve,
    Precedence,
)


REFERENCE_IRRADIANCE = 1000.0
REFERENCE_TEMP_C = 25.0
NOMINAL_FREQUENCY_HZ = 60.0


@dataclass(frozen=True)
class InverterOutput:
    p_kw: float
    q_kvar: float
    state: InverterState


def evaluate_curve(curve: PiecewiseLinearCurve, x: float) -> float:
    return curve.evaluate(x)


def pv_available_power(irradiance: float, temp_c: float, p_rated_kw: float, temp_coeff: float) -> float:
    """Puissance DC disponible, linéaire en éclairement et déclassée en température."""
    derate = max(0.0, 1.0 + temp_coeff * (temp_c - REFERENCE_TEMP_C))
    power = p_rated_kw * (max(0.0, irradiance) / REFERENCE_IRRADIANCE) * derate
    return min(power, p_rated_kw)


def apply_kva_limit(p: float, q: float, s_rated: float, precedence: Precedence) -> Tuple[float, float]:
    """Ramène (P, Q) sur le cercle kVA selon la priorité configurée."""
    if math.hypot(p, q) <= s_rated:
        return p, q
    if precedence == Precedence.WATT:
        p = math.copysign(min(abs(p), s_rated), p)
        q = math.copysign(math.sqrt(max(0.0, s_rated ** 2 - p ** 2)), q)
    else:
        q = math.copysign(min(abs(q), s_rated), q)
        p = math.copysign(math.sqrt(max(0.0, s_rated ** 2 - q ** 2)), p)
    return p, q


def step_constant_pf(p_avail: float, pf: float, s_rated: float,
                     precedence: Precedence = Precedence.WATT) -> Tuple[float, float]:
    if pf == 0:
        raise ZeroPowerFactor("un facteur de puissance nul n'est pas autorisé")
    p = p_avail
    q = p * math.tan(math.acos(min(1.0, abs(pf)))) * math.copysign(1.0, pf)
    magnitude = math.hypot(p, q)
    if precedence == Precedence.VAR and magnitude > s_rated:
        # Le facteur de puissance commandé est conservé
        scale = s_rated / magnitude
        return p * scale, q * scale
    return apply_kva_limit(p, q, s_rated, precedence)


def _warm(state: InverterState, v_pu: float) -> InverterState:
    if state.v_avg is None or state.v_ref_adaptive is None or state.v_prev is None:
        state = replace(
            state,
            v_avg=v_pu if state.v_avg is None else state.v_avg,
            v_ref_adaptive=v_pu if state.v_ref_adaptive is None else state.v_ref_adaptive,
            v_prev=v_pu if state.v_prev is None else state.v_prev,
        )
    return state


def _lag(previous: float, target: float, dt_s: float, tau_s: float) -> float:
    # Euler explicite, gain borné à 1
    alpha = min(1.0, dt_s / tau_s)
    return previous + alpha * (target - previous)


def step_volt_var(v_pu: float, p_avail: float, config: InverterFunctionConfig, state: InverterState,
                  rating: InverterRating = InverterRating(), dt_s: float = 60.0) -> InverterOutput:
    state = _warm(state, v_pu)
    s_rated = rating.s_rated_kva
    kind = config.function
    v_ref = state.v_ref_adaptive

    if kind == FunctionKind.VOLT_VAR_HYSTERESIS:
        up, down = config.hysteresis_curves()
        q_up = evaluate_curve(up, v_pu) * s_rated
        q_down = evaluate_curve(down, v_pu) * s_rated
        q = min(max(state.q_prev, min(q_up, q_down)), max(q_up, q_down))
    elif kind == FunctionKind.VOLT_VAR_ADAPTIVE:
        v_ref = _lag(state.v_ref_adaptive, v_pu, dt_s, config.tau_adapt_s)
        q = evaluate_curve(config.volt_var_curve, v_pu - v_ref + 1.0) * s_rated
    elif kind == FunctionKind.VOLT_VAR_LPF:
        target = evaluate_curve(config.volt_var_curve, v_pu) * s_rated
        q = _lag(state.q_prev, target, dt_s, config.tau_lpf_s)
    else:
        q = evaluate_curve(config.volt_var_curve, v_pu) * s_rated

    p, q = apply_kva_limit(p_avail, q, s_rated, config.precedence)
    new_state = replace(state, q_prev=q, p_prev=p, v_ref_adaptive=v_ref, v_prev=v_pu)
    return InverterOutput(p, q, new_state)


def step_volt_watt(v_pu: float, p_avail: float, config: InverterFunctionConfig, state: InverterState,
                   rating: InverterRating = InverterRating(), dt_s: float = 60.0) -> InverterOutput:
    state = _warm(state, v_pu)
    p_rated = rating.p_rated_kw
    p_cap = evaluate_curve(config.volt_watt_curve, v_pu) * p_rated
    p = max(0.0, min(p_avail, p_cap))
    if config.function == FunctionKind.VOLT_WATT_RATE_LIMIT:
        dt_min = dt_s / 60.0
        low = state.p_prev - config.ramp_down_per_min * p_rated * dt_min
        high = state.p_prev + config.ramp_up_per_min * p_rated * dt_min
        # La baisse n'est forcée au-delà de la rampe que par la puissance disponible
        p = max(0.0, min(min(max(p, low), high), p_avail))
    p, q = apply_kva_limit(p, 0.0, rating.s_rated_kva, Precedence.WATT)
    return InverterOutput(p, q, replace(state, p_prev=p, q_prev=q, v_prev=v_pu))


def step_freq_watt(f_hz: float, p_avail: float, config: InverterFunctionConfig, state: InverterState,
                   rating: InverterRating = InverterRating()) -> InverterOutput:
    p_rated = rating.p_rated_kw
    if config.freq_watt_hysteresis_hz > 0:
        # Dans la bande, la puissance reste figée à la valeur précédente
        half = config.freq_watt_hysteresis_hz / 2.0
        p_up = evaluate_curve(config.freq_watt_curve.shifted(+half), f_hz) * p_rated
        p_down = evaluate_curve(config.freq_watt_curve.shifted(-half), f_hz) * p_rated
        p = min(p_avail, min(max(state.p_prev, min(p_up, p_down)), max(p_up, p_down)))
    else:
        p = min(p_avail, evaluate_curve(config.freq_watt_curve, f_hz) * p_rated)
    if not config.storage_enabled:
        p = max(0.0, p)
    p, q = apply_kva_limit(p, 0.0, rating.s_rated_kva, Precedence.WATT)
    return InverterOutput(p, q, replace(state, p_prev=p, q_prev=q))


def step_max_gen_limit(p_avail: float, limit_fraction: float, p_rated_kw: float = 1000.0) -> Tuple[float, float]:
    return min(p_avail, limit_fraction * p_rated_kw), 0.0


def step_dyn_reactive_current(v_pu: float, p_avail: float, config: InverterFunctionConfig,
                              state: InverterState, rating: InverterRating = InverterRating(),
                              dt_s: float = 60.0) -> InverterOutput:
    """Courant réactif proportionnel à l'écart à la moyenne glissante des tensions passées."""
    state = _warm(state, v_pu)
    v_avg = float(np.mean(state.v_window)) if state.v_window else state.v_avg
    delta = v_pu - v_avg
    deadband = config.dyn_deadband_pu
    if abs(delta) <= deadband:
        i_q = 0.0
    else:
        i_q = -config.dyn_gain_kq * (delta - math.copysign(deadband, delta))
    q = i_q * v_pu * rating.s_rated_kva
    p, q = apply_kva_limit(p_avail, q, rating.s_rated_kva, config.precedence)

    size = max(1, int(round(config.dyn_window_min * 60.0 / dt_s)))
    window = (state.v_window + (v_pu,))[-size:]
    new_state = replace(state, q_prev=q, p_prev=p, v_window=window,
                        v_avg=float(np.mean(window)), v_prev=v_pu)
    return InverterOutput(p, q, new_state)


def step_watt_pf(p_avail: float, config: InverterFunctionConfig,
                 rating: InverterRating = InverterRating()) -> Tuple[float, float]:
    pf = evaluate_curve(config.watt_pf_curve, p_avail / rating.p_rated_kw)
    if abs(pf) < 1e-12:
        raise ZeroPowerFactor(f"la courbe watt-PF donne un facteur nul à P = {p_avail:.1f} kW")
    return step_constant_pf(p_avail, pf, rating.s_rated_kva, config.precedence)


def step_function(config: InverterFunctionConfig, v_pu: float, p_avail: float, state: InverterState,
                  rating: InverterRating, dt_s: float,
                  f_hz: Optional[float] = None) -> InverterOutput:
    """Aiguillage vers la fonction configurée."""
    kind = config.function
    if kind in (FunctionKind.VOLT_VAR, FunctionKind.VOLT_VAR_HYSTERESIS,
                FunctionKind.VOLT_VAR_ADAPTIVE, FunctionKind.VOLT_VAR_LPF):
        return step_volt_var(v_pu, p_avail, config, state, rating, dt_s)
    if kind in (FunctionKind.VOLT_WATT, FunctionKind.VOLT_WATT_RATE_LIMIT):
        return step_volt_watt(v_pu, p_avail, config, state, rating, dt_s)
    if kind == FunctionKind.DYN_REACTIVE_CURRENT:
        return step_dyn_reactive_current(v_pu, p_avail, config, state, rating, dt_s)
    if kind == FunctionKind.FREQ_WATT:
        out = step_freq_watt(f_hz if f_hz is not None else NOMINAL_FREQUENCY_HZ, p_avail, config, state, rating)
        return replace(out, state=replace(out.state, v_prev=v_pu))

    if kind == FunctionKind.CONSTANT_PF:
        p, q = step_constant_pf(p_avail, config.power_factor, rating.s_rated_kva, config.precedence)
    elif kind == FunctionKind.MAX_GEN_LIMIT:
        p, q = step_max_gen_limit(p_avail, config.gen_limit_fraction, rating.p_rated_kw)
        p, q = apply_kva_limit(p, q, rating.s_rated_kva, Precedence.WATT)
    else:
        p, q = step_watt_pf(p_avail, config, rating)
    return InverterOutput(p, q, replace(state, p_prev=p, q_prev=q, v_prev=v_pu))
