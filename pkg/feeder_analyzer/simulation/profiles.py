"""Générateurs de profils synthétiques, déterministes à graine fixée.

Le profil "cloudy_day" remplace un enregistrement d'éclairement réel: une
cloche de ciel clair entre le lever et le coucher du soleil, multipliée par un
masque nuageux en créneaux (périodes et profondeurs tirées au sort) et un bruit
blanc borné.
"""
from typing import Callable, Dict, Optional

import numpy as np

from feeder_analyzer.errors import ProfileError


DEFAULT_SEED = 1547
SECONDS_PER_DAY = 86400.0
SUNRISE_H = 6.0
SUNSET_H = 18.0
PEAK_IRRADIANCE = 1000.0


def _time_of_day_h(n: int, dt_s: float) -> np.ndarray:
    return (np.arange(n) * dt_s % SECONDS_PER_DAY) / 3600.0


def clear_sky(hours: np.ndarray, peak: float = PEAK_IRRADIANCE,
              sunrise: float = SUNRISE_H, sunset: float = SUNSET_H) -> np.ndarray:
    phase = (hours - sunrise) / (sunset - sunrise)
    bell = np.sin(np.pi * np.clip(phase, 0.0, 1.0))
    return peak * np.where((phase > 0) & (phase < 1), bell ** 1.5, 0.0)


def clear_day(n: int, dt_s: float, seed: int = DEFAULT_SEED, peak: float = PEAK_IRRADIANCE,
              **_) -> np.ndarray:
    return clear_sky(_time_of_day_h(n, dt_s), peak)


def cloudy_day(n: int, dt_s: float, seed: int = DEFAULT_SEED, peak: float = PEAK_IRRADIANCE,
               depth: float = 0.7, noise: float = 0.05, mean_period_min: float = 12.0,
               mean_clear_min: Optional[float] = None, mean_shade_min: Optional[float] = None,
               **_) -> np.ndarray:
    """Les durées d'éclaircie et d'ombre suivent des lois exponentielles distinctes
    lorsque `mean_clear_min` ou `mean_shade_min` sont donnés, sinon `mean_period_min`."""
    clear_min = mean_period_min if mean_clear_min is None else mean_clear_min
    shade_min = mean_period_min if mean_shade_min is None else mean_shade_min
    if min(clear_min, shade_min) <= 0.0:
        raise ProfileError("les durées moyennes de nuage doivent être positives")
    rng = np.random.default_rng(seed)
    base = clear_sky(_time_of_day_h(n, dt_s), peak)
    mask = np.ones(n)
    k = 0
    shaded = False
    while k < n:
        length = max(1, int(rng.exponential((shade_min if shaded else clear_min) * 60.0 / dt_s)))
        if shaded:
            mask[k:k + length] = 1.0 - depth * rng.uniform(0.5, 1.0)
        k += length
        shaded = not shaded
    jitter = 1.0 + noise * rng.standard_normal(n)
    return np.clip(base * mask * jitter, 0.0, peak * 1.1)


def square_wave(n: int, dt_s: float, seed: int = DEFAULT_SEED, low: float = 200.0,
                high: float = 1000.0, period_min: float = 10.0, **_) -> np.ndarray:
    """Créneau de nuages sévère, indépendant de l'heure."""
    half = max(1, int(round(period_min * 60.0 / dt_s / 2.0)))
    cycle = (np.arange(n) // half) % 2
    return np.where(cycle == 0, high, low).astype(float)


def residential(n: int, dt_s: float, seed: int = DEFAULT_SEED, base: float = 0.55,
                noise: float = 0.02, **_) -> np.ndarray:
    """Multiplicateur de charge résidentielle: pointes du matin et du soir."""
    rng = np.random.default_rng(seed)
    hours = _time_of_day_h(n, dt_s)
    morning = 0.25 * np.exp(-0.5 * ((hours - 7.5) / 1.5) ** 2)
    evening = 0.45 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
    midday = 0.15 * np.exp(-0.5 * ((hours - 13.0) / 3.0) ** 2)
    return np.clip(base + morning + evening + midday + noise * rng.standard_normal(n), 0.0, None)


def diurnal(n: int, dt_s: float, seed: int = DEFAULT_SEED, t_min: float = 18.0,
            t_max: float = 32.0, **_) -> np.ndarray:
    """Température ambiante sinusoïdale, minimum vers 5 h et maximum vers 17 h."""
    hours = _time_of_day_h(n, dt_s)
    return (t_min + t_max) / 2.0 - (t_max - t_min) / 2.0 * np.cos(2 * np.pi * (hours - 5.0) / 24.0)


def flat(n: int, dt_s: float, seed: int = DEFAULT_SEED, value: float = 1.0, **_) -> np.ndarray:
    return np.full(n, float(value))


GENERATORS: Dict[str, Callable[..., np.ndarray]] = {
    "cloudy_day": cloudy_day,
    "clear_day": clear_day,
    "square_wave": square_wave,
    "residential": residential,
    "diurnal": diurnal,
    "flat": flat,
}


def generate(name: str, n: int, dt_s: float, seed: int = DEFAULT_SEED, **params) -> np.ndarray:
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise ProfileError(f"générateur de profil inconnu: {name}")
    return generator(n, dt_s, seed=seed, **params)
