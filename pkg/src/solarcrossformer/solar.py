"""Solar position, Haurwitz clear-sky GHI and cyclical time encodings.

All functions are vectorised over numpy ``datetime64`` arrays and broadcast
latitude/longitude arrays. Times are UTC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STEP_MINUTES = 15


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")


def as_timestamps(times) -> np.ndarray:
    """Coerce to ``datetime64[m]`` and enforce the 15-minute grid."""
    t = np.asarray(times, dtype="datetime64[m]")
    minutes = t.astype(np.int64) % 60
    if np.any(minutes % STEP_MINUTES):
        bad = t.reshape(-1)[np.argmax((minutes % STEP_MINUTES).reshape(-1) != 0)]
        raise ValueError(f"timestamp {bad} is not on the 15-minute grid")
    return t


def _time_parts(times):
    t = np.asarray(times, dtype="datetime64[s]")
    day = t.astype("datetime64[D]")
    year = t.astype("datetime64[Y]")
    doy = (day - year.astype("datetime64[D]")).astype(np.int64) + 1
    seconds = (t - day).astype(np.int64)
    hours = seconds / 3600.0
    y = year.astype(np.int64) + 1970
    leap = (y % 4 == 0) & ((y % 100 != 0) | (y % 400 == 0))
    days_in_year = np.where(leap, 366.0, 365.0)
    return doy, hours, days_in_year


def solar_zenith(lat, lon, times) -> np.ndarray:
    """Solar zenith angle in degrees (NOAA low-precision series, ~0.5 deg)."""
    doy, hours, ndays = _time_parts(times)
    gamma = 2.0 * np.pi / ndays * (doy - 1 + (hours - 12.0) / 24.0)
    eqtime = 229.18 * (
        0.000075 + 0.001868 * np.cos(gamma) - 0.032077 * np.sin(gamma)
        - 0.014615 * np.cos(2 * gamma) - 0.040849 * np.sin(2 * gamma)
    )
    decl = (
        0.006918 - 0.399912 * np.cos(gamma) + 0.070257 * np.sin(gamma)
        - 0.006758 * np.cos(2 * gamma) + 0.000907 * np.sin(2 * gamma)
        - 0.002697 * np.cos(3 * gamma) + 0.00148 * np.sin(3 * gamma)
    )
    true_solar_minutes = hours * 60.0 + eqtime + 4.0 * np.asarray(lon, dtype=float)
    hour_angle = np.radians(true_solar_minutes / 4.0 - 180.0)
    phi = np.radians(np.asarray(lat, dtype=float))
    cos_z = np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(hour_angle)
    return np.degrees(np.arccos(np.clip(cos_z, -1.0, 1.0)))


def solar_elevation(lat, lon, times) -> np.ndarray:
    return 90.0 - solar_zenith(lat, lon, times)


def haurwitz(cos_zenith) -> np.ndarray:
    """Haurwitz clear-sky GHI in W/m^2 from cos(zenith); zero with the sun down."""
    cz = np.asarray(cos_zenith, dtype=float)
    out = np.zeros_like(cz)
    up = cz > 0
    out[up] = 1098.0 * cz[up] * np.exp(-0.057 / cz[up])
    return out


def clearsky_ghi(lat, lon, times) -> np.ndarray:
    """Clear-sky GHI in W/m^2."""
    return haurwitz(np.cos(np.radians(solar_zenith(lat, lon, times))))


def cyclical_encode(times) -> np.ndarray:
    """``[sin, cos]`` of minute-of-hour then ``[sin, cos]`` of UTC hour, shape (..., 4)."""
    t = np.asarray(times, dtype="datetime64[m]")
    total = t.astype(np.int64)
    minute = total % 60
    hour = (total // 60) % 24
    m = 2.0 * np.pi * minute / 60.0
    h = 2.0 * np.pi * hour / 24.0
    return np.stack([np.sin(m), np.cos(m), np.sin(h), np.cos(h)], axis=-1)
