"""Reference forecasts: the clear-sky curve itself and smart persistence."""

from __future__ import annotations

import numpy as np

KC_MIN_CLEARSKY_WM2 = 50.0


def clearsky_forecast(clearsky_future) -> np.ndarray:
    """Forecast GHI (kW/m^2) equal to clear-sky GHI over the horizon."""
    return np.asarray(clearsky_future, dtype=float) / 1000.0


def latest_clearsky_index(past_ghi, past_clearsky, min_clearsky: float = KC_MIN_CLEARSKY_WM2) -> np.ndarray:
    """Per-node GHI / clear-sky at the most recent past step with clear-sky >= ``min_clearsky`` W/m^2.

    ``past_ghi`` is (N, T) in kW/m^2, ``past_clearsky`` (N, T) in W/m^2. Nodes
    without any qualifying step get index 1.
    """
    ghi = np.asarray(past_ghi, dtype=float)
    cs = np.asarray(past_clearsky, dtype=float)
    ok = cs >= min_clearsky
    kc = np.ones(ghi.shape[0])
    any_ok = ok.any(axis=1)
    last = ghi.shape[1] - 1 - np.argmax(ok[:, ::-1], axis=1)
    rows = np.nonzero(any_ok)[0]
    kc[rows] = ghi[rows, last[rows]] * 1000.0 / cs[rows, last[rows]]
    return kc


def smart_persistence(past_ghi, past_clearsky, clearsky_future) -> np.ndarray:
    """Latest clear-sky index carried over the horizon, times future clear-sky (kW/m^2)."""
    kc = latest_clearsky_index(past_ghi, past_clearsky)
    return kc[:, None] * clearsky_forecast(clearsky_future)
