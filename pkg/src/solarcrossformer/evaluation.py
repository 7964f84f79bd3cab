"""Run the model or a baseline over evaluation windows and move per-point
forecasts to and from CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .baselines import clearsky_forecast, smart_persistence
from .metrics import aggregate_report, build_slices
from .model import SolarCrossFormer

BASELINES = ("clearsky", "smart_persistence")


def model_forecasts(model: SolarCrossFormer, windows, normalizer, masked_nodes=None, progress=None):
    """Stacked ``truth`` (W, N, H), ``forecast`` (W, N, H, Q) in kW/m^2 and issue times (W,).

    ``masked_nodes`` is a boolean (N,) array of nodes whose whole past is
    replaced by the mask token in every window.
    """
    cfg = model.cfg
    truths, preds, issues = [], [], []
    for i, w in enumerate(windows):
        inp = normalizer.model_inputs(w, None, cfg.patch_size, cfg.use_images)
        fc = model.predict(inp, node_mask=masked_nodes)
        truths.append(np.asarray(w.target))
        preds.append(fc.values)
        issues.append(w.issue_time)
        if progress and (i + 1) % 50 == 0:
            progress(f"forecast {i + 1}/{len(windows)} windows")
    return np.stack(truths), np.stack(preds), np.array(issues, dtype="datetime64[m]")


def baseline_forecasts(windows, kind: str):
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    truths, preds, issues = [], [], []
    for w in windows:
        if kind == "clearsky":
            fc = clearsky_forecast(w.clearsky_future)
        else:
            fc = smart_persistence(w.past_features[..., 0], w.clearsky_past, w.clearsky_future)
        truths.append(np.asarray(w.target))
        preds.append(fc[..., None])
        issues.append(w.issue_time)
    return np.stack(truths), np.stack(preds), np.array(issues, dtype="datetime64[m]")


def report_for(truth, forecast, node_ids, issue_times, levels):
    return aggregate_report(build_slices(truth, forecast, node_ids, issue_times, levels))


def quantile_columns(levels) -> list[str]:
    return [f"q{round(100 * q):02d}" for q in levels]


def write_points(path, truth, forecast, node_ids, issue_times, levels, step_minutes: int = 15) -> Path:
    """One row per (window, node, lead): issue time, node, 1-based lead, target time, truth, quantiles."""
    path = Path(path)
    w, n, h = truth.shape
    cols = quantile_columns(levels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["issue_time", "node_id", "lead", "target_time", "truth", *cols])
        for a in range(w):
            t0 = np.datetime64(issue_times[a], "m")
            for b in range(n):
                for c in range(h):
                    target = t0 + np.timedelta64(step_minutes * c, "m")
                    writer.writerow([str(t0), node_ids[b], c + 1, str(target), repr(float(truth[a, b, c])),
                                     *(repr(float(v)) for v in forecast[a, b, c])])
    return path


def read_points(path):
    """Inverse of ``write_points``: ``(truth, forecast, node_ids, issue_times, levels)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    levels = tuple(int(c[1:]) / 100.0 for c in header[5:])
    issues = list(dict.fromkeys(r[0] for r in rows))
    nodes = list(dict.fromkeys(r[1] for r in rows))
    leads = max(int(r[2]) for r in rows)
    truth = np.zeros((len(issues), len(nodes), leads))
    fc = np.zeros((len(issues), len(nodes), leads, len(levels)))
    ii = {t: i for i, t in enumerate(issues)}
    ni = {n: i for i, n in enumerate(nodes)}
    for r in rows:
        a, b, c = ii[r[0]], ni[r[1]], int(r[2]) - 1
        truth[a, b, c] = float(r[4])
        fc[a, b, c] = [float(v) for v in r[5:]]
    return truth, fc, nodes, np.array(issues, dtype="datetime64[m]"), levels
