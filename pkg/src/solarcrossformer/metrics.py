"""Deterministic and interval forecast scores, per-(node, lead) slices and the
by-lead / by-prediction-time / overall aggregation views.

Scores are fractions internally; CSV writers emit percentages in ``*_pct``
columns. Undefined values (empty filtered slice, zero truth sum) are NaN and
are written as empty cells.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Y_MAX = 1.3          # kW/m^2 peak normalisation
MAPE_FLOOR = 0.1     # kW/m^2, MAPE only over truths above this
VARIANTS = ("night_excluded", "night_included")
DETERMINISTIC = ("nrmse", "nmae", "mape")
PROBABILISTIC = ("picp", "pinaw", "ncrps")


def _pair(truth, forecast):
    y = np.asarray(truth, dtype=float).reshape(-1)
    f = np.asarray(forecast, dtype=float)
    if f.shape[0] != y.shape[0]:
        raise ValueError(f"{y.shape[0]} truths vs {f.shape[0]} forecasts")
    return y, f


def deterministic_metrics(truth, forecast, y_max: float = Y_MAX, night_excluded: bool = False) -> dict:
    """NRMSE and NMAE (normalised by ``y_max``) and MAPE over truths above 0.1 kW/m^2."""
    y, f = _pair(truth, forecast)
    f = f.reshape(-1)
    if night_excluded:
        keep = y != 0
        y, f = y[keep], f[keep]
    err = f - y
    if y.size == 0:
        nrmse = nmae = math.nan
    else:
        nrmse = math.sqrt(float(np.mean(err ** 2))) / y_max
        nmae = float(np.mean(np.abs(err))) / y_max
    day = y > MAPE_FLOOR
    mape = float(np.mean(np.abs(err[day]) / y[day])) if day.any() else math.nan
    return {"nrmse": nrmse, "nmae": nmae, "mape": mape}


def pinball_values(truth, forecast, levels) -> np.ndarray:
    """(n, Q) elementwise quantile losses."""
    y, f = _pair(truth, forecast)
    e = y[:, None] - f
    q = np.asarray(levels, dtype=float)
    return np.maximum(q * e, (q - 1.0) * e)


def probabilistic_metrics(truth, quantiles, levels=(0.05, 0.5, 0.95), y_max: float = Y_MAX,
                          night_excluded: bool = False, alpha: float = 0.05, beta: float = 0.95) -> dict:
    """PICP of the [alpha, beta] interval, PINAW = sum(width)/sum(truth), and the
    pinball-sum NCRPS approximation ``(2/Q) * sum_levels mean pinball / y_max``."""
    y, f = _pair(truth, quantiles)
    levels = tuple(float(q) for q in levels)
    if f.ndim != 2 or f.shape[1] != len(levels):
        raise ValueError(f"quantile forecasts must be (n, {len(levels)}), got {f.shape}")
    if alpha not in levels or beta not in levels:
        raise ValueError(f"interval bounds {alpha}, {beta} not among levels {levels}")
    if night_excluded:
        keep = y != 0
        y, f = y[keep], f[keep]
    if y.size == 0:
        return {"picp": math.nan, "pinaw": math.nan, "ncrps": math.nan}
    lo, hi = f[:, levels.index(alpha)], f[:, levels.index(beta)]
    picp = float(np.mean((y >= lo) & (y <= hi)))
    total = float(np.sum(y))
    pinaw = float(np.sum(hi - lo)) / total if total != 0 else math.nan
    ncrps = 2.0 / len(levels) * float(np.sum(pinball_values(y, f, levels).mean(axis=0))) / y_max
    return {"picp": picp, "pinaw": pinaw, "ncrps": ncrps}


# ------------------------------------------------------------------ slices

@dataclass
class EvalSlice:
    node_id: str
    lead: int                       # 0-based horizon index
    truth: np.ndarray               # (n,) kW/m^2
    forecast: np.ndarray            # (n, Q) kW/m^2
    issue_times: np.ndarray         # (n,) datetime64
    levels: tuple = (0.05, 0.5, 0.95)

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float).reshape(-1)
        self.forecast = np.asarray(self.forecast, dtype=float).reshape(len(self.truth), -1)
        if len(self.issue_times) != len(self.truth):
            raise ValueError("issue_times and truth lengths differ")
        if self.forecast.shape[1] != len(self.levels):
            raise ValueError(f"{self.forecast.shape[1]} forecast columns for levels {self.levels}")

    @property
    def night(self) -> np.ndarray:
        return self.truth == 0

    @property
    def point_forecast(self) -> np.ndarray:
        if 0.5 in self.levels:
            return self.forecast[:, self.levels.index(0.5)]
        return self.forecast[:, len(self.levels) // 2]

    def subset(self, keep) -> "EvalSlice":
        return EvalSlice(self.node_id, self.lead, self.truth[keep], self.forecast[keep],
                         np.asarray(self.issue_times)[keep], self.levels)


def slice_metrics(s: EvalSlice, night_excluded: bool, y_max: float = Y_MAX) -> dict:
    out = deterministic_metrics(s.truth, s.point_forecast, y_max, night_excluded)
    if not night_excluded:
        out["mape"] = math.nan
    if len(s.levels) > 1 and 0.05 in s.levels and 0.95 in s.levels:
        out.update(probabilistic_metrics(s.truth, s.forecast, s.levels, y_max, night_excluded))
    return out


def build_slices(truth, forecast, node_ids, issue_times, levels=(0.05, 0.5, 0.95)) -> list[EvalSlice]:
    """Slices from ``truth`` (W, N, H) and ``forecast`` (W, N, H, Q) stacked over windows,
    ordered by (node id, lead)."""
    y = np.asarray(truth, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if f.ndim == 3:
        f = f[..., None]
    if f.shape[:3] != y.shape:
        raise ValueError(f"forecast {f.shape} does not match truth {y.shape}")
    order = sorted(range(len(node_ids)), key=lambda i: str(node_ids[i]))
    times = np.asarray(issue_times)
    return [EvalSlice(str(node_ids[n]), h, y[:, n, h], f[:, n, h], times, tuple(levels))
            for n in order for h in range(y.shape[2])]


# ------------------------------------------------------------- aggregation

def time_of_day(times) -> np.ndarray:
    """Minutes after UTC midnight."""
    t = np.asarray(times, dtype="datetime64[m]")
    return (t - t.astype("datetime64[D]")).astype(np.int64)


@dataclass
class MetricsReport:
    metric_names: tuple
    slices: dict = field(default_factory=dict)            # variant -> list of row dicts
    by_lead: dict = field(default_factory=dict)           # variant -> list of row dicts
    by_prediction_time: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)           # variant -> dict

    def names_for(self, variant: str) -> tuple:
        if variant == "night_included":
            return tuple(m for m in self.metric_names if m != "mape")
        return self.metric_names


def _nan_stat(values, how):
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return math.nan
    return float(np.median(arr)) if how == "median" else float(np.mean(arr))


def aggregate_report(slices: list[EvalSlice], y_max: float = Y_MAX) -> MetricsReport:
    """Medians across nodes per lead, means per prediction time-of-day and overall
    means across all (node, lead) slices; both night variants, MAPE only night-excluded."""
    if not slices:
        raise ValueError("no evaluation slices")
    probabilistic = len(slices[0].levels) > 1
    names = DETERMINISTIC + (PROBABILISTIC if probabilistic else ())
    report = MetricsReport(names)
    leads = sorted({s.lead for s in slices})
    for variant in VARIANTS:
        excl = variant == "night_excluded"
        keep = report.names_for(variant)
        rows = []
        for s in slices:
            m = slice_metrics(s, excl, y_max)
            rows.append({"node_id": s.node_id, "lead": s.lead, "n_points": int(
                (~s.night).sum() if excl else len(s.truth)), **{k: m.get(k, math.nan) for k in keep}})
        report.slices[variant] = rows
        report.by_lead[variant] = [
            {"lead": h, **{k: _nan_stat([r[k] for r in rows if r["lead"] == h], "median") for k in keep}}
            for h in leads]
        report.overall[variant] = {k: _nan_stat([r[k] for r in rows], "mean") for k in keep}
        slice_tods = [time_of_day(s.issue_times) for s in slices]
        tods = sorted({int(t) for st in slice_tods for t in st})
        by_time = []
        for tod in tods:
            vals = {k: [] for k in keep}
            for s, st in zip(slices, slice_tods):
                sel = st == tod
                if not sel.any():
                    continue
                m = slice_metrics(s.subset(sel), excl, y_max)
                for k in keep:
                    vals[k].append(m.get(k, math.nan))
            by_time.append({"prediction_time": f"{tod // 60:02d}:{tod % 60:02d}",
                            **{k: _nan_stat(v, "mean") for k, v in vals.items()}})
        report.by_prediction_time[variant] = by_time
    return report


# ----------------------------------------------------------------- writers

def _cell(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(100.0 * v)
    return v


def _write_rows(path: Path, key_cols, metric_cols, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(key_cols) + [f"{m}_pct" for m in metric_cols])
        for r in rows:
            writer.writerow([r[k] + 1 if k == "lead" else r[k] for k in key_cols]
                            + [_cell(float(r[m])) for m in metric_cols])
    return path


def write_report(report: MetricsReport, out_dir) -> list[Path]:
    """One CSV per (view, night variant). Lead columns are 1-based horizon steps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for variant in VARIANTS:
        names = report.names_for(variant)
        written.append(_write_rows(out / f"slices_{variant}.csv", ("node_id", "lead", "n_points"),
                                   names, report.slices[variant]))
        written.append(_write_rows(out / f"by_lead_{variant}.csv", ("lead",), names, report.by_lead[variant]))
        written.append(_write_rows(out / f"by_prediction_time_{variant}.csv", ("prediction_time",), names,
                                   report.by_prediction_time[variant]))
        written.append(_write_rows(out / f"overall_{variant}.csv", (), names, [report.overall[variant]]))
    return written
