"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_by_lead(series: dict, path, metric: str = "nmae", step_minutes: int = 15) -> Path:
    """``series`` maps a label to a list of by-lead rows (fractions)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rows in series.items():
        hours = [(r["lead"] + 1) * step_minutes / 60.0 for r in rows]
        ax.plot(hours, [100.0 * r[metric] for r in rows], label=label)
    ax.set_xlabel("lead time [h]")
    ax.set_ylabel(f"median {metric.upper()} across nodes [%]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_by_prediction_time(series: dict, path, metric: str = "nmae") -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rows in series.items():
        hours = [int(r["prediction_time"][:2]) + int(r["prediction_time"][3:]) / 60.0 for r in rows]
        ax.plot(hours, [100.0 * r[metric] for r in rows], marker=".", label=label)
    ax.set_xlabel("prediction time [h UTC]")
    ax.set_ylabel(f"mean {metric.upper()} [%]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_trajectories(times, quantiles: dict, path, truth: dict | None = None, max_panels: int = 6) -> Path:
    """Per-node q05-q95 band with the median line; ``quantiles[node]`` is (H, Q)."""
    nodes = list(quantiles)[:max_panels]
    fig, axes = plt.subplots(len(nodes), 1, figsize=(8, 2.0 * len(nodes)), sharex=True, squeeze=False)
    t = np.asarray(times, dtype="datetime64[m]").astype("datetime64[s]").astype(object)
    for ax, node in zip(axes[:, 0], nodes):
        q = np.asarray(quantiles[node])
        if q.shape[1] >= 3:
            ax.fill_between(t, q[:, 0], q[:, -1], alpha=0.3, label="q05-q95")
        ax.plot(t, q[:, q.shape[1] // 2], label="median")
        if truth is not None and node in truth:
            ax.plot(t, truth[node], "k--", lw=1, label="observed")
        ax.set_ylabel(f"{node}\nkW/m$^2$")
    axes[0, 0].legend(loc="upper right", fontsize=8)
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_training_log(log_path, path) -> Path:
    steps, train, val_steps, val = [], [], [], []
    with open(log_path, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            train.append(float(row["train_loss"]))
            if row["val_loss"]:
                val_steps.append(int(row["step"]))
                val.append(float(row["val_loss"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, train, lw=0.8, label="train")
    if val:
        ax.plot(val_steps, val, marker="o", label="validation")
    ax.set_xlabel("optimizer update")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)
