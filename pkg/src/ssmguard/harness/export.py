"""Log artifacts: per-tick CSV, ground-truth CSV, summary JSON and an SVG plot."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..ssm import SsmOutput
from .metrics import rmse
from .simulate import TimeSeriesLog

TICK_COLUMNS = ("t_ns", "min_distance_m", "S_safety_m", "rho", "V_robot_mps", "valid")
TRUTH_COLUMNS = ("t_ns", "truth_min_distance_m")
INVALID_V_ROBOT = -1.0  # written for ticks without a defined directed velocity


def summarize(log: TimeSeriesLog, extra: dict | None = None) -> dict:
    """RMSE against truth over valid ticks, minimum rho and the violation count."""
    valid = log.valid
    d = log.min_distance
    usable = valid & np.isfinite(d) & np.isfinite(log.truth)
    err = rmse(d[usable], log.truth[usable]) if usable.any() else None
    out = {
        "ticks": len(log),
        "valid_ticks": int(valid.sum()),
        "rmse_m": err,
        "min_rho": float(log.rho.min()),
        "max_rho": float(log.rho.max()),
        "violation_count": int(np.sum(valid & (d < log.S_safety))),
        "truth_violation_count": int(np.sum(log.truth < log.S_safety)),
    }
    if extra:
        out.update(extra)
    return out


def write_ticks_csv(log: TimeSeriesLog, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TICK_COLUMNS)
        for o in log.outputs:
            v = INVALID_V_ROBOT if o.V_robot is None else o.V_robot
            w.writerow([o.timestamp, repr(float(o.min_distance)), repr(float(o.S_safety)),
                        repr(float(o.rho)), repr(float(v)), int(o.valid)])


def write_truth_csv(log: TimeSeriesLog, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for o, t in zip(log.outputs, log.truth):
            w.writerow([o.timestamp, repr(float(t))])


def read_log(directory) -> TimeSeriesLog:
    """Re-import ``ticks.csv`` (and ``truth.csv`` when present) written by :func:`export`."""
    d = Path(directory)
    outputs = []
    with open(d / "ticks.csv", newline="") as fh:
        rows = csv.DictReader(fh)
        if tuple(rows.fieldnames or ()) != TICK_COLUMNS:
            raise ValueError(f"{d / 'ticks.csv'}: unexpected header {rows.fieldnames}")
        for r in rows:
            valid = r["valid"] == "1"
            outputs.append(SsmOutput(float(r["S_safety_m"]), float(r["rho"]),
                                     float(r["V_robot_mps"]) if valid else None,
                                     float(r["min_distance_m"]), valid, int(r["t_ns"])))
    truth = np.full(len(outputs), np.nan)
    if (d / "truth.csv").is_file():
        with open(d / "truth.csv", newline="") as fh:
            truth = np.array([float(r["truth_min_distance_m"]) for r in csv.DictReader(fh)])
    return TimeSeriesLog(outputs, truth)


def plot_log(log: TimeSeriesLog, path):
    """Four stacked panels: distances, rho, V_robot, validity."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = log.time_s
    with matplotlib.rc_context({"svg.hashsalt": "ssmguard", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(3, 1, sharex=True, figsize=(9, 7))
        ax[0].plot(t, log.min_distance, label="min distance", lw=1)
        ax[0].plot(t, log.S_safety, label="S_safety", lw=1)
        if np.any(np.isfinite(log.truth)):
            ax[0].plot(t, log.truth, label="truth", lw=0.8, ls="--")
        ax[0].set_ylabel("m")
        ax[0].legend(loc="upper right")
        ax[1].plot(t, log.rho, lw=1)
        ax[1].set_ylabel("rho")
        ax[1].set_ylim(-0.05, 1.05)
        ax[2].plot(t, log.V_robot, lw=1)
        ax[2].set_ylabel("V_robot (m/s)")
        ax[2].set_xlabel("time (s)")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def export(log: TimeSeriesLog, path, extra: dict | None = None) -> dict:
    """Write ``ticks.csv``, ``truth.csv``, ``summary.json`` and ``plot.svg`` into ``path``."""
    if len(log) == 0:
        raise ValueError("cannot export an empty log")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    write_ticks_csv(log, d / "ticks.csv")
    write_truth_csv(log, d / "truth.csv")
    summary = summarize(log, extra)
    (d / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    plot_log(log, d / "plot.svg")
    return summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
