"""Deterministic scenario simulation, stream synchronization, metrics and export."""

from .export import export, read_log, summarize
from .metrics import rmse
from .scenario import Phantom, Scenario, load_scenario
from .simulate import SimulationResult, TimeSeriesLog, run_scenario, simulate
from .sync import Record, SyncedTick, SyncResult, synchronize
from .synthetic import SyntheticLidar

__all__ = [
    "Phantom", "Record", "Scenario", "SimulationResult", "SyncResult", "SyncedTick",
    "SyntheticLidar", "TimeSeriesLog", "export", "load_scenario", "read_log", "rmse",
    "run_scenario", "simulate", "summarize", "synchronize",
]
