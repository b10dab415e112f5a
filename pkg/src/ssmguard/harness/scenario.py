"""Scenario description: stream rates, human and robot trajectories, noise, seed."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ScenarioError
from ..ssm import SsmConfig

DEFAULT_RATES = {"lidar": 20.0, "robot": 125.0, "mocap": 120.0}
# lidar mounted beside the robot base, level, 0.9 m above the floor
DEFAULT_LIDAR_POSE = [[1.0, 0.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0, -0.4],
                      [0.0, 0.0, 1.0, 0.9],
                      [0.0, 0.0, 0.0, 1.0]]


@dataclass(frozen=True)
class Phantom:
    """Vertical capsule standing on its ground point."""

    radius: float = 0.25
    height: float = 1.7

    def axis(self, ground_point) -> tuple[np.ndarray, np.ndarray]:
        g = np.asarray(ground_point, dtype=float)
        return g + [0.0, 0.0, self.radius], g + [0.0, 0.0, self.height - self.radius]


@dataclass(frozen=True)
class Scenario:
    """Timed waypoints are linearly interpolated.

    ``human_waypoints`` rows are ``[t, x, y, z]`` with ``(x, y, z)`` the
    phantom's ground point in the robot base frame. ``robot_waypoints`` rows
    are ``[t, q1..qn]``; the robot follows that joint path at a speed scaled by
    the controller, so waypoint times are nominal (full-speed) times.
    """

    duration: float
    human_waypoints: np.ndarray
    robot_waypoints: np.ndarray
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    noise_sigma_m: float = 0.0
    seed: int = 0
    ssm: SsmConfig = field(default_factory=SsmConfig)
    lidar_pose: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_LIDAR_POSE))
    phantom: Phantom = field(default_factory=Phantom)
    link_radius: float = 0.06
    sync_tolerance_s: float = 0.005
    calibration_noise_m: float = 0.0
    perception: str = "phantom"  # or "pipeline"

    def __post_init__(self):
        hw = np.asarray(self.human_waypoints, dtype=float)
        rw = np.asarray(self.robot_waypoints, dtype=float)
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ScenarioError(f"duration must be positive, got {self.duration}")
        if hw.ndim != 2 or hw.shape[1] != 4 or len(hw) == 0:
            raise ScenarioError("human_waypoints must be a non-empty list of [t, x, y, z]")
        if rw.ndim != 2 or rw.shape[1] < 2 or len(rw) == 0:
            raise ScenarioError("robot_waypoints must be a non-empty list of [t, q1..qn]")
        for name, wp in (("human", hw), ("robot", rw)):
            if not np.all(np.isfinite(wp)):
                raise ScenarioError(f"{name}_waypoints contain non-finite values")
            if np.any(np.diff(wp[:, 0]) <= 0):
                raise ScenarioError(f"{name}_waypoints must be strictly time-sorted")
            if wp[0, 0] < 0 or wp[-1, 0] > self.duration:
                raise ScenarioError(f"{name}_waypoints fall outside [0, duration={self.duration}]")
        rates = {**DEFAULT_RATES, **self.rates}
        unknown = set(rates) - set(DEFAULT_RATES)
        if unknown:
            raise ScenarioError(f"unknown rate keys: {', '.join(sorted(unknown))}")
        for k, v in rates.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ScenarioError(f"rate {k!r} must be positive, got {v!r}")
        if not self.noise_sigma_m >= 0 or not self.calibration_noise_m >= 0:
            raise ScenarioError("noise levels must be non-negative")
        if self.perception not in ("phantom", "pipeline"):
            raise ScenarioError(f"perception must be 'phantom' or 'pipeline', got {self.perception!r}")
        if not self.sync_tolerance_s > 0:
            raise ScenarioError("sync_tolerance_s must be positive")
        object.__setattr__(self, "human_waypoints", hw)
        object.__setattr__(self, "robot_waypoints", rw)
        object.__setattr__(self, "rates", {k: float(v) for k, v in rates.items()})
        object.__setattr__(self, "lidar_pose", np.asarray(self.lidar_pose, dtype=float))

    @property
    def n_joints(self) -> int:
        return self.robot_waypoints.shape[1] - 1

    def human_ground(self, t: float) -> np.ndarray:
        return _lerp_rows(self.human_waypoints, t)

    def robot_path(self, s: float) -> np.ndarray:
        """Joint positions at nominal path time ``s`` (held at the ends)."""
        return _lerp_rows(self.robot_waypoints, s)

    def robot_path_rate(self, s: float) -> np.ndarray:
        """dq/ds of the piecewise-linear path; zero outside the waypoint span."""
        wp = self.robot_waypoints
        if len(wp) < 2 or s < wp[0, 0] or s >= wp[-1, 0]:
            return np.zeros(self.n_joints)
        k = int(np.searchsorted(wp[:, 0], s, side="right")) - 1
        return (wp[k + 1, 1:] - wp[k, 1:]) / (wp[k + 1, 0] - wp[k, 0])

    # --- serialization ---

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {"duration_s", "rates", "human_waypoints", "robot_waypoints", "noise_sigma_m",
                 "seed", "ssm", "lidar_pose", "phantom", "link_radius", "sync_tolerance_s",
                 "calibration_noise_m", "perception"}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        try:
            kw = dict(
                duration=float(data["duration_s"]),
                human_waypoints=data["human_waypoints"],
                robot_waypoints=data["robot_waypoints"],
                rates=dict(data.get("rates", {})),
                noise_sigma_m=float(data.get("noise_sigma_m", 0.0)),
                seed=int(data.get("seed", 0)),
                ssm=SsmConfig.from_dict(data.get("ssm", {})),
                link_radius=float(data.get("link_radius", 0.06)),
                sync_tolerance_s=float(data.get("sync_tolerance_s", 0.005)),
                calibration_noise_m=float(data.get("calibration_noise_m", 0.0)),
                perception=str(data.get("perception", "phantom")),
            )
            if "lidar_pose" in data:
                kw["lidar_pose"] = data["lidar_pose"]
            if "phantom" in data:
                kw["phantom"] = Phantom(**data["phantom"])
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing key {exc.args[0]!r}") from exc
        except ConfigError as exc:
            raise ScenarioError(f"ssm block: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration,
            "rates": dict(self.rates),
            "human_waypoints": self.human_waypoints.tolist(),
            "robot_waypoints": self.robot_waypoints.tolist(),
            "noise_sigma_m": self.noise_sigma_m,
            "seed": self.seed,
            "ssm": self.ssm.to_dict(),
            "lidar_pose": self.lidar_pose.tolist(),
            "phantom": {"radius": self.phantom.radius, "height": self.phantom.height},
            "link_radius": self.link_radius,
            "sync_tolerance_s": self.sync_tolerance_s,
            "calibration_noise_m": self.calibration_noise_m,
            "perception": self.perception,
        }


def _lerp_rows(wp: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of waypoint rows ``[t, values...]``, held at both ends."""
    if t <= wp[0, 0]:
        return wp[0, 1:].copy()
    if t >= wp[-1, 0]:
        return wp[-1, 1:].copy()
    k = int(np.searchsorted(wp[:, 0], t, side="right")) - 1
    w = (t - wp[k, 0]) / (wp[k + 1, 0] - wp[k, 0])
    return wp[k, 1:] + w * (wp[k + 1, 1:] - wp[k, 1:])


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ScenarioError(f"{p}: cannot read scenario ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{p}: scenario must be a JSON object")
    try:
        return Scenario.from_dict(data)
    except ScenarioError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc
