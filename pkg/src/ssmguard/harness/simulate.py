"""Closed-loop scenario simulation on a simulated clock.

Streams are generated at their native rates (lidar 20 Hz, motion capture
120 Hz, robot 125 Hz), matched with :func:`synchronize`, and the controller
runs once per robot cycle on the newest matched perception snapshot (held
until the next one arrives). The robot advances along its joint path at a
speed scaled by the controller output, so the first ticks start from rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ScenarioError
from ..geometry import (
    SceneGraph,
    default_link_capsules,
    segment_distances,
    umeyama_align,
)
from ..kinematics import JointState, RigidTransform, RobotModel, load_robot
from ..perception import (
    PerceptionConfig,
    SyntheticOracle,
    build_background,
    extract_human,
)
from ..ssm import SsmConfig, SsmOutput, controller_tick
from .scenario import Scenario
from .sync import Record, SyncResult, synchronize
from .synthetic import HUMAN, SyntheticLidar, destagger_labels

log = logging.getLogger(__name__)

N_CALIBRATION_MARKERS = 8


@dataclass
class TimeSeriesLog:
    """One controller output per robot tick plus the true minimum distance."""

    outputs: list
    truth: np.ndarray

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float)
        if len(self.truth) != len(self.outputs):
            raise ValueError("truth series must have one entry per tick")
        ts = [o.timestamp for o in self.outputs]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("tick timestamps must be strictly increasing")

    def __len__(self):
        return len(self.outputs)

    @property
    def t_ns(self) -> np.ndarray:
        return np.array([o.timestamp for o in self.outputs], dtype=np.int64)

    @property
    def time_s(self) -> np.ndarray:
        return self.t_ns * 1e-9

    @property
    def min_distance(self) -> np.ndarray:
        return np.array([o.min_distance for o in self.outputs], dtype=float)

    @property
    def S_safety(self) -> np.ndarray:
        return np.array([o.S_safety for o in self.outputs], dtype=float)

    @property
    def rho(self) -> np.ndarray:
        return np.array([o.rho for o in self.outputs], dtype=float)

    @property
    def V_robot(self) -> np.ndarray:
        """Directed robot speed; NaN on ticks where it is undefined."""
        return np.array([np.nan if o.V_robot is None else o.V_robot for o in self.outputs])

    @property
    def valid(self) -> np.ndarray:
        return np.array([o.valid for o in self.outputs], dtype=bool)


@dataclass
class SimulationResult:
    log: TimeSeriesLog
    sync: SyncResult
    calibration: RigidTransform
    calibration_rms: float
    joint_positions: np.ndarray  # (ticks, n)
    human_ground: np.ndarray  # (ticks, 3) true phantom ground point
    perception_misses: int = 0
    extra: dict = field(default_factory=dict)


def _count(duration, rate) -> int:
    """Number of samples at ``k / rate`` with ``k / rate < duration``."""
    return int(np.ceil(duration * rate - 1e-9))


def _calibrate(lidar_pose: np.ndarray, noise: float, rng) -> tuple[RigidTransform, float]:
    """Estimate the sensor mount from markers seen by both the sensor and the world."""
    world = rng.uniform([-1.5, -1.5, 0.2], [1.5, 1.5, 2.0], size=(N_CALIBRATION_MARKERS, 3))
    inv = RigidTransform(lidar_pose).inverse()
    sensed = inv.apply(world)
    if noise > 0:
        sensed = sensed + rng.normal(0.0, noise, sensed.shape)
    return umeyama_align(sensed, world)


def _truth_distance(scene: SceneGraph, axis, radius) -> float:
    n = len(scene.seg0)
    d = segment_distances(scene.seg0, scene.seg1, np.tile(axis[0], (n, 1)), np.tile(axis[1], (n, 1)))
    return float(max(np.min(d - scene._radii) - radius, 0.0))


def _lidar_stream(scn: Scenario, lidar: SyntheticLidar, cal: RigidTransform, rng, misses):
    rate = scn.rates["lidar"]
    n = _count(scn.duration, rate)
    ph = scn.phantom
    records = []
    if scn.perception == "pipeline":
        pcfg = PerceptionConfig(seed=scn.seed)
        bg_frames = [lidar.render(None, ph.radius, 0, scn.noise_sigma_m, rng)[0]
                     for _ in range(pcfg.background_frames)]
        bg = build_background(bg_frames)
    for k in range(n):
        t_ns = int(round(k * 1e9 / rate))
        axis = ph.axis(scn.human_ground(t_ns * 1e-9))
        if scn.perception == "phantom":
            pts = lidar.phantom_points(axis, ph.radius, scn.noise_sigma_m, rng)
        else:
            frame, label = lidar.render(axis, ph.radius, t_ns, scn.noise_sigma_m, rng)
            mask = destagger_labels(label, lidar.shifts) == HUMAN
            boxes = SyntheticOracle(lambda i, f: mask).detect(k, frame)
            found = extract_human(frame, boxes[0], bg, pcfg) if boxes else None
            pts = found.points if found else np.empty((0, 3))
        if len(pts) == 0:
            misses[0] += 1
            records.append(Record(t_ns, None))
        else:
            records.append(Record(t_ns, cal.apply(pts)))
    return records


def run_scenario(scn: Scenario, cfg: SsmConfig | None = None,
                 model: RobotModel | None = None) -> SimulationResult:
    """Simulate ``scn`` and return the log together with diagnostics."""
    cfg = scn.ssm if cfg is None else cfg
    model = load_robot() if model is None else model
    if scn.n_joints != model.n:
        raise ScenarioError(f"robot_waypoints have {scn.n_joints} joints, robot has {model.n}")
    rng = np.random.default_rng(scn.seed)
    cal, cal_rms = _calibrate(scn.lidar_pose, scn.calibration_noise_m, rng)
    lidar = SyntheticLidar(scn.lidar_pose)
    misses = [0]
    lidar_recs = _lidar_stream(scn, lidar, cal, rng, misses)

    mocap_rate = scn.rates["mocap"]
    n_mocap = _count(scn.duration, mocap_rate)
    mocap_recs = [Record(t, scn.human_ground(t * 1e-9))
                  for t in (int(round(k * 1e9 / mocap_rate)) for k in range(n_mocap))]
    robot_rate = scn.rates["robot"]
    n_ticks = _count(scn.duration, robot_rate)
    tick_ns = [int(round(k * 1e9 / robot_rate)) for k in range(n_ticks)]
    robot_recs = [Record(t, k) for k, t in enumerate(tick_ns)]
    sync = synchronize({"lidar": lidar_recs, "robot": robot_recs, "mocap": mocap_recs},
                       scn.sync_tolerance_s)
    log.info("synchronized %d lidar records, dropped %s", len(sync.ticks), sync.dropped)

    scene = SceneGraph(model, default_link_capsules(model, scn.link_radius))
    dt = 1.0 / robot_rate
    s = float(scn.robot_waypoints[0, 0])
    prev: SsmOutput | None = None
    outputs, truth, qs, grounds = [], [], [], []
    next_sync = 0
    current = None
    for t_ns in tick_ns:
        while next_sync < len(sync.ticks) and sync.ticks[next_sync].time <= t_ns:
            current = sync.ticks[next_sync]
            next_sync += 1
            scene.set_human(current["lidar"].data, current.time)
        rho_prev = prev.rho if prev is not None else 0.0
        q = scn.robot_path(s)
        qd = rho_prev * scn.robot_path_rate(s)
        scene.update_robot(q, t_ns)
        out = controller_tick(scene, JointState(q, qd, t_ns), cfg, prev)
        ground = scn.human_ground(t_ns * 1e-9)
        outputs.append(out)
        truth.append(_truth_distance(scene, scn.phantom.axis(ground), scn.phantom.radius))
        qs.append(q)
        grounds.append(ground)
        prev = out
        s += out.rho * dt
    return SimulationResult(TimeSeriesLog(outputs, np.array(truth)), sync, cal, cal_rms,
                            np.array(qs), np.array(grounds), misses[0])


def simulate(scn: Scenario, cfg: SsmConfig | None = None) -> TimeSeriesLog:
    """Run a scenario and return its per-tick log (deterministic for a fixed seed)."""
    return run_scenario(scn, cfg).log
