"""Speed and separation monitoring controller.

Per control tick: closest human/robot pair -> velocity of the robot's closest
point along the separation vector -> protective separation distance -> speed
scaling factor -> jerk-limited update of the applied factor.

Sign convention: a positive directed velocity means the robot's closest point
moves toward the human.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, SsmGuardError, SyncError
from .geometry import ClosestPair, SceneGraph, closest_pair_query
from .kinematics import (
    JointState,
    RigidTransform,
    RobotModel,
    Twist,
    fk_matrices,
    jacobian_from_frames,
    reexpress_twist,
)

MIN_SEPARATION = 1e-6  # m; shorter separation vectors have no usable direction
NOMINAL_TICK = 1.0 / 125.0  # s, step used when no elapsed time is available
EMERGENCY_MARGIN = 0.8  # fraction of t_s the worst-case stop envelope may use


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@dataclass(frozen=True)
class SsmConfig:
    V_human: float = 1.6  # m/s
    t_r: float = 0.008  # s, control loop processing time
    t_s: float = 0.30  # s, robot stopping time
    C: float = 0.10  # m, intrusion distance
    Z_s: float = 0.04  # m, human position uncertainty
    Z_r: float = 0.003  # m, robot position uncertainty
    W_max: float = 3.0  # m, workspace distance limit
    a_max: float = 2.0  # 1/s, max rate of change of the scaling factor
    j_max: float = 20.0  # 1/s^2, max change of that rate
    max_skew: float = 0.020  # s, tolerated scene/joint-state timestamp skew
    # Multiply V_robot by (t_r + t_s) instead of t_r alone.
    robot_term_includes_stop_time: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"SsmConfig.{f.name} must be a finite non-negative number, got {v!r}")
        if self.W_max <= 0:
            raise ConfigError("SsmConfig.W_max must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SsmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown SsmConfig keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def check_stop_time(self, worst_case_stop_time: float):
        if self.t_s < worst_case_stop_time:
            raise ConfigError(
                f"t_s={self.t_s} s is below the worst-case stopping time {worst_case_stop_time} s")

    def stop_envelope(self) -> tuple[float, float]:
        """Rate and jerk limits that take the factor from 1 to 0 within ``t_s``.

        A trapezoidal rate profile over distance 1 takes ``1/a + a/j``;
        choosing ``a = 2/T`` and ``j = 2a/T`` with ``T = EMERGENCY_MARGIN * t_s``
        gives exactly ``T``. The nominal limits are kept when they are faster.
        """
        horizon = EMERGENCY_MARGIN * self.t_s
        a = max(self.a_max, 2.0 / horizon)
        j = max(self.j_max, 2.0 * a / horizon)
        return a, j


@dataclass(frozen=True)
class SsmOutput:
    S_safety: float
    rho: float
    V_robot: float | None
    min_distance: float
    valid: bool
    timestamp: int  # ns
    rho_rate: float = 0.0


class ScaleStep(NamedTuple):
    rho: float
    rate: float


def directed_frame(p_human, p_robot) -> RigidTransform | None:
    """Frame at ``p_robot`` whose z axis points at ``p_human``; None if undefined."""
    h = np.asarray(p_human, dtype=float).tolist()
    p = np.asarray(p_robot, dtype=float).tolist()
    s = (h[0] - p[0], h[1] - p[1], h[2] - p[2])
    norm = math.sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2])
    if not math.isfinite(norm) or norm < MIN_SEPARATION:
        return None
    f = (s[0] / norm, s[1] / norm, s[2] / norm)
    r = _cross((0.0, 0.0, 1.0), f)
    rn = math.hypot(*r)
    if rn < 1e-9:
        # f is parallel to world z; any horizontal axis will do
        r = _cross((1.0, 0.0, 0.0), f)
        rn = math.hypot(*r)
    r = (r[0] / rn, r[1] / rn, r[2] / rn)
    u = _cross(f, r)
    m = np.array([[r[0], u[0], f[0], p[0]],
                  [r[1], u[1], f[1], p[1]],
                  [r[2], u[2], f[2], p[2]],
                  [0.0, 0.0, 0.0, 1.0]])
    return RigidTransform._trusted(m)


def directed_robot_velocity(pair: ClosestPair, q, qd, model: RobotModel, *,
                            frames=None, skew: float = 0.0,
                            max_skew: float = 0.020) -> float | None:
    """Signed speed of the robot's closest point along the separation vector.

    Parameters
    ----------
    pair : ClosestPair
        Closest points of the current tick; ``robot_link`` names the frame
        that carries ``p_robot``.
    q, qd : array-like
        Joint positions and velocities.
    frames : ndarray, optional
        Precomputed :func:`fk_matrices` output for ``q``.
    skew : float
        Timestamp difference (s) between the pair's scene and the joint state.

    Returns
    -------
    float or None
        Positive when approaching the human; ``None`` when the separation
        vector is too short or not finite to define a direction.
    """
    if abs(skew) > max_skew:
        raise SyncError(f"joint state is {abs(skew) * 1e3:.1f} ms away from the scene snapshot "
                        f"(limit {max_skew * 1e3:.1f} ms)")
    t_r = directed_frame(pair.p_human, pair.p_robot)
    if t_r is None:
        return None
    qd = np.asarray(qd, dtype=float)
    if not math.isfinite(float(qd.sum())):
        return None
    if frames is None:
        frames = fk_matrices(model, q)
    jac = jacobian_from_frames(frames, pair.robot_link, pair.p_robot)
    twist = Twist.from_vector(jac @ qd)
    # slide the directed frame along its own z axis onto the human
    m_h = t_r.matrix.copy()
    m_h[:3, 3] += math.dist(pair.p_human, pair.p_robot) * m_h[:3, 2]
    t_h = RigidTransform._trusted(m_h)
    v_z = reexpress_twist(twist, t_h, "human").linear[2]
    return float(v_z)


def safety_distance(V_robot: float, cfg: SsmConfig) -> float:
    """Protective separation distance for a signed robot speed."""
    robot_time = cfg.t_r + cfg.t_s if cfg.robot_term_includes_stop_time else cfg.t_r
    return cfg.V_human * (cfg.t_r + cfg.t_s) + V_robot * robot_time + cfg.C + cfg.Z_s + cfg.Z_r


def speed_scaling(min_distance: float, S_safety: float, cfg: SsmConfig) -> float:
    """Speed factor in [0, 1]: surplus separation over ``W_max``; 0 for non-finite input."""
    surplus = min_distance - S_safety
    if not math.isfinite(surplus) or surplus <= 0.0:
        return 0.0
    return min(surplus / cfg.W_max, 1.0)


def jerk_limited_scale(current: float, target: float, dt: float, cfg: SsmConfig,
                       rate: float = 0.0, emergency: bool = False) -> ScaleStep:
    """Step the applied factor toward ``target`` with bounded rate and rate change.

    The rate toward the target is capped by ``a_max`` and by ``sqrt(2 j |e|)``
    (the fastest rate that can still be bled off over the remaining error
    ``e``); the rate itself changes by at most ``j_max * dt`` per step. The
    target is never crossed: a step that would pass it lands on it with zero
    rate. With ``emergency`` set, the :meth:`SsmConfig.stop_envelope` limits
    are used so a full stop fits inside ``t_s``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    target = min(max(target, 0.0), 1.0)
    if emergency:
        if cfg.t_s <= 0:
            return ScaleStep(target, 0.0)
        a_lim, j_lim = cfg.stop_envelope()
    else:
        a_lim, j_lim = cfg.a_max, cfg.j_max
    err = target - current
    if err == 0.0 and rate == 0.0:
        return ScaleStep(target, 0.0)
    if a_lim <= 0 or j_lim <= 0:
        return ScaleStep(current, 0.0)
    direction = 1.0 if err > 0 else -1.0
    wanted = direction * min(a_lim, math.sqrt(2.0 * j_lim * abs(err)))
    dv = j_lim * dt
    new_rate = rate + min(max(wanted - rate, -dv), dv)
    new = current + new_rate * dt
    if (new - target) * direction >= 0.0:
        return ScaleStep(target, 0.0)
    if new <= 0.0:
        return ScaleStep(0.0, 0.0)
    if new >= 1.0:
        return ScaleStep(1.0, 0.0)
    return ScaleStep(new, new_rate)


def _invalid(t, d, cfg) -> SsmOutput:
    return SsmOutput(safety_distance(0.0, cfg), 0.0, None, d, False, t, 0.0)


def controller_tick(scene: SceneGraph, joint_state: JointState, cfg: SsmConfig,
                    prev: SsmOutput | None = None) -> SsmOutput:
    """One control cycle on an immutable scene snapshot.

    Any missing or degenerate input (no human, unusable separation vector,
    non-finite data, GJK failure) yields ``valid=False`` and ``rho=0``. Only a
    timestamp skew beyond ``cfg.max_skew`` raises (:class:`SyncError`).
    """
    t = int(joint_state.timestamp)
    skew = (scene.robot_timestamp - t) * 1e-9
    if abs(skew) > cfg.max_skew:
        raise SyncError(f"scene snapshot is {abs(skew) * 1e3:.1f} ms away from the joint state")
    if prev is not None and t > prev.timestamp:
        dt = (t - prev.timestamp) * 1e-9
    else:
        dt = cfg.t_r if cfg.t_r > 0 else NOMINAL_TICK
    d = math.nan
    try:
        pair = closest_pair_query(scene)
        if pair is None:
            return _invalid(t, d, cfg)
        d = pair.distance
        if not math.isfinite(d):
            return _invalid(t, math.nan, cfg)
        v = directed_robot_velocity(pair, joint_state.q, joint_state.qd, scene.model,
                                    frames=scene.frames)
    except SyncError:
        raise
    except (SsmGuardError, ValueError, ArithmeticError):
        return _invalid(t, d, cfg)
    if v is None or not math.isfinite(v):
        return _invalid(t, d, cfg)
    s_safety = safety_distance(v, cfg)
    target = speed_scaling(d, s_safety, cfg)
    if prev is None or not prev.valid:
        rho0, rate0 = 0.0, 0.0
    else:
        rho0, rate0 = prev.rho, prev.rho_rate
    step = jerk_limited_scale(rho0, target, dt, cfg, rate0, emergency=d < s_safety)
    return SsmOutput(s_safety, step.rho, v, d, True, t, step.rate)
