import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import trapezoid_stop_time
from scipy.spatial.transform import Rotation

from ssmguard.errors import ConfigError, SyncError
from ssmguard.geometry import ClosestPair, SceneGraph, closest_pair_query
from ssmguard.kinematics import (
    DhJoint,
    JointState,
    RobotModel,
    fk_matrices,
    geometric_jacobian,
    load_robot,
)
from ssmguard.ssm import (
    SsmConfig,
    controller_tick,
    directed_frame,
    directed_robot_velocity,
    jerk_limited_scale,
    safety_distance,
    speed_scaling,
)

CFG = SsmConfig()
ARM = RobotModel((DhJoint(a=1.0, d=0.0, alpha=0.0),), np.array([2.0]))


def arm_pair(human):
    """Closest pair with the robot point at the tip of the 1-DOF arm (q = 0)."""
    return ClosestPair(np.asarray(human, float), np.array([1.0, 0.0, 0.0]), 1.0, 1)


# --- safety distance and scaling -----------------------------------------------------

def test_safety_distance_examples():
    assert safety_distance(0.5, CFG) == pytest.approx(0.6398, abs=1e-12)
    zero = SsmConfig(V_human=0, t_r=0, t_s=0, C=0, Z_s=0, Z_r=0)
    assert safety_distance(0.0, zero) == 0.0
    assert safety_distance(0.0, CFG) == pytest.approx(1.6 * 0.308 + 0.143)


def test_safety_distance_alternative_robot_term():
    cfg = SsmConfig(robot_term_includes_stop_time=True)
    assert safety_distance(0.5, cfg) - safety_distance(0.0, cfg) == pytest.approx(0.5 * 0.308)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_safety_distance_linear_in_v_robot(a, b):
    assert safety_distance(a, CFG) - safety_distance(b, CFG) == pytest.approx((a - b) * CFG.t_r, abs=1e-12)


@given(v=st.floats(-5, 5))
def test_safety_distance_floor(v):
    assert safety_distance(v, CFG) >= CFG.C + CFG.Z_s + CFG.Z_r - abs(v) * CFG.t_r - 1e-12


def test_speed_scaling_examples():
    assert speed_scaling(0.5, 0.64, CFG) == 0.0
    assert speed_scaling(1.5, 0.64, CFG) == pytest.approx(0.86 / 3.0)
    assert speed_scaling(0.64 + 3.0, 0.64, CFG) == 1.0
    assert speed_scaling(10.0, 0.64, CFG) == 1.0
    assert speed_scaling(math.nan, 0.64, CFG) == 0.0


@given(d1=st.floats(0, 10), d2=st.floats(0, 10), s=st.floats(0, 3))
def test_speed_scaling_monotone(d1, d2, s):
    lo, hi = sorted((d1, d2))
    assert 0.0 <= speed_scaling(lo, s, CFG) <= speed_scaling(hi, s, CFG) <= 1.0
    assert speed_scaling(d1, lo_s := min(s, 1.0), CFG) >= speed_scaling(d1, lo_s + 0.5, CFG)


def test_config_validation():
    with pytest.raises(ConfigError):
        SsmConfig(t_r=-1.0)
    with pytest.raises(ConfigError):
        SsmConfig(W_max=0.0)
    with pytest.raises(ConfigError):
        SsmConfig.from_dict({"V_humans": 1.0})
    with pytest.raises(ConfigError):
        CFG.check_stop_time(0.5)
    CFG.check_stop_time(0.2)
    assert SsmConfig.from_dict(CFG.to_dict()) == CFG


# --- directed velocity ---------------------------------------------------------------

def test_directed_frame_axes():
    tf = directed_frame([1.0, 2.0, 0.0], [1.0, 0.0, 0.0])
    r = tf.rotation
    assert np.allclose(r[:, 2], [0, 1, 0])
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12) and np.linalg.det(r) == pytest.approx(1.0)
    assert np.allclose(tf.translation, [1, 0, 0])


def test_directed_frame_vertical_fallback():
    tf = directed_frame([0.0, 0.0, 3.0], [0.0, 0.0, 1.0])
    r = tf.rotation
    assert np.allclose(r[:, 2], [0, 0, 1])
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_directed_frame_invalid():
    assert directed_frame([0, 0, 0], [0, 0, 0]) is None
    assert directed_frame([0, 0, 5e-7], [0, 0, 0]) is None
    assert directed_frame([np.nan, 0, 0], [0, 0, 0]) is None


@pytest.mark.parametrize("human, expected", [
    ([1.0, 2.0, 0.0], 0.5),    # tip velocity (0, 0.5, 0) points at the human
    ([1.0, -2.0, 0.0], -0.5),  # and away from this one
    ([3.0, 0.0, 0.0], 0.0),    # perpendicular
    ([1.0, 0.0, 2.0], 0.0),    # perpendicular, vertical separation
])
def test_directed_velocity_one_dof(human, expected):
    v = directed_robot_velocity(arm_pair(human), [0.0], [0.5], ARM)
    assert v == pytest.approx(expected, abs=1e-9)


def test_directed_velocity_stationary_and_invalid(ur10):
    assert directed_robot_velocity(arm_pair([1, 2, 0]), [0.0], [0.0], ARM) == 0.0
    assert directed_robot_velocity(arm_pair([1, 0, 0]), [0.0], [0.5], ARM) is None
    assert directed_robot_velocity(arm_pair([1, 2, 0]), [0.0], [np.nan], ARM) is None
    with pytest.raises(SyncError):
        directed_robot_velocity(arm_pair([1, 2, 0]), [0.0], [0.5], ARM, skew=0.021)


@given(seed=st.integers(0, 2**32 - 1))
def test_directed_velocity_bounded_by_point_speed(seed):
    rng = np.random.default_rng(seed)
    model = load_robot()
    q, qd = rng.uniform(-np.pi, np.pi, 6), rng.normal(size=6)
    link = int(rng.integers(1, 7))
    frames = fk_matrices(model, q)
    p_robot = frames[link, :3, 3] + rng.normal(scale=0.05, size=3)
    pair = ClosestPair(p_robot + rng.normal(size=3), p_robot, 1.0, link)
    v = directed_robot_velocity(pair, q, qd, model)
    lin = (geometric_jacobian(model, q, link, p_robot) @ qd)[:3]
    assert abs(v) <= np.linalg.norm(lin) + 1e-12
    s = pair.p_human - pair.p_robot
    assert v == pytest.approx(lin @ s / np.linalg.norm(s), abs=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_directed_velocity_world_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    base = load_robot()
    rot = Rotation.random(random_state=seed % 2**31).as_matrix()
    shift = rng.normal(size=3)
    pose = np.eye(4)
    pose[:3, :3], pose[:3, 3] = rot, shift
    moved = RobotModel(base.joints, base.velocity_limits, pose)
    q, qd = rng.uniform(-np.pi, np.pi, 6), rng.normal(size=6)
    link = int(rng.integers(1, 7))
    p_r = fk_matrices(base, q)[link, :3, 3]
    p_h = p_r + rng.normal(size=3)
    v1 = directed_robot_velocity(ClosestPair(p_h, p_r, 1.0, link), q, qd, base)
    v2 = directed_robot_velocity(ClosestPair(rot @ p_h + shift, rot @ p_r + shift, 1.0, link),
                                 q, qd, moved)
    assert v1 == pytest.approx(v2, abs=1e-9)


# --- jerk-limited scaling ---------------------------------------------------------------

def run_profile(current, target, cfg, dt=0.008, steps=2000, emergency=False):
    rho, rate, out = current, 0.0, [(current, 0.0)]
    for _ in range(steps):
        rho, rate = jerk_limited_scale(rho, target, dt, cfg, rate, emergency)
        out.append((rho, rate))
        if rho == target and rate == 0.0:
            break
    return np.array(out)


def test_jerk_limited_unchanged_at_target():
    assert jerk_limited_scale(0.4, 0.4, 0.008, CFG) == (0.4, 0.0)


def test_jerk_limited_descent_matches_trapezoid():
    prof = run_profile(1.0, 0.0, CFG)
    rho, rate = prof[:, 0], prof[:, 1]
    assert np.all(np.diff(rho) <= 0) and np.all(rho >= 0)
    assert np.all(-np.diff(rho) <= CFG.a_max * 0.008 + 1e-12)
    assert np.all(np.abs(np.diff(rate[:-1])) <= CFG.j_max * 0.008 + 1e-12)
    t = (len(prof) - 1) * 0.008
    assert t == pytest.approx(trapezoid_stop_time(1.0, CFG.a_max, CFG.j_max), abs=0.05)


@given(cur=st.floats(0, 1), tgt=st.floats(0, 1), dt=st.floats(1e-4, 0.05))
def test_jerk_limited_never_overshoots(cur, tgt, dt):
    prof = run_profile(cur, tgt, CFG, dt=dt, steps=500)
    rho = prof[:, 0]
    assert np.all((rho >= min(cur, tgt) - 1e-12) & (rho <= max(cur, tgt) + 1e-12))
    assert np.all(np.diff(rho) * np.sign(tgt - cur) >= -1e-15)


def test_emergency_stop_fits_inside_stop_time():
    for cfg in (CFG, SsmConfig(a_max=0.5, j_max=1.0), SsmConfig(t_s=0.1)):
        prof = run_profile(1.0, 0.0, cfg, emergency=True)
        assert prof[-1, 0] == 0.0
        assert (len(prof) - 1) * 0.008 <= cfg.t_s + 1e-9


# --- controller tick ---------------------------------------------------------------

def tick_scene(model, human, q=None, t=0):
    scene = SceneGraph(model, q=q, robot_timestamp=t)
    scene.set_human(human, t)
    return scene


def test_tick_without_human_is_fail_safe(ur10):
    out = controller_tick(tick_scene(ur10, None), JointState(np.zeros(6), np.zeros(6)), CFG)
    assert not out.valid and out.rho == 0.0 and out.V_robot is None


def test_tick_ramps_toward_one_when_far(ur10):
    cfg = SsmConfig(W_max=1.0)
    scene = tick_scene(ur10, np.array([[5.0, 0, 1.0], [5.1, 0.1, 1.2], [5.0, 0.2, 0.5]]))
    prev = None
    for k in range(200):
        scene.update_robot(np.zeros(6), k * 8_000_000)
        prev = controller_tick(scene, JointState(np.zeros(6), np.zeros(6), k * 8_000_000), cfg, prev)
    assert prev.valid and prev.rho == 1.0


def test_tick_decays_inside_safety_distance(ur10):
    scene = tick_scene(ur10, np.array([[5.0, 0, 1.0], [5.1, 0.1, 1.2], [5.0, 0.2, 0.5]]))
    prev = None
    for k in range(200):
        t = k * 8_000_000
        scene.update_robot(np.zeros(6), t)
        prev = controller_tick(scene, JointState(np.zeros(6), np.zeros(6), t), CFG, prev)
    assert prev.rho > 0.5
    pair = closest_pair_query(scene)
    scene.set_human(pair.p_robot + [[0.2, 0, 0], [0.25, 0.05, 0], [0.2, 0.0, 0.1]])
    t0 = 200 * 8_000_000
    for k in range(100):
        t = t0 + k * 8_000_000
        scene.update_robot(np.zeros(6), t)
        prev = controller_tick(scene, JointState(np.zeros(6), np.zeros(6), t), CFG, prev)
        assert prev.min_distance < prev.S_safety
        if (k + 1) * 0.008 > CFG.t_s:
            assert prev.rho == 0.0


def test_tick_sync_error(ur10):
    scene = tick_scene(ur10, np.array([[2.0, 0, 0]]), t=0)
    with pytest.raises(SyncError):
        controller_tick(scene, JointState(np.zeros(6), np.zeros(6), 30_000_000), CFG)


def test_tick_degenerate_inputs(ur10):
    js = JointState(np.zeros(6), np.zeros(6))
    scene = tick_scene(ur10, np.array([[np.nan, 0, 0]]))
    out = controller_tick(scene, js, CFG)
    assert not out.valid and out.rho == 0.0
    scene = SceneGraph(ur10)
    # human point exactly on a link axis, inside the capsule: zero-length S
    scene.set_human([scene.seg1[0]])
    out = controller_tick(scene, js, CFG)
    assert not out.valid and out.rho == 0.0
    bad_qd = JointState(np.zeros(6), np.full(6, np.inf))
    out = controller_tick(tick_scene(ur10, np.array([[2.0, 0, 0]])), bad_qd, CFG)
    assert not out.valid and out.rho == 0.0


def test_tick_with_zero_processing_time_and_no_history(ur10):
    # no previous tick and t_r = 0 leaves no elapsed time; a nominal step is used
    cfg = SsmConfig(t_r=0.0)
    scene = tick_scene(ur10, np.array([[3.0, 0, 1.0]]))
    out = controller_tick(scene, JointState(np.zeros(6), np.zeros(6)), cfg)
    assert out.valid and 0.0 < out.rho <= 1.0
    again = controller_tick(scene, JointState(np.zeros(6), np.zeros(6)), cfg, out)
    assert again.rho >= out.rho
