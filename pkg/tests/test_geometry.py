import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import hull_distance, hull_segment_distance
from scipy.spatial.transform import Rotation

from ssmguard.errors import AlignmentError
from ssmguard.geometry import (
    ConvexShape,
    LinkCapsule,
    SceneGraph,
    capsule_distance,
    closest_pair_query,
    default_link_capsules,
    dump_link_capsules,
    gjk_distance,
    load_link_capsules,
    segment_distance,
    segment_distances,
    umeyama_align,
)
from ssmguard.kinematics import RigidTransform


def separated_pair(rng, na, nb, gap):
    a = rng.normal(size=(na, 3)) * rng.uniform(0.05, 1.0)
    b = rng.normal(size=(nb, 3)) * rng.uniform(0.05, 1.0)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    b += d * ((a @ d).max() - (b @ d).min() + gap)
    return a, b


def test_sphere_examples():
    a = ConvexShape.sphere([0, 0, 0], 1.0)
    b = ConvexShape.sphere([3, 0, 0], 1.0)
    d, pa, pb = gjk_distance(a, b)
    assert d == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(pa, [1, 0, 0]) and np.allclose(pb, [2, 0, 0])
    d, pa, pb = gjk_distance(a, ConvexShape.sphere([1.5, 0, 0], 1.0))
    assert d == 0.0 and np.array_equal(pa, pb)


def test_capsule_examples():
    a = ConvexShape.capsule([0, 0, 0], [0, 0, 1], 0.1)
    b = ConvexShape.capsule([1, 0, 0.5], [1, 1, 0.5], 0.2)
    d, pa, pb = gjk_distance(a, b)
    assert d == pytest.approx(0.7, abs=1e-9)
    assert np.allclose(pa, [0.1, 0, 0.5]) and np.allclose(pb, [0.8, 0, 0.5])


def test_point_set_vs_cube():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    d, _, pb = gjk_distance(ConvexShape.point_set(cube), ConvexShape.point_set([[2.0, 0.5, 0.5]]))
    assert d == pytest.approx(1.0, abs=1e-12)


def test_pose_is_applied():
    tf = RigidTransform.from_rotation_translation(np.eye(3), [5.0, 0, 0])
    a = ConvexShape.sphere([0, 0, 0], 0.5, pose=tf)
    d, _, _ = gjk_distance(a, ConvexShape.sphere([0, 0, 0], 0.5))
    assert d == pytest.approx(4.0)


def test_non_finite_shapes_are_rejected():
    with pytest.raises(ValueError):
        gjk_distance(ConvexShape.point_set([[np.nan, 0, 0]]), ConvexShape.sphere([0, 0, 0], 1))


@given(seed=st.integers(0, 2**32 - 1), na=st.integers(1, 12), nb=st.integers(1, 12),
       gap=st.floats(1e-3, 3.0))
def test_gjk_matches_hull_oracle(seed, na, nb, gap):
    a, b = separated_pair(np.random.default_rng(seed), na, nb, gap)
    d, pa, pb = gjk_distance(ConvexShape.point_set(a), ConvexShape.point_set(b))
    assert d == pytest.approx(hull_distance(a, b), abs=1e-7)
    assert np.linalg.norm(pa - pb) == pytest.approx(d, abs=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_gjk_symmetric_and_non_negative(seed):
    rng = np.random.default_rng(seed)
    a = ConvexShape.point_set(rng.normal(size=(6, 3)))
    b = ConvexShape.point_set(rng.normal(size=(5, 3)) + rng.normal(size=3))
    d1, _, _ = gjk_distance(a, b)
    d2, _, _ = gjk_distance(b, a)
    assert d1 >= 0 and d1 == pytest.approx(d2, abs=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_gjk_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = separated_pair(rng, 7, 7, 0.3)
    r = Rotation.random(random_state=seed % 2**31).as_matrix()
    t = rng.normal(size=3)
    d1, _, _ = gjk_distance(ConvexShape.point_set(a), ConvexShape.point_set(b))
    d2, _, _ = gjk_distance(ConvexShape.point_set(a @ r.T + t), ConvexShape.point_set(b @ r.T + t))
    assert d1 == pytest.approx(d2, abs=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_segment_distance_agrees_with_oracle(seed):
    rng = np.random.default_rng(seed)
    p0, p1, q0, q1 = rng.normal(size=(4, 3))
    d, cp, cq = segment_distance(p0, p1, q0, q1)
    assert d == pytest.approx(hull_distance(np.array([p0, p1]), np.array([q0, q1])), abs=1e-9)
    assert np.linalg.norm(cp - cq) == pytest.approx(d)


@given(seed=st.integers(0, 2**32 - 1))
def test_batched_segment_distances_match_scalar(seed):
    rng = np.random.default_rng(seed)
    p0, p1, q0, q1 = rng.normal(size=(4, 8, 3))
    p1[0], q1[1] = p0[0], q0[1]  # point cases
    p1[2], q1[2] = p0[2], q0[2]
    q0[3], q1[3] = p0[3] + [0, 0, 1], p1[3] + [0, 0, 1]  # parallel
    got = segment_distances(p0, p1, q0, q1)
    want = [segment_distance(*args)[0] for args in zip(p0, p1, q0, q1)]
    assert np.allclose(got, want, atol=1e-12)


def test_capsule_distance_matches_gjk(rng):
    for _ in range(50):
        a0, a1, b0, b1 = rng.normal(size=(4, 3)) * 2
        ra, rb = rng.uniform(0, 0.3, 2)
        g, _, _ = gjk_distance(ConvexShape.capsule(a0, a1, ra), ConvexShape.capsule(b0, b1, rb))
        assert g == pytest.approx(capsule_distance(a0, a1, ra, b0, b1, rb), abs=1e-9)


# --- scene graph -----------------------------------------------------------------

def test_default_capsules_follow_links(ur10, rng):
    caps = default_link_capsules(ur10)
    assert [c.link_index for c in caps] == [1, 2, 3, 4, 5, 6]
    scene = SceneGraph(ur10, caps)
    q = rng.uniform(-2, 2, 6)
    scene.update_robot(q, 5)
    for k, c in enumerate(caps):
        # segment spans the origins of frames i-1 and i
        assert np.allclose(scene.seg0[k], scene.frames[c.link_index - 1][:3, 3], atol=1e-12)
        assert np.allclose(scene.seg1[k], scene.frames[c.link_index][:3, 3], atol=1e-12)


def test_capsule_file_round_trip(ur10, tmp_path):
    caps = default_link_capsules(ur10, 0.05)
    dump_link_capsules(caps, tmp_path / "caps.json")
    back = load_link_capsules(tmp_path / "caps.json")
    for a, b in zip(caps, back):
        assert a.link_index == b.link_index and a.radius == b.radius
        assert np.allclose(a.p0_local, b.p0_local)


def test_closest_pair_without_human(ur10):
    scene = SceneGraph(ur10)
    assert closest_pair_query(scene) is None
    scene.set_human(np.empty((0, 3)))
    assert not scene.has_human and closest_pair_query(scene) is None


def test_closest_pair_matches_oracle(ur10, rng):
    scene = SceneGraph(ur10)
    for _ in range(20):
        scene.update_robot(rng.uniform(-np.pi, np.pi, 6))
        human = rng.normal(size=(15, 3)) * 0.2 + rng.uniform(1.5, 2.5) * np.array([1, 0, 0.3])
        scene.set_human(human)
        pair = closest_pair_query(scene)
        truth = min(max(hull_segment_distance(human, a, b) - r, 0.0)
                    for a, b, r in zip(scene.seg0, scene.seg1, scene._radii))
        assert pair.distance == pytest.approx(truth, abs=1e-7)
        assert np.linalg.norm(pair.separation) == pytest.approx(pair.distance, abs=1e-9)
        assert 1 <= pair.robot_link <= 6


def test_closest_pair_ties_pick_lowest_capsule(ur10):
    caps = [LinkCapsule(2, np.zeros(3), np.zeros(3), 0.0), LinkCapsule(3, np.zeros(3), np.zeros(3), 0.0)]
    scene = SceneGraph(ur10, caps)
    scene.set_human([[1.0, 1.0, 1.0]])
    assert closest_pair_query(scene).robot_link == 2


def test_closest_pair_non_finite(ur10):
    scene = SceneGraph(ur10)
    scene.set_human([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        closest_pair_query(scene)


# --- Umeyama ------------------------------------------------------------------------

def test_umeyama_recovers_transform(rng):
    src = rng.normal(size=(20, 3))
    r = Rotation.random(random_state=3).as_matrix()
    t = rng.normal(size=3)
    tf, rms = umeyama_align(src, src @ r.T + t)
    assert np.allclose(tf.rotation, r, atol=1e-12) and np.allclose(tf.translation, t, atol=1e-12)
    assert rms < 1e-12


def test_umeyama_identity_and_reflection_case(rng):
    src = rng.normal(size=(10, 3))
    tf, rms = umeyama_align(src, src)
    assert np.allclose(tf.matrix, np.eye(4), atol=1e-12) and rms < 1e-12
    # a mirrored target cannot be reached by a rotation; result must stay proper
    tf, rms = umeyama_align(src, src * [1, 1, -1])
    assert np.linalg.det(tf.rotation) == pytest.approx(1.0)
    assert rms > 0


def test_umeyama_degenerate_inputs(rng):
    with pytest.raises(AlignmentError):
        umeyama_align(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(AlignmentError):
        umeyama_align(line, line)
    with pytest.raises(AlignmentError):
        umeyama_align(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))


@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.0, 0.05))
def test_umeyama_residual_bounded_by_noise(seed, sigma):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(30, 3))
    r = Rotation.random(random_state=seed % 2**31).as_matrix()
    noise = rng.normal(scale=sigma, size=src.shape)
    dst = src @ r.T + 1.0 + noise
    _, rms = umeyama_align(src, dst)
    # the fitted transform is at least as good as the true one
    assert rms <= np.sqrt(np.mean(np.sum(noise ** 2, axis=1))) + 1e-12
