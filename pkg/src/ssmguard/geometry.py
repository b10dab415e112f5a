"""Minimum-distance queries between the robot and the human, plus rigid calibration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _gjk
from .errors import AlignmentError, GjkDegeneracyError
from .kinematics import RigidTransform, RobotModel, fk_matrices

GJK_TOLERANCE = 1e-9
GJK_MAX_ITERATIONS = 128
DEFAULT_LINK_RADIUS = 0.06

SHAPE_KINDS = ("sphere", "capsule", "convex_point_set")


@dataclass(frozen=True)
class ConvexShape:
    """Sphere, capsule or convex hull of points, stored as a core point set plus a radius.

    ``core`` is given in the shape's local frame and placed in the world by
    ``pose``: one centre for a sphere, two segment endpoints for a capsule,
    the raw points for a hull.
    """

    kind: str
    core: np.ndarray
    radius: float = 0.0
    pose: RigidTransform | None = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        core = np.asarray(self.core, dtype=float).reshape(-1, 3)
        expected = {"sphere": 1, "capsule": 2}.get(self.kind)
        if expected is not None and len(core) != expected:
            raise ValueError(f"{self.kind} needs {expected} core point(s), got {len(core)}")
        if len(core) == 0:
            raise ValueError("convex_point_set must not be empty")
        if not self.radius >= 0:
            raise ValueError("radius must be non-negative")
        object.__setattr__(self, "core", core)

    @classmethod
    def sphere(cls, center, radius, pose=None):
        return cls("sphere", [center], radius, pose)

    @classmethod
    def capsule(cls, p0, p1, radius, pose=None):
        return cls("capsule", [p0, p1], radius, pose)

    @classmethod
    def point_set(cls, points, pose=None):
        return cls("convex_point_set", points, 0.0, pose)

    def world_core(self) -> np.ndarray:
        if self.pose is None:
            return self.core
        return self.pose.apply(self.core)

    def support_value(self, direction) -> float:
        """Support function ``max over the shape of x . direction``."""
        d = np.asarray(direction, dtype=float)
        return float(np.max(self.world_core() @ d) + self.radius * np.linalg.norm(d))


@dataclass(frozen=True)
class ClosestPair:
    p_human: np.ndarray
    p_robot: np.ndarray
    distance: float
    robot_link: int

    @property
    def separation(self) -> np.ndarray:
        """The minimum distance vector, pointing from robot to human."""
        return self.p_human - self.p_robot


def gjk_distance(a: ConvexShape, b: ConvexShape):
    """Minimum Euclidean distance between two convex shapes.

    Returns
    -------
    distance : float
        Zero when the shapes touch or overlap.
    point_a, point_b : ndarray, shape (3,)
        Witness points on ``a`` and ``b``; identical on overlap.

    Raises
    ------
    GjkDegeneracyError
        If the iteration cap is hit; ``best_distance`` carries the estimate.
    """
    ca = np.ascontiguousarray(a.world_core())
    cb = np.ascontiguousarray(b.world_core())
    pa, pb = np.empty(3), np.empty(3)
    status, core_dist, _ = _gjk.gjk_points(ca, cb, GJK_MAX_ITERATIONS, GJK_TOLERANCE,
                                           _gjk._MASKS, pa, pb)
    if status == _gjk.NON_FINITE:
        raise ValueError("shape coordinates must be finite")
    qa, qb = np.empty(3), np.empty(3)
    dist = _gjk.inflate(core_dist, pa, pb, a.radius, b.radius, qa, qb)
    if status == _gjk.ITERATION_CAP:
        raise GjkDegeneracyError(
            f"GJK did not converge in {GJK_MAX_ITERATIONS} iterations", dist)
    return dist, qa, qb


@dataclass(frozen=True)
class LinkCapsule:
    link_index: int
    p0_local: np.ndarray
    p1_local: np.ndarray
    radius: float = DEFAULT_LINK_RADIUS


def default_link_capsules(model: RobotModel, radius: float = DEFAULT_LINK_RADIUS) -> list[LinkCapsule]:
    """One capsule per link, spanning the origins of frames ``i - 1`` and ``i``.

    Both origins are fixed in frame ``i`` (the DH offset of joint ``i`` rotates
    with it), so the capsule is attached to frame ``i``.
    """
    frames = fk_matrices(model, np.zeros(model.n))
    caps = []
    for i in range(1, model.n + 1):
        inv = np.linalg.inv(frames[i])
        p0 = inv[:3, :3] @ frames[i - 1][:3, 3] + inv[:3, 3]
        caps.append(LinkCapsule(i, p0, np.zeros(3), radius))
    return caps


def load_link_capsules(path) -> list[LinkCapsule]:
    raw = json.loads(Path(path).read_text())
    return [LinkCapsule(int(c["link_index"]), np.asarray(c["p0_local"], float),
                        np.asarray(c["p1_local"], float), float(c["radius"])) for c in raw]


def dump_link_capsules(capsules, path):
    Path(path).write_text(json.dumps([
        {"link_index": c.link_index, "p0_local": list(map(float, c.p0_local)),
         "p1_local": list(map(float, c.p1_local)), "radius": c.radius} for c in capsules], indent=2))


class SceneGraph:
    """Robot link capsules posed by FK, and the human as a convex point set.

    The robot side is refreshed with :meth:`update_robot`, the human side with
    :meth:`set_human`. Queries read the latest snapshot of both.
    """

    def __init__(self, model: RobotModel, capsules=None, q=None, robot_timestamp=0):
        self.model = model
        self.capsules = list(capsules) if capsules is not None else default_link_capsules(model)
        self._link_ids = np.array([c.link_index for c in self.capsules], dtype=np.int64)
        self._p0 = np.array([c.p0_local for c in self.capsules], dtype=float)
        self._p1 = np.array([c.p1_local for c in self.capsules], dtype=float)
        self._radii = np.array([c.radius for c in self.capsules], dtype=float)
        self.human_points: np.ndarray | None = None
        self.human_timestamp = 0
        self.q = None
        self.update_robot(np.zeros(model.n) if q is None else q, robot_timestamp)

    def update_robot(self, q, timestamp=0):
        q = np.asarray(q, dtype=float)
        if self.q is None or not np.array_equal(q, self.q):
            self.frames = fk_matrices(self.model, q)
            rot = self.frames[self._link_ids, :3, :3]
            org = self.frames[self._link_ids, :3, 3]
            self.seg0 = np.einsum("kij,kj->ki", rot, self._p0) + org
            self.seg1 = np.einsum("kij,kj->ki", rot, self._p1) + org
            self.q = q.copy()
        self.robot_timestamp = timestamp

    def set_human(self, points, timestamp=0):
        """Replace the human point set; ``None`` or an empty set means no human."""
        if points is not None:
            points = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
            if len(points) == 0:
                points = None
        self.human_points = points
        self.human_timestamp = timestamp

    @property
    def has_human(self) -> bool:
        return self.human_points is not None

    def link_shapes(self) -> list[ConvexShape]:
        return [ConvexShape.capsule(a, b, r) for a, b, r in zip(self.seg0, self.seg1, self._radii)]

    def human_shape(self) -> ConvexShape | None:
        return None if self.human_points is None else ConvexShape.point_set(self.human_points)

    def link_index(self, row: int) -> int:
        return int(self._link_ids[row])


def closest_pair_query(scene: SceneGraph) -> ClosestPair | None:
    """Closest human/robot point pair over all links; ``None`` when no human is present.

    Ties go to the lowest capsule index.
    """
    if scene.human_points is None:
        return None
    out = np.empty(7)
    status, row = _gjk.scene_closest(scene.seg0, scene.seg1, scene._radii, scene.human_points,
                                     GJK_MAX_ITERATIONS, GJK_TOLERANCE, _gjk._MASKS, out)
    if status == _gjk.NON_FINITE:
        raise ValueError("scene contains non-finite coordinates")
    if status == _gjk.ITERATION_CAP:
        raise GjkDegeneracyError(
            f"GJK did not converge in {GJK_MAX_ITERATIONS} iterations", float(out[0]))
    return ClosestPair(out[1:4].copy(), out[4:7].copy(), float(out[0]), scene.link_index(row))


def segment_distance(p0, p1, q0, q1):
    """Closest points between segments ``p0p1`` and ``q0q1`` (clamped parametric solve).

    Returns ``(distance, point_on_p, point_on_q)``.
    """
    p0, p1, q0, q1 = (np.asarray(x, dtype=float) for x in (p0, p1, q0, q1))
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-300
    if a <= eps and e <= eps:
        s = t = 0.0
    elif a <= eps:
        s, t = 0.0, min(max(f / e, 0.0), 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            s, t = min(max(-c / a, 0.0), 1.0), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 0 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                s, t = min(max(-c / a, 0.0), 1.0), 0.0
            elif t > 1.0:
                s, t = min(max((b - c) / a, 0.0), 1.0), 1.0
    cp, cq = p0 + s * d1, q0 + t * d2
    return float(np.linalg.norm(cp - cq)), cp, cq


def segment_distances(p0, p1, q0, q1) -> np.ndarray:
    """Row-wise :func:`segment_distance` distances for ``(n, 3)`` endpoint arrays."""
    arrs = [np.asarray(x, dtype=float).reshape(-1, 3) for x in (p0, p1, q0, q1)]
    if len({a.shape for a in arrs}) > 1:
        arrs = np.broadcast_arrays(*arrs)
    p0, p1, q0, q1 = (np.ascontiguousarray(x) for x in arrs)
    out = np.empty(len(p0))
    _gjk.segment_distances(p0, p1, q0, q1, out)
    return out


def capsule_distance(a0, a1, ra, b0, b1, rb) -> float:
    """Closed-form distance between two capsules (zero on overlap)."""
    d, _, _ = segment_distance(a0, a1, b0, b1)
    return max(d - ra - rb, 0.0)


def umeyama_align(src, dst):
    """Least-squares rigid transform mapping ``src`` points onto ``dst``.

    Closed-form SVD solution without scale; a reflection in the SVD is
    corrected so the returned rotation is always proper.

    Returns
    -------
    transform : RigidTransform
    rms : float
        Root-mean-square residual of ``transform.apply(src) - dst``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise AlignmentError(f"point lists must both be (N, 3); got {src.shape} and {dst.shape}")
    if len(src) < 3:
        raise AlignmentError(f"need at least 3 correspondences, got {len(src)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    sc, dc = src - mu_s, dst - mu_d
    sv = np.linalg.svd(sc, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-12 * sv[0]:
        raise AlignmentError("source points are collinear or coincident")
    cov = dc.T @ sc / len(src)
    u, s, vt = np.linalg.svd(cov)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise AlignmentError("cross-covariance is rank deficient")
    fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        fix[2, 2] = -1.0
    rot = u @ fix @ vt
    t = mu_d - rot @ mu_s
    tf = RigidTransform.from_rotation_translation(rot, t)
    rms = math.sqrt(float(np.mean(np.sum((tf.apply(src) - dst) ** 2, axis=1))))
    return tf, rms

