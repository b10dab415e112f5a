"""Serial-chain kinematics with standard Denavit-Hartenberg parameters.

Frame ``0`` is the robot base (already placed in the world by ``base_pose``);
frame ``i`` is the frame after joint ``i``. Joint ``i`` turns about the z axis
of frame ``i - 1``. A point rigidly attached to frame ``k`` is moved by joints
``1..k`` only.

Jacobians are world-frame geometric Jacobians with the linear rows on top:
``[v; w] = J @ qd``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .errors import KinematicsError

ORTHONORMAL_TOL = 1e-9
_EYE3 = np.eye(3)


def _det3(r):
    (a, b, c), (d, e, f), (g, h, i) = r.tolist()
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


@dataclass(frozen=True)
class RigidTransform:
    """Homogeneous 4x4 rigid transform."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise KinematicsError(f"rigid transform must be 4x4, got {m.shape}")
        r = m[:3, :3]
        if not np.all(np.isfinite(m)):
            raise KinematicsError("rigid transform has non-finite entries")
        if (np.max(np.abs(r.T @ r - _EYE3)) > ORTHONORMAL_TOL
                or abs(_det3(r) - 1.0) > ORTHONORMAL_TOL):
            raise KinematicsError("rotation block is not a proper orthonormal matrix")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def _trusted(cls, matrix) -> "RigidTransform":
        """Wrap a matrix that is rigid by construction, skipping validation."""
        out = object.__new__(cls)
        object.__setattr__(out, "matrix", matrix)
        return out

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "RigidTransform":
        r = self.rotation
        return RigidTransform.from_rotation_translation(r.T, -r.T @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.matrix @ other.matrix)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray
    angular: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, v6, frame="world") -> "Twist":
        v6 = np.asarray(v6, dtype=float)
        return cls(v6[:3], v6[3:], frame)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class DhJoint:
    a: float
    d: float
    alpha: float
    theta_offset: float = 0.0
    lower: float = -np.pi
    upper: float = np.pi


@dataclass(frozen=True)
class RobotModel:
    joints: tuple
    velocity_limits: np.ndarray
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "robot"

    def __post_init__(self):
        if len(self.joints) < 1:
            raise KinematicsError("robot needs at least one joint")
        for i, j in enumerate(self.joints):
            if not j.lower < j.upper:
                raise KinematicsError(f"joint {i + 1}: limits not ordered ({j.lower}, {j.upper})")
        vl = np.asarray(self.velocity_limits, dtype=float)
        if vl.shape != (len(self.joints),):
            raise KinematicsError("velocity_limits length must equal joint count")
        RigidTransform(self.base_pose)
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "velocity_limits", vl)
        object.__setattr__(self, "base_pose", np.asarray(self.base_pose, dtype=float))
        dh = np.array([[j.a, j.d, j.alpha, j.theta_offset] for j in self.joints])
        object.__setattr__(self, "_dh", dh)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def limits(self) -> np.ndarray:
        return np.array([[j.lower, j.upper] for j in self.joints])


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray
    timestamp: int = 0  # ns

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qd, dtype=float).reshape(-1)
        if q.shape != qd.shape:
            raise KinematicsError(f"q has {q.size} entries but qd has {qd.size}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    def check_limits(self, model: RobotModel) -> bool:
        """Soft limit check: warns and returns False when outside limits."""
        lim = model.limits
        ok = bool(np.all(self.q >= lim[:, 0]) and np.all(self.q <= lim[:, 1])
                  and np.all(np.abs(self.qd) <= model.velocity_limits))
        if not ok:
            warnings.warn("joint state outside position or velocity limits", stacklevel=2)
        return ok


def load_robot(path=None) -> RobotModel:
    """Load a robot parameter file; ``None`` loads the bundled UR10 table."""
    if path is None:
        text = resources.files("ssmguard").joinpath("data/ur10.json").read_text()
        src = "ur10.json"
    else:
        src = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise KinematicsError(f"{src}: cannot read robot file ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
        joints = [DhJoint(float(j["a"]), float(j["d"]), float(j["alpha"]),
                          float(j.get("theta_offset", 0.0)),
                          float(j["limits"][0]), float(j["limits"][1]))
                  for j in raw["joints"]]
        return RobotModel(tuple(joints), raw["velocity_limits"],
                          np.asarray(raw.get("base_pose", np.eye(4)), dtype=float),
                          raw.get("name", Path(src).stem))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise KinematicsError(f"{src}: malformed robot file ({exc})") from exc


def fk_matrices(model: RobotModel, q) -> np.ndarray:
    """World poses of frames ``0..n`` as an ``(n + 1, 4, 4)`` array."""
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (model.n,):
        raise KinematicsError(f"expected {model.n} joint positions, got {q.size}")
    dh = model._dh
    theta = q + dh[:, 3]
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(dh[:, 2]), np.sin(dh[:, 2])
    a, d = dh[:, 0], dh[:, 1]
    # Rz(theta) Tz(d) Tx(a) Rx(alpha)
    links = np.zeros((model.n, 4, 4))
    links[:, 0, 0] = ct
    links[:, 0, 1] = -st * ca
    links[:, 0, 2] = st * sa
    links[:, 0, 3] = a * ct
    links[:, 1, 0] = st
    links[:, 1, 1] = ct * ca
    links[:, 1, 2] = -ct * sa
    links[:, 1, 3] = a * st
    links[:, 2, 1] = sa
    links[:, 2, 2] = ca
    links[:, 2, 3] = d
    links[:, 3, 3] = 1.0
    out = np.empty((model.n + 1, 4, 4))
    out[0] = model.base_pose
    for i in range(model.n):
        out[i + 1] = out[i] @ links[i]
    return out


def forward_kinematics(model: RobotModel, q) -> list[RigidTransform]:
    """Base-to-frame transforms for frames ``0..n`` (frame ``n`` is the flange)."""
    return [RigidTransform(m) for m in fk_matrices(model, q)]


@njit(cache=True)
def _jacobian_kernel(frames, k, p):
    n = frames.shape[0] - 1
    jac = np.zeros((6, n))
    for j in range(k):
        zx, zy, zz = frames[j, 0, 2], frames[j, 1, 2], frames[j, 2, 2]
        rx = p[0] - frames[j, 0, 3]
        ry = p[1] - frames[j, 1, 3]
        rz = p[2] - frames[j, 2, 3]
        jac[0, j] = zy * rz - zz * ry
        jac[1, j] = zz * rx - zx * rz
        jac[2, j] = zx * ry - zy * rx
        jac[3, j] = zx
        jac[4, j] = zy
        jac[5, j] = zz
    return jac


def jacobian_from_frames(frames: np.ndarray, attach_link: int, attach_point) -> np.ndarray:
    """Geometric Jacobian of a point fixed to frame ``attach_link``.

    ``frames`` is the output of :func:`fk_matrices`. Column ``j`` is
    ``[z_j x (p - o_j); z_j]`` for the joints that move the point, zero after.
    """
    n = frames.shape[0] - 1
    if not 0 <= attach_link <= n:
        raise KinematicsError(f"link index {attach_link} outside 0..{n}")
    return _jacobian_kernel(frames, attach_link, np.asarray(attach_point, dtype=float))


def geometric_jacobian(model: RobotModel, q, attach_link: int, attach_point) -> np.ndarray:
    """6 x n world-frame Jacobian for ``attach_point`` carried by ``attach_link``."""
    return jacobian_from_frames(fk_matrices(model, q), attach_link, attach_point)


def reexpress_twist(t: Twist, target: RigidTransform, frame: str = "target") -> Twist:
    """Express a world twist in the axes of ``target``.

    Both vectors are rotated by the transpose of the target rotation. The
    target translation is ignored: the quantity of interest is the velocity
    of one point, whose direction does not depend on where the frame sits.
    """
    if not isinstance(target, RigidTransform):
        target = RigidTransform(target)
    r_t = target.rotation.T
    return Twist(r_t @ t.linear, r_t @ t.angular, frame)
