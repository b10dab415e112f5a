"""Lidar-driven speed and separation monitoring for collaborative robots."""

from .errors import SsmGuardError
from .geometry import (
    ClosestPair,
    ConvexShape,
    SceneGraph,
    closest_pair_query,
    gjk_distance,
)
from .kinematics import JointState, RigidTransform, RobotModel, load_robot
from .ssm import SsmConfig, SsmOutput, controller_tick, safety_distance, speed_scaling

__version__ = "0.1.0"

__all__ = [
    "ClosestPair", "ConvexShape", "JointState", "RigidTransform", "RobotModel", "SceneGraph",
    "SsmConfig", "SsmGuardError", "SsmOutput", "closest_pair_query", "controller_tick",
    "gjk_distance", "load_robot", "safety_distance", "speed_scaling",
]
