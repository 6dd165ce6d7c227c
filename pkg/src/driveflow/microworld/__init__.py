"""Deterministic 2-D driving micro-world: geometry, kinematics, scenarios."""

from driveflow.microworld.world import (
    ARCHETYPES,
    INSTRUCTIONS,
    LABELS,
    LANE_WIDTH,
    LATERAL_MANEUVERS,
    LONGITUDINAL_MANEUVERS,
    EgoState,
    ManeuverLabel,
    Obstacle,
    Scenario,
    Scene,
    TrafficLight,
    Trajectory,
    classify_maneuver,
    ego_state_at_end,
    rollout_kinematic,
    traj_from_xy,
    wrap_angle,
)
from driveflow.microworld.scenarios import generate_scenario

__all__ = [
    "ARCHETYPES",
    "INSTRUCTIONS",
    "LABELS",
    "LANE_WIDTH",
    "LATERAL_MANEUVERS",
    "LONGITUDINAL_MANEUVERS",
    "EgoState",
    "ManeuverLabel",
    "Obstacle",
    "Scenario",
    "Scene",
    "TrafficLight",
    "Trajectory",
    "classify_maneuver",
    "ego_state_at_end",
    "generate_scenario",
    "rollout_kinematic",
    "traj_from_xy",
    "wrap_angle",
]
