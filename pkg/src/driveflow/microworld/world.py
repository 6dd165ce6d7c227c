"""Core micro-world types, the unicycle integrator, and maneuver classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LANE_WIDTH = 3.5

LABELS = ("positive", "negative", "recovery")
INSTRUCTIONS = ("go_straight", "turn_left", "turn_right", "change_left", "change_right", "stop")
ARCHETYPES = (
    "lane_change",
    "lane_bias",
    "vru",
    "construction",
    "stop_sign",
    "cut_in",
    "lead_braking",
)
LATERAL_MANEUVERS = ("straight", "left_turn", "right_turn", "change_left", "change_right")
LONGITUDINAL_MANEUVERS = ("keep", "accelerate", "decelerate")

# classification thresholds: heading change marking a turn, lateral offset
# marking a lane change (half a lane), speed change marking accel/decel
TURN_HEADING_THRESHOLD = math.pi / 6
LANE_CHANGE_OFFSET = 0.5 * LANE_WIDTH
SPEED_CHANGE_THRESHOLD = 1.5


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float
    speed: float
    accel: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.heading, self.speed, self.accel)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite ego state {vals}")
        if self.speed < 0:
            raise ValueError(f"negative speed {self.speed}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass
class Trajectory:
    """Timed sequence of planar poses.

    ``waypoints`` is an (n, 3) array of (x, y, heading); consecutive
    waypoints are ``dt`` seconds apart and the first sits at time index ``t0``.
    """

    waypoints: np.ndarray
    dt: float = 0.5
    t0: int = 0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 3:
            raise ValueError(f"waypoints must be (n, 3), got {self.waypoints.shape}")
        if self.waypoints.shape[0] < 1:
            raise ValueError("trajectory needs at least one waypoint")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.waypoints)):
            raise ValueError("non-finite waypoint")

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.waypoints[:, :2]

    @property
    def headings(self) -> np.ndarray:
        return self.waypoints[:, 2]

    def speeds(self) -> np.ndarray:
        """Per-segment speeds (length n-1), from position differences."""
        deltas = np.diff(self.positions, axis=0)
        return np.hypot(deltas[:, 0], deltas[:, 1]) / self.dt

    def pose_at_index(self, k: int) -> np.ndarray:
        """Pose at global time index k, clamped to the covered range."""
        i = int(np.clip(k - self.t0, 0, len(self) - 1))
        return self.waypoints[i]

    def copy(self) -> "Trajectory":
        return Trajectory(self.waypoints.copy(), self.dt, self.t0)


@dataclass
class Obstacle:
    trajectory: Trajectory
    length: float
    width: float
    kind: str = "vehicle"  # vehicle | pedestrian | cone


@dataclass
class TrafficLight:
    stop_line: np.ndarray  # (2, 2) segment endpoints
    red_schedule: np.ndarray  # 1 = red at that time index, starting at index 0

    def __post_init__(self):
        self.stop_line = np.asarray(self.stop_line, dtype=np.float64)
        self.red_schedule = np.asarray(self.red_schedule, dtype=np.int64)

    def is_red(self, k: int) -> bool:
        i = int(np.clip(k, 0, len(self.red_schedule) - 1))
        return bool(self.red_schedule[i])


@dataclass
class Scene:
    drivable_area: list  # list of (m, 2) simple polygons
    lane_centerlines: list  # list of (m, 3) polylines: x, y, lane direction
    obstacles: list = field(default_factory=list)
    traffic_lights: list = field(default_factory=list)
    route: np.ndarray = None  # (m, 2) polyline the instruction refers to

    def __post_init__(self):
        self.drivable_area = [np.asarray(p, dtype=np.float64) for p in self.drivable_area]
        self.lane_centerlines = [np.asarray(c, dtype=np.float64) for c in self.lane_centerlines]
        if self.route is not None:
            self.route = np.asarray(self.route, dtype=np.float64)


@dataclass
class Scenario:
    id: str
    scene: Scene
    ego_history: Trajectory  # T_h + 1 poses ending at time index 0
    reference: Trajectory  # T_f + 1 poses starting at time index 0
    label: str
    instruction: str
    archetype: str
    reasoning_tags: list = field(default_factory=list)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.instruction not in INSTRUCTIONS:
            raise ValueError(f"unknown instruction {self.instruction!r}")
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        for tag in self.reasoning_tags:
            if tag not in LATERAL_MANEUVERS:
                raise ValueError(f"unknown reasoning tag {tag!r}")
        gap = np.linalg.norm(self.reference.positions[0] - self.ego_history.positions[-1])
        if gap > 0.5:
            raise ValueError(f"reference starts {gap:.2f} m from the ego pose")


@dataclass(frozen=True)
class ManeuverLabel:
    lateral: str
    longitudinal: str

    def __post_init__(self):
        if self.lateral not in LATERAL_MANEUVERS:
            raise ValueError(f"unknown lateral maneuver {self.lateral!r}")
        if self.longitudinal not in LONGITUDINAL_MANEUVERS:
            raise ValueError(f"unknown longitudinal maneuver {self.longitudinal!r}")


def rollout_kinematic(start: EgoState, controls, dt: float) -> Trajectory:
    """Forward-Euler unicycle rollout.

    ``controls`` is a sequence of (accel, yaw_rate) pairs; the returned
    trajectory has one waypoint per control, starting one step after
    ``start`` (t0 = 1). Speed is clamped at zero.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 2 or controls.shape[1] != 2:
        raise ValueError(f"controls must be (n, 2), got {controls.shape}")
    if not np.all(np.isfinite(controls)):
        raise ValueError("non-finite control input")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    x, y, psi, v = start.x, start.y, start.heading, start.speed
    out = np.empty((controls.shape[0], 3))
    for k, (a, omega) in enumerate(controls):
        x = x + v * math.cos(psi) * dt
        y = y + v * math.sin(psi) * dt
        psi = wrap_angle(psi + omega * dt)
        v = max(0.0, v + a * dt)
        out[k] = (x, y, psi)
    return Trajectory(out, dt=dt, t0=1)


def traj_from_xy(xs, ys, dt: float = 0.5, t0: int = 0, heading0: float = 0.0) -> Trajectory:
    """Build a trajectory from planar coordinates, headings from successive
    differences (the heading at waypoint k is the direction of the segment
    arriving at k; degenerate segments reuse the previous heading)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.shape[0]
    out = np.empty((n, 3))
    out[:, 0] = xs
    out[:, 1] = ys
    out[0, 2] = heading0
    for k in range(1, n):
        dx, dy = xs[k] - xs[k - 1], ys[k] - ys[k - 1]
        if math.hypot(dx, dy) < 1e-9:
            out[k, 2] = out[k - 1, 2]
        else:
            out[k, 2] = math.atan2(dy, dx)
    return Trajectory(out, dt=dt, t0=t0)


def ego_state_at_end(history: Trajectory) -> EgoState:
    """Ego state at the last waypoint of a history trajectory."""
    x, y, psi = history.waypoints[-1]
    if len(history) < 2:
        return EgoState(x, y, psi, 0.0, 0.0)
    v = history.speeds()
    accel = (v[-1] - v[-2]) / history.dt if len(v) >= 2 else 0.0
    return EgoState(x, y, psi, float(v[-1]), float(accel))


def classify_maneuver(traj: Trajectory) -> ManeuverLabel:
    """Geometric maneuver heuristics: net signed heading change for the
    lateral axis (with a lateral-offset test separating lane changes from
    straight driving) and net speed change for the longitudinal axis."""
    if len(traj) < 2:
        raise ValueError("classification needs at least 2 waypoints")
    pos = traj.positions
    if np.allclose(pos, pos[0], atol=1e-12) and np.allclose(
        traj.headings, traj.headings[0], atol=1e-12
    ):
        return ManeuverLabel("straight", "keep")

    dpsi = wrap_angle(float(traj.headings[-1] - traj.headings[0]))
    if dpsi >= TURN_HEADING_THRESHOLD:
        lateral = "left_turn"
    elif dpsi <= -TURN_HEADING_THRESHOLD:
        lateral = "right_turn"
    else:
        # lateral offset of the endpoint in the frame of the initial heading
        psi0 = float(traj.headings[0])
        rel = pos[-1] - pos[0]
        lateral_offset = -math.sin(psi0) * rel[0] + math.cos(psi0) * rel[1]
        if lateral_offset > LANE_CHANGE_OFFSET:
            lateral = "change_left"
        elif lateral_offset < -LANE_CHANGE_OFFSET:
            lateral = "change_right"
        else:
            lateral = "straight"

    speeds = traj.speeds()
    dv = float(speeds[-1] - speeds[0]) if speeds.size >= 2 else 0.0
    if dv > SPEED_CHANGE_THRESHOLD:
        longitudinal = "accelerate"
    elif dv < -SPEED_CHANGE_THRESHOLD:
        longitudinal = "decelerate"
    else:
        longitudinal = "keep"
    return ManeuverLabel(lateral, longitudinal)
