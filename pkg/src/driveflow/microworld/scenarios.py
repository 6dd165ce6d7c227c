"""Scenario archetype generators.

Every archetype lives on a straight two-lane road along +x. The scene
(geometry, other agents, signal schedules) is a pure function of
(seed, archetype) so positive/negative/recovery variants share it; the
label selects the reference trajectory and the entry state. Negative and
recovery variants enter the scene "hot" (closer and/or faster, the mistake
already in progress), so a policy that extrapolates the approach is
genuinely tempted toward the flawed behavior.
"""

from __future__ import annotations

import math

import numpy as np

from driveflow.microworld.world import (
    ARCHETYPES,
    LABELS,
    LANE_WIDTH,
    Obstacle,
    Scenario,
    Scene,
    TrafficLight,
    Trajectory,
    classify_maneuver,
    traj_from_xy,
)

T_H = 4
T_F = 10
DT = 0.5

X_MIN, X_MAX = -30.0, 90.0
SHOULDER = 1.5

VEHICLE_SIZE = (4.6, 1.9)
PED_SIZE = (0.5, 0.5)
CONE_SIZE = (0.5, 0.5)


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return 3.0 * u**2 - 2.0 * u**3


def _lane_shift(x, x0, x1, y_from, y_to):
    return y_from + (y_to - y_from) * _smoothstep((x - x0) / (x1 - x0))


def _segment_speeds(v0: float, accels) -> np.ndarray:
    """Per-segment speeds from a piecewise-constant accel profile (clamped at 0)."""
    v = [float(v0)]
    for a in accels[:-1]:
        v.append(max(0.0, v[-1] + a * DT))
    return np.array(v)


def _forward_positions(v0: float, accels, x0: float = 0.0) -> np.ndarray:
    """Cumulative forward position at each of the T_f+1 poses."""
    speeds = _segment_speeds(v0, accels)
    return x0 + np.concatenate([[0.0], np.cumsum(speeds * DT)])


def _history(v0: float, x0: float = 0.0, y0: float = 0.0) -> Trajectory:
    xs = x0 - v0 * DT * np.arange(T_H, -1, -1)
    ys = np.full(T_H + 1, y0)
    return traj_from_xy(xs, ys, dt=DT, t0=-T_H)


def _centerline(y: float, direction: float) -> np.ndarray:
    xs = np.arange(X_MIN, X_MAX + 1e-9, 5.0)
    out = np.empty((xs.size, 3))
    out[:, 0] = xs
    out[:, 1] = y
    out[:, 2] = direction
    return out


def _base_scene(lane_ys, lane_dirs, route_y_change=None):
    y_lo = min(lane_ys) - LANE_WIDTH / 2 - SHOULDER
    y_hi = max(lane_ys) + LANE_WIDTH / 2 + SHOULDER
    drivable = [
        np.array([[X_MIN, y_lo], [X_MAX, y_lo], [X_MAX, y_hi], [X_MIN, y_hi]])
    ]
    lanes = [_centerline(y, d) for y, d in zip(lane_ys, lane_dirs)]
    if route_y_change is None:
        route = np.array([[-10.0, 0.0], [X_MAX - 5.0, 0.0]])
    else:
        x0, x1, y_to = route_y_change
        route = np.array(
            [[-10.0, 0.0], [x0, 0.0], [x1, y_to], [X_MAX - 5.0, y_to]]
        )
    return Scene(drivable_area=drivable, lane_centerlines=lanes, route=route)


def _const_speed_obstacle(x0, y0, heading, speed, length, width, kind="vehicle"):
    ks = np.arange(T_F + 1)
    xs = x0 + speed * math.cos(heading) * ks * DT
    ys = y0 + speed * math.sin(heading) * ks * DT
    wp = np.stack([xs, ys, np.full(ks.shape, float(heading))], axis=1)
    return Obstacle(Trajectory(wp, dt=DT, t0=0), length, width, kind)


def _static_obstacle(x, y, length, width, kind):
    wp = np.tile([x, y, 0.0], (T_F + 1, 1))
    return Obstacle(Trajectory(wp, dt=DT, t0=0), length, width, kind)


def _path_obstacle(xs, ys, heading0, length, width, kind="vehicle"):
    traj = traj_from_xy(xs, ys, dt=DT, t0=0, heading0=heading0)
    return Obstacle(traj, length, width, kind)


def _brake_to_stop_at(v0: float, dist: float, start_k: int, decel: float):
    """Accel profile: cruise until start_k, then brake at `decel` until stopped."""
    accels = np.zeros(T_F)
    v = v0
    for k in range(start_k, T_F):
        accels[k] = -decel if v > 0 else 0.0
        v = max(0.0, v - decel * DT)
    return accels


# ---------------------------------------------------------------------------
# archetype builders
#
# each returns (scene, instruction, entry, make) where entry(label) gives the
# (x0, speed) the ego enters with and make(label) builds the reference from
# that entry state
# ---------------------------------------------------------------------------


def _build_lane_change(rng):
    v0 = rng.uniform(7.0, 9.0)
    x_lead = rng.uniform(22.0, 26.0)
    v_lead = v0 * rng.uniform(0.45, 0.6)
    scene = _base_scene(
        [0.0, LANE_WIDTH], [0.0, 0.0], route_y_change=(10.0, 30.0, LANE_WIDTH)
    )
    scene.obstacles = [
        _const_speed_obstacle(x_lead, 0.0, 0.0, v_lead, *VEHICLE_SIZE)
    ]
    x_shift0 = rng.uniform(6.0, 9.0)

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 4.0, v0 * 1.05

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            xs = _forward_positions(v, np.zeros(T_F), x0)
            ys = _lane_shift(xs, x_shift0, x_shift0 + 20.0, 0.0, LANE_WIDTH)
        elif label == "negative":
            # hesitates: drifts out, ducks back, brakes behind the slow lead
            accels = np.array([0, 0, -1, -2, -2, -1.5, -1, 0, 0, 0], dtype=float)
            xs = _forward_positions(v, accels, x0)
            bump = 1.2 * _smoothstep((xs - x0 - 2.0) / 8.0) * (
                1.0 - _smoothstep((xs - x0 - 10.0) / 8.0)
            )
            ys = bump
        else:  # recovery: overshoot past the target lane, settle back
            xs = _forward_positions(v, np.zeros(T_F), x0)
            over = _lane_shift(xs, x_shift0, x_shift0 + 14.0, 0.0, LANE_WIDTH + 1.0)
            settle = _lane_shift(xs, x_shift0 + 14.0, x_shift0 + 24.0, 0.0, -1.0)
            ys = over + settle
        return traj_from_xy(xs, ys, dt=DT, t0=0)

    return scene, "change_left", entry, make


def _build_lane_bias(rng):
    v0 = rng.uniform(7.0, 9.0)
    v_onc = rng.uniform(6.0, 8.0)
    x_onc = rng.uniform(55.0, 65.0)
    encroach = rng.uniform(1.8, 2.2)
    scene = _base_scene([0.0, LANE_WIDTH], [0.0, math.pi])
    ks = np.arange(T_F + 1)
    xs_o = x_onc - v_onc * ks * DT
    ys_o = LANE_WIDTH - encroach * _smoothstep((x_onc - xs_o) / 12.0)
    scene.obstacles = [_path_obstacle(xs_o, ys_o, math.pi, *VEHICLE_SIZE)]
    x_meet = x_onc * v0 / (v0 + v_onc)

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 6.0, v0

    def make(label):
        x0, v = entry(label)
        xs = _forward_positions(v, np.zeros(T_F), x0)
        if label == "positive":
            dip = -0.9 * _smoothstep((xs - (x_meet - 18.0)) / 10.0)
            back = 0.9 * _smoothstep((xs - (x_meet + 4.0)) / 10.0)
            ys = dip + back
        elif label == "negative":
            ys = np.zeros_like(xs)  # holds the lane center into the encroachment
        else:  # recovery: late, sharper swerve
            dip = -1.2 * _smoothstep((xs - (x_meet - 8.0)) / 5.0)
            back = 1.2 * _smoothstep((xs - (x_meet + 5.0)) / 8.0)
            ys = dip + back
        return traj_from_xy(xs, ys, dt=DT, t0=0)

    return scene, "go_straight", entry, make


def _build_vru(rng):
    v0 = rng.uniform(6.0, 8.0)
    x_ped = rng.uniform(22.0, 26.0)
    v_ped = rng.uniform(1.0, 1.4)
    y_ped0 = -4.0 - rng.uniform(0.0, 0.5)
    scene = _base_scene([0.0, LANE_WIDTH], [0.0, 0.0])
    scene.obstacles = [
        _const_speed_obstacle(x_ped, y_ped0, math.pi / 2, v_ped, *PED_SIZE, kind="pedestrian")
    ]

    def entry(label):
        return 0.0, v0  # timing against the crossing pins the entry

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            # comfortable ramped stop well short of the crossing
            accels = np.array([-1.5, -3, -3, -3, -3, -3, 0, 0, 0, 0], dtype=float)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_ped - 6.0)
        elif label == "negative":
            xs = _forward_positions(v, np.zeros(T_F), x0)  # drives into the crossing
        else:  # recovery: harsh emergency brake stopping short of the crossing
            brake_dist = v**2 / (2 * 3.0)
            start_k = max(1, int((x_ped - x0 - 8.0 - brake_dist) / (v * DT)))
            accels = _brake_to_stop_at(v, x_ped - 8.0, start_k, 3.0)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_ped - 7.0)
        return traj_from_xy(xs, np.zeros_like(xs), dt=DT, t0=0)

    return scene, "go_straight", entry, make


def _build_construction(rng):
    v0 = rng.uniform(7.0, 9.0)
    x_c = rng.uniform(30.0, 36.0)
    scene = _base_scene(
        [0.0, LANE_WIDTH], [0.0, 0.0], route_y_change=(x_c - 22.0, x_c - 2.0, LANE_WIDTH)
    )
    scene.obstacles = [
        _static_obstacle(x_c + off, 0.0, *CONE_SIZE, kind="cone")
        for off in (0.0, 3.5, 7.0, 10.5, 14.0)
    ]

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 8.0, v0  # already deep in the closing lane

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            xs = _forward_positions(v, np.zeros(T_F), x0)
            ys = _lane_shift(xs, x_c - 20.0, x_c - 4.0, 0.0, LANE_WIDTH)
        elif label == "negative":
            # keeps the coned-off lane, forced to stop before the cones
            accels = np.array([0, -1, -2.5, -2.5, -2.5, -2.5, -2.5, 0, 0, 0], dtype=float)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_c - 3.0)
            ys = np.zeros_like(xs)
        else:  # recovery: late borrow of the adjacent lane around the cones
            xs = _forward_positions(v, np.zeros(T_F), x0)
            ys = _lane_shift(xs, x_c - 10.0, x_c + 2.0, 0.0, LANE_WIDTH)
        return traj_from_xy(xs, ys, dt=DT, t0=0)

    return scene, "change_left", entry, make


def _build_stop_sign(rng):
    v0 = rng.uniform(5.0, 7.0)
    # placed so a non-stopping driver crosses within the horizon
    x_s = v0 * T_F * DT * rng.uniform(0.75, 0.9)
    scene = _base_scene([0.0, LANE_WIDTH], [0.0, 0.0])
    schedule = np.ones(T_F + 1, dtype=np.int64)  # red for the whole horizon
    scene.traffic_lights = [
        TrafficLight(np.array([[x_s, -LANE_WIDTH / 2], [x_s, LANE_WIDTH / 2]]), schedule)
    ]

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 4.0, v0 * 1.15  # too fast, too close for a comfortable stop

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            accels = _brake_to_stop_at(v, x_s - 1.5, 1, 2.0)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_s - 1.5)
        elif label == "negative":
            xs = _forward_positions(v, np.zeros(T_F), x0)  # runs the red light
        else:  # recovery: late hard brake, stopping just before the line
            margin = rng.uniform(0.5, 1.5)
            brake_dist = v**2 / (2 * 3.0)
            start_k = max(1, int((x_s - margin - x0 - brake_dist) / (v * DT)))
            accels = _brake_to_stop_at(v, x_s - margin, start_k, 3.0)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_s - 0.3)
        return traj_from_xy(xs, np.zeros_like(xs), dt=DT, t0=0)

    return scene, "stop", entry, make


def _build_cut_in(rng):
    v0 = rng.uniform(7.0, 9.0)
    x_cut = rng.uniform(16.0, 20.0)
    v_cut = v0 * rng.uniform(0.55, 0.7)
    scene = _base_scene([0.0, LANE_WIDTH], [0.0, 0.0])
    ks = np.arange(T_F + 1)
    xs_c = x_cut + v_cut * ks * DT
    ys_c = LANE_WIDTH * (1.0 - _smoothstep((ks * DT - 0.5) / 2.0))
    scene.obstacles = [_path_obstacle(xs_c, ys_c, 0.0, *VEHICLE_SIZE)]

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 4.0, v0

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            accels = np.array([-2, -3, -3, -2, 0, 0, 0, 0, 0, 0], dtype=float)
        elif label == "negative":
            accels = np.zeros(T_F)  # keeps speed into the closing gap
        else:  # recovery: late hard brake after the cut-in completes
            accels = np.array([0, 0, -3, -3, -3, -2, 0, 0, 0, 0], dtype=float)
        xs = _forward_positions(v, accels, x0)
        return traj_from_xy(xs, np.zeros_like(xs), dt=DT, t0=0)

    return scene, "go_straight", entry, make


def _build_lead_braking(rng):
    v0 = rng.uniform(7.0, 9.0)
    x_lead = rng.uniform(16.0, 20.0)
    scene = _base_scene([0.0, LANE_WIDTH], [0.0, 0.0])
    # lead cruises one step then brakes hard to a stop
    lead_acc = np.array([0, -3, -3, -3, -3, -3, 0, 0, 0, 0], dtype=float)
    xs_l = x_lead + _forward_positions(v0, lead_acc)
    scene.obstacles = [_path_obstacle(xs_l, np.zeros_like(xs_l), 0.0, *VEHICLE_SIZE)]
    x_lead_final = float(xs_l[-1])

    def entry(label):
        if label == "positive":
            return 0.0, v0
        return 4.0, v0

    def make(label):
        x0, v = entry(label)
        if label == "positive":
            accels = np.array([-1, -2, -2.5, -2.5, -2.5, -2.5, 0, 0, 0, 0], dtype=float)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_lead_final - VEHICLE_SIZE[0] - 1.5)
        elif label == "negative":
            accels = np.array([0, 0, 0, 0, 0, -2, -2, -2, -2, -2], dtype=float)
            xs = _forward_positions(v, accels, x0)  # too late: rear-ends the lead
        else:  # recovery: emergency stop
            accels = np.array([0, -3, -3, -3, -3, -3, -3, 0, 0, 0], dtype=float)
            xs = _forward_positions(v, accels, x0)
            xs = np.minimum(xs, x_lead_final - VEHICLE_SIZE[0] - 1.0)
        return traj_from_xy(xs, np.zeros_like(xs), dt=DT, t0=0)

    return scene, "go_straight", entry, make


_BUILDERS = {
    "lane_change": _build_lane_change,
    "lane_bias": _build_lane_bias,
    "vru": _build_vru,
    "construction": _build_construction,
    "stop_sign": _build_stop_sign,
    "cut_in": _build_cut_in,
    "lead_braking": _build_lead_braking,
}


def generate_scenario(seed: int, archetype: str, label: str) -> Scenario:
    """Deterministically build one scenario. Negative/recovery variants share
    the scene of the positive variant with the same (seed, archetype)."""
    if archetype not in ARCHETYPES:
        raise ValueError(f"unknown archetype {archetype!r}")
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    ai = ARCHETYPES.index(archetype)
    li = LABELS.index(label)

    rng_scene = np.random.default_rng([int(seed), ai])
    scene, instruction, entry, make = _BUILDERS[archetype](rng_scene)
    reference = make(label)
    x0, v = entry(label)
    history = _history(v, x0=x0)

    rng_label = np.random.default_rng([int(seed), ai, li])
    if rng_label.random() < 0.25:
        tags = []  # fast-thinking sample
    else:
        lateral = classify_maneuver(reference).lateral
        tags = [lateral] * int(rng_label.integers(1, 6))

    return Scenario(
        id=f"{archetype}-{label}-{seed}",
        scene=scene,
        ego_history=history,
        reference=reference,
        label=label,
        instruction=instruction,
        archetype=archetype,
        reasoning_tags=tags,
    )
