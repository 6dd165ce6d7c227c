"""Driving sub-scores and the PDMS / EPDMS aggregations.

Gate metrics (nc, dac, ddc, tlc) are binary in this implementation; the
remaining sub-scores live in [0, 1]. ``score`` evaluates a trajectory
against a scenario and doubles as the driving reward during fine-tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from driveflow import kernels
from driveflow.microworld.world import Scenario, Scene, Trajectory, wrap_angle

PDMS_COLUMNS = ("nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec", "c")

EPDMS_GATES = ("nc", "dac", "ddc", "tlc")
EPDMS_WEIGHTS = {"ttc": 5.0, "ep": 5.0, "hc": 2.0, "lk": 2.0, "ec": 2.0}


@dataclass
class MetricsConfig:
    ego_length: float = 4.6
    ego_width: float = 1.9
    a_max: float = 3.0  # m/s^2 comfort bound
    j_max: float = 5.0  # m/s^3 comfort bound
    t_ttc: float = 1.0  # constant-velocity projection horizon, seconds
    ec_tol: float = 1.0  # first-step accel difference tolerated by EC, m/s^2
    lane_width: float = 3.5
    ep_min_ref: float = 0.1  # reference progress below this makes EP vacuous
    stopped_speed: float = 5e-3  # below this the ego cannot cause a TTC infraction
    lk_window: int = 2  # steps around a centerline switch exempt from LK


@dataclass
class SubScores:
    nc: float = 1.0
    dac: float = 1.0
    ddc: float = 1.0
    tlc: float = 1.0
    ep: float = 1.0
    ttc: float = 1.0
    lk: float = 1.0
    hc: float = 1.0
    ec: float = 1.0
    c: float = 1.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PDMS_COLUMNS}


@dataclass
class ScoreReport:
    subscores: SubScores
    pdms: float
    epdms: float
    valid: bool
    human: SubScores = field(default_factory=SubScores)


# ---------------------------------------------------------------------------
# aggregations
# ---------------------------------------------------------------------------


def pdms(s: SubScores) -> float:
    """NC x DAC x (5 TTC + 2 C + 5 EP) / 12."""
    return s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep) / 12.0


def _filter_metric(agent_val: float, human_val: float) -> float:
    return 1.0 if human_val == 0.0 else agent_val


def epdms(agent: SubScores, human: SubScores) -> float:
    """Gated product over {NC, DAC, DDC, TLC} times the weighted mean over
    {TTC, EP, HC, LK, EC}, each term excused when the human reference also
    fails it."""
    gate = 1.0
    for m in EPDMS_GATES:
        gate *= _filter_metric(getattr(agent, m), getattr(human, m))
    num = 0.0
    den = 0.0
    for m, w in EPDMS_WEIGHTS.items():
        num += w * _filter_metric(getattr(agent, m), getattr(human, m))
        den += w
    return gate * num / den


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def _pad_polygons(polys):
    max_len = max(p.shape[0] for p in polys)
    out = np.zeros((len(polys), max_len, 2))
    lens = np.zeros(len(polys), dtype=np.int64)
    for i, p in enumerate(polys):
        out[i, : p.shape[0]] = p
        lens[i] = p.shape[0]
    return out, lens


def _ego_box(pose, cfg: MetricsConfig):
    return kernels.rect_corners(pose[0], pose[1], pose[2], cfg.ego_length, cfg.ego_width)


def _obstacle_box(obs, k: int):
    pose = obs.trajectory.pose_at_index(k)
    return kernels.rect_corners(pose[0], pose[1], pose[2], obs.length, obs.width)


def _nearest_lane(scene: Scene, x: float, y: float):
    """(distance, lane index, lane direction) of the nearest centerline."""
    best = (math.inf, -1, 0.0)
    for li, lane in enumerate(scene.lane_centerlines):
        _, d = kernels.polyline_project(lane[:, :2], x, y)
        if d < best[0]:
            _, vi = kernels.nearest_polyline_point(lane[:, :2], x, y)
            best = (d, li, float(lane[vi, 2]))
    return best


def _segment_speeds(traj: Trajectory) -> np.ndarray:
    return traj.speeds()


def _comfort_ok(positions: np.ndarray, dt: float, cfg: MetricsConfig) -> bool:
    deltas = np.diff(positions, axis=0)
    speeds = np.hypot(deltas[:, 0], deltas[:, 1]) / dt
    if speeds.size < 2:
        return True
    accels = np.diff(speeds) / dt
    if np.any(np.abs(accels) > cfg.a_max):
        return False
    if accels.size >= 2:
        jerks = np.diff(accels) / dt
        if np.any(np.abs(jerks) > cfg.j_max):
            return False
    return True


def _first_step_accel(traj: Trajectory) -> float:
    speeds = _segment_speeds(traj)
    if speeds.size < 2:
        return 0.0
    return float((speeds[1] - speeds[0]) / traj.dt)


# ---------------------------------------------------------------------------
# sub-scores
# ---------------------------------------------------------------------------


def sub_nc(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """0 if the ego box overlaps any obstacle box at any step, else 1."""
    for i in range(len(traj)):
        k = traj.t0 + i
        ego = _ego_box(traj.waypoints[i], cfg)
        for obs in scene.obstacles:
            if kernels.rects_overlap(ego, _obstacle_box(obs, k)):
                return 0.0
    return 1.0


def sub_dac(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff all four ego-box corners stay inside the drivable area."""
    polys, lens = _pad_polygons(scene.drivable_area)
    corners = np.concatenate(
        [_ego_box(traj.waypoints[i], cfg) for i in range(len(traj))], axis=0
    )
    inside = kernels.points_in_any_polygon(corners, polys, lens)
    return 1.0 if bool(np.all(inside)) else 0.0


def sub_ddc(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff the ego heading stays within pi/2 of the nearest lane direction."""
    for wp in traj.waypoints:
        _, _, lane_dir = _nearest_lane(scene, wp[0], wp[1])
        if abs(wrap_angle(wp[2] - lane_dir)) > math.pi / 2:
            return 0.0
    return 1.0


def sub_tlc(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff the ego never crosses a stop line while its light is red.

    The light state is read at the time index where the crossing step starts,
    so a vehicle that waits for green and then proceeds is compliant.
    """
    for light in scene.traffic_lights:
        (ax, ay), (bx, by) = light.stop_line
        for i in range(1, len(traj)):
            p0 = traj.waypoints[i - 1]
            p1 = traj.waypoints[i]
            if kernels.segments_intersect(p0[0], p0[1], p1[0], p1[1], ax, ay, bx, by):
                if light.is_red(traj.t0 + i - 1):
                    return 0.0
    return 1.0


def _route_progress(route: np.ndarray, positions: np.ndarray) -> float:
    s0, _ = kernels.polyline_project(route, positions[0, 0], positions[0, 1])
    s1, _ = kernels.polyline_project(route, positions[-1, 0], positions[-1, 1])
    return max(0.0, s1 - s0)


def sub_ep(
    traj: Trajectory,
    reference: Trajectory | None,
    route: np.ndarray,
    cfg: MetricsConfig = MetricsConfig(),
) -> float:
    """Ego progress along the route relative to the reference's progress.

    With ``reference=None`` (negative-labeled scenarios) the denominator is
    the remaining route arc length instead of the reference progress.
    """
    ego_progress = _route_progress(route, traj.positions)
    if reference is None:
        s0, _ = kernels.polyline_project(route, traj.positions[0, 0], traj.positions[0, 1])
        denom = kernels.polyline_length(route) - s0
    else:
        denom = _route_progress(route, reference.positions)
    if denom < cfg.ep_min_ref:
        return 1.0
    return float(np.clip(ego_progress / denom, 0.0, 1.0))


def sub_ttc(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff a constant-velocity projection of the ego over the TTC horizon
    stays clear of every obstacle at each step."""
    speeds = _segment_speeds(traj)
    n_proj = max(1, int(round(cfg.t_ttc / traj.dt)))
    for i in range(len(traj)):
        v = speeds[min(i, speeds.size - 1)] if speeds.size else 0.0
        if v < cfg.stopped_speed:
            continue
        x, y, psi = traj.waypoints[i]
        for j in range(1, n_proj + 1):
            t_ahead = j * traj.dt
            px = x + v * math.cos(psi) * t_ahead
            py = y + v * math.sin(psi) * t_ahead
            ego = kernels.rect_corners(px, py, psi, cfg.ego_length, cfg.ego_width)
            k = traj.t0 + i + j
            for obs in scene.obstacles:
                if kernels.rects_overlap(ego, _obstacle_box(obs, k)):
                    return 0.0
    return 1.0


def sub_lk(traj: Trajectory, scene: Scene, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff lateral deviation from the nearest centerline stays within half a
    lane width, ignoring steps near a nearest-centerline switch (lane change)."""
    dists = np.empty(len(traj))
    lanes = np.empty(len(traj), dtype=np.int64)
    for i, wp in enumerate(traj.waypoints):
        d, li, _ = _nearest_lane(scene, wp[0], wp[1])
        dists[i] = d
        lanes[i] = li
    switches = np.nonzero(np.diff(lanes) != 0)[0]
    exempt = np.zeros(len(traj), dtype=bool)
    for s in switches:
        lo = max(0, s - cfg.lk_window + 1)
        hi = min(len(traj), s + cfg.lk_window + 1)
        exempt[lo:hi] = True
    limit = 0.5 * cfg.lane_width
    if np.any(dists[~exempt] > limit):
        return 0.0
    return 1.0


def sub_comfort(traj: Trajectory, cfg: MetricsConfig = MetricsConfig()) -> float:
    """1 iff accel and jerk stay within bounds on the plan itself."""
    return 1.0 if _comfort_ok(traj.positions, traj.dt, cfg) else 0.0


def sub_hc(traj: Trajectory, history: Trajectory, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Comfort evaluated on the history + plan concatenation."""
    hist = history.positions
    plan = traj.positions
    if np.allclose(hist[-1], plan[0], atol=1e-9):
        plan = plan[1:]
    combined = np.concatenate([hist, plan], axis=0)
    return 1.0 if _comfort_ok(combined, traj.dt, cfg) else 0.0


def sub_ec(
    traj: Trajectory, prev_plan: Trajectory | None, cfg: MetricsConfig = MetricsConfig()
) -> float:
    """1 iff the plan's first-step accel matches the previous plan's within
    tolerance; vacuously 1 without a previous plan."""
    if prev_plan is None:
        return 1.0
    diff = abs(_first_step_accel(traj) - _first_step_accel(prev_plan))
    return 1.0 if diff <= cfg.ec_tol else 0.0


# ---------------------------------------------------------------------------
# full scoring
# ---------------------------------------------------------------------------


def _all_subscores(
    traj: Trajectory,
    scenario: Scenario,
    cfg: MetricsConfig,
    prev_plan: Trajectory | None,
    negative_ep: bool,
) -> SubScores:
    scene = scenario.scene
    reference = None if negative_ep else scenario.reference
    return SubScores(
        nc=sub_nc(traj, scene, cfg),
        dac=sub_dac(traj, scene, cfg),
        ddc=sub_ddc(traj, scene, cfg),
        tlc=sub_tlc(traj, scene, cfg),
        ep=sub_ep(traj, reference, scene.route, cfg),
        ttc=sub_ttc(traj, scene, cfg),
        lk=sub_lk(traj, scene, cfg),
        hc=sub_hc(traj, scenario.ego_history, cfg),
        ec=sub_ec(traj, prev_plan, cfg),
        c=sub_comfort(traj, cfg),
    )


def score(
    traj,
    scenario: Scenario,
    cfg: MetricsConfig = MetricsConfig(),
    prev_plan: Trajectory | None = None,
) -> ScoreReport:
    """Score a trajectory against a scenario.

    ``traj`` may be a Trajectory, a raw (n, 3) waypoint array, or None.
    Invalid output (missing, non-finite, or degenerate) yields a report with
    ``valid=False`` and both aggregates forced to 0. On negative-labeled
    scenarios the ego-progress denominator is the remaining route, not the
    (suboptimal) reference.
    """
    invalid = traj is None
    if not invalid and not isinstance(traj, Trajectory):
        arr = np.asarray(traj, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or not np.all(np.isfinite(arr)):
            invalid = True
        else:
            traj = Trajectory(arr, dt=scenario.reference.dt, t0=scenario.reference.t0)
    if not invalid:
        invalid = len(traj) < 2 or not np.all(np.isfinite(traj.waypoints))
    negative_ep = scenario.label == "negative"
    human = _all_subscores(scenario.reference, scenario, cfg, None, negative_ep)
    if invalid:
        zeros = SubScores(**{k: 0.0 for k in PDMS_COLUMNS})
        return ScoreReport(subscores=zeros, pdms=0.0, epdms=0.0, valid=False, human=human)
    agent = _all_subscores(traj, scenario, cfg, prev_plan, negative_ep)
    return ScoreReport(
        subscores=agent,
        pdms=pdms(agent),
        epdms=epdms(agent, human),
        valid=True,
        human=human,
    )
