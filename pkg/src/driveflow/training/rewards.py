"""Reward shaping: driving reward, negative/recovery reference matching,
reasoning-length penalty, and the action-reasoning alignment override."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from driveflow import metrics
from driveflow.config import RewardConfig
from driveflow.microworld.world import Scenario, Trajectory, classify_maneuver


@dataclass
class RewardBreakdown:
    r_driving: float
    r_negative: float
    r_recovery: float
    r_cot: float
    alignment_violated: bool
    total: float
    label: str
    lambda_n: float
    lambda_r: float
    lambda_c: float

    @property
    def w_n(self) -> float:
        return self.lambda_n if self.label == "negative" else 0.0

    @property
    def w_r(self) -> float:
        return self.lambda_r if self.label == "recovery" else 0.0

    def recompute_total(self) -> float:
        return (
            self.r_driving
            - self.w_n * self.r_negative
            + self.w_r * self.r_recovery
            - self.lambda_c * self.r_cot
        )


def avg_distance(traj: Trajectory, reference: Trajectory) -> float:
    """Mean per-step Euclidean distance over the time-aligned common prefix."""
    n = min(len(traj), len(reference))
    d = traj.positions[:n] - reference.positions[:n]
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))


def reference_match(traj: Trajectory, reference: Trajectory, delta: float) -> float:
    """clip(1 - d/delta, 0, 1): 1 on an exact match, 0 at deviation >= delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = avg_distance(traj, reference)
    return float(np.clip(1.0 - d / delta, 0.0, 1.0))


def cot_penalty(length: int, l_tol: int, gamma: float) -> float:
    """Sigmoid penalty in the reasoning length, centered at the tolerance."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return 1.0 / (1.0 + math.exp(-(length - l_tol) * gamma))


def alignment_check(reasoning_tags, traj: Trajectory) -> bool:
    """True when the stated maneuver agrees with the executed trajectory.

    Empty tags (fast thinking) are vacuously consistent; tags naming more
    than one maneuver are inconsistent outright.
    """
    if not reasoning_tags:
        return True
    if len(traj) < 2:
        raise ValueError("alignment needs at least 2 waypoints")
    stated = set(reasoning_tags)
    if len(stated) > 1:
        return False
    return classify_maneuver(traj).lateral == next(iter(stated))


def total_reward(
    scenario: Scenario,
    traj: Trajectory | None,
    reason_tags,
    cfg: RewardConfig,
    metrics_cfg: metrics.MetricsConfig = metrics.MetricsConfig(),
    prev_plan: Trajectory | None = None,
) -> RewardBreakdown:
    """Full shaped reward for one candidate plan."""
    report = metrics.score(traj, scenario, metrics_cfg, prev_plan=prev_plan)
    r_driving = report.pdms if cfg.benchmark_mode == "pdms" else report.epdms

    r_negative = 0.0
    r_recovery = 0.0
    if report.valid and scenario.label == "negative":
        r_negative = reference_match(traj, scenario.reference, cfg.delta)
    if report.valid and scenario.label == "recovery":
        r_recovery = reference_match(traj, scenario.reference, cfg.delta)

    consistent = alignment_check(reason_tags, traj) if report.valid else True
    if consistent:
        r_cot = cot_penalty(len(reason_tags), cfg.l_tol, cfg.gamma)
        violated = False
    else:
        r_cot = cfg.kappa_align
        violated = True

    breakdown = RewardBreakdown(
        r_driving=r_driving,
        r_negative=r_negative,
        r_recovery=r_recovery,
        r_cot=r_cot,
        alignment_violated=violated,
        total=0.0,
        label=scenario.label,
        lambda_n=cfg.lambda_n,
        lambda_r=cfg.lambda_r,
        lambda_c=cfg.lambda_c,
    )
    breakdown.total = breakdown.recompute_total()
    return breakdown
