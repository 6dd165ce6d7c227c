"""Batch evaluation of a trained model over a scenario suite."""

from __future__ import annotations

import numpy as np

from driveflow import metrics
from driveflow.dataio import make_report_row
from driveflow.policy.model import PlanningModel
from driveflow.training.rewards import avg_distance, reference_match


def evaluate_model(
    model: PlanningModel,
    scenarios,
    metrics_cfg: metrics.MetricsConfig,
    planner: str = "flow",
    flow_steps: int = 5,
    sampled_match: int = 0,
    match_delta: float = 2.0,
    rng_seed: int = 0,
):
    """Greedy-decode every scenario and score the selected planner's output.

    Returns (report rows, summary). Rows carry the primary planner's
    sub-scores plus both paths' PDMS and the displacement error against the
    reference. With ``sampled_match`` > 0, negative-labeled scenarios also get
    the mean reference-match of that many temperature-1 sampled plans
    (the proximity-to-bad-behavior audit).
    """
    if planner not in ("flow", "ar"):
        raise ValueError(f"unknown planner {planner!r}")
    rows = []
    flow_pdms, ar_pdms, flow_epdms, ar_epdms = [], [], [], []
    flow_ade, ar_ade = [], []
    neg_match = []
    rng = np.random.default_rng(rng_seed)
    for s in scenarios:
        res = model.infer(s, greedy=True, flow_steps=flow_steps, planner=planner)
        rep_flow = metrics.score(res.flow_plan, s, metrics_cfg)
        rep_ar = metrics.score(res.ar_plan, s, metrics_cfg)
        primary = rep_flow if planner == "flow" else rep_ar
        plan = res.flow_plan if planner == "flow" else res.ar_plan

        extra = {
            "ADE": avg_distance(plan, s.reference) if plan is not None else float("nan"),
            "PDMS_flow": rep_flow.pdms,
            "PDMS_ar": rep_ar.pdms,
            "reason_len": len(res.reason_tags),
        }
        if sampled_match and s.label == "negative":
            matches = []
            for _ in range(sampled_match):
                toks = model.sample_sequence(model.encode_context(s), rng=rng)
                _, codes = model.vocab.split(toks)
                from driveflow.policy.codebook import detokenize

                traj = detokenize(codes, model.codebook, start_pose=s.ego_history.waypoints[-1], dt=model.cfg.dt)
                matches.append(reference_match(traj, s.reference, match_delta))
            extra["neg_match_sampled"] = float(np.mean(matches))
            neg_match.append(extra["neg_match_sampled"])
        rows.append(make_report_row(s, primary, extra))

        flow_pdms.append(rep_flow.pdms)
        ar_pdms.append(rep_ar.pdms)
        flow_epdms.append(rep_flow.epdms)
        ar_epdms.append(rep_ar.epdms)
        if res.flow_plan is not None:
            flow_ade.append(avg_distance(res.flow_plan, s.reference))
        ar_ade.append(avg_distance(res.ar_plan, s.reference))

    summary = {
        "n": len(rows),
        "planner": planner,
        "pdms_flow": float(np.mean(flow_pdms)) if flow_pdms else 0.0,
        "pdms_ar": float(np.mean(ar_pdms)) if ar_pdms else 0.0,
        "epdms_flow": float(np.mean(flow_epdms)) if flow_epdms else 0.0,
        "epdms_ar": float(np.mean(ar_epdms)) if ar_epdms else 0.0,
        "ade_flow": float(np.mean(flow_ade)) if flow_ade else float("nan"),
        "ade_ar": float(np.mean(ar_ade)) if ar_ade else float("nan"),
    }
    if neg_match:
        summary["neg_match_sampled"] = float(np.mean(neg_match))
    return rows, summary


def flow_ade_teacher(model: PlanningModel, scenarios, flow_steps: int = 5) -> float:
    """Mean displacement error of the flow expert under teacher-forced
    reasoning tags (isolates the expert from the token head)."""
    ades = []
    for s in scenarios:
        plan = model.plan_flow(s, reason_tags=s.reasoning_tags, steps=flow_steps)
        if plan is None:
            ades.append(float("inf"))
        else:
            ades.append(avg_distance(plan, s.reference))
    return float(np.mean(ades))
