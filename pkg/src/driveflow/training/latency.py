"""Wall-clock comparison of the two trajectory generators.

Autoregressive decoding emits one token per future segment, so its cost
grows with the waypoint count; the flow expert runs a fixed number of field
evaluations regardless of horizon length.
"""

from __future__ import annotations

import time

import numpy as np

from driveflow.config import ModelConfig
from driveflow.microworld import generate_scenario
from driveflow.policy.model import PlanningModel


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_latency(model: PlanningModel, waypoint_counts, repeats: int = 5, flow_steps: int = 5):
    """Median decode times per waypoint count for (a) autoregressive token
    decoding and (b) flow-expert sampling at the configured step count.

    Horizons other than the model's own reuse its widths with fresh
    parameters (timing does not depend on training).
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3 for a meaningful median")
    rows = []
    for wc in waypoint_counts:
        if wc == model.cfg.t_f:
            bench_model = model
        else:
            cfg = ModelConfig(**{**model.cfg.__dict__, "t_f": int(wc)})
            bench_model = PlanningModel(cfg, model.codebook)
        scenario = generate_scenario(0, "lane_change", "positive")
        ctx = bench_model.encode_context(scenario, reason_tags=None, tape=None)
        rng = np.random.default_rng(0)

        def ar_decode():
            bench_model.sample_sequence(ctx, rng=rng)

        def flow_decode():
            anchors, queries = bench_model.embed_history(scenario.ego_history, tape=None)
            from driveflow.policy.flow import euler_flow

            euler_flow(
                lambda a, tau: bench_model.vector_field(a, tau, queries, ctx, tape=None),
                anchors,
                flow_steps,
            )

        ar_decode()  # warm caches/JIT outside the timed region
        flow_decode()
        rows.append(
            {
                "waypoints": int(wc),
                "ar_tokens": int(wc) + 2,
                "ar_median_s": _median_time(ar_decode, repeats),
                "flow_median_s": _median_time(flow_decode, repeats),
                "flow_steps": flow_steps,
            }
        )
    return rows
