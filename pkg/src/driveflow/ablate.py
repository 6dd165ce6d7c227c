"""Ablation runners: bridging-layer sparsity, historical initialization,
RFT data recipes, and reward-shaping sweeps.

Every runner generates one fixed dataset bundle per invocation and reuses it
across arms, so only the ablated factor varies.
"""

from __future__ import annotations

import copy
import time

import numpy as np

from driveflow.config import RunConfig
from driveflow.evalloop import evaluate_model, flow_ade_teacher
from driveflow.microworld import ARCHETYPES, generate_scenario
from driveflow.policy.codebook import coverage_motions, fit_codebook, segments_of
from driveflow.policy.model import PlanningModel
from driveflow.training import RftRecipe, run_rft, train_sft
from driveflow.dataio import sample_recipe


def make_mixed_dataset(seed0: int, count: int, neg_frac: float = 0.1, rec_frac: float = 0.1):
    """Deterministic mixed-label dataset: archetypes cycle, labels fill
    positive first, then negative, then recovery blocks."""
    n_neg = round(count * neg_frac)
    n_rec = round(count * rec_frac)
    n_pos = count - n_neg - n_rec
    out = []
    i = 0
    for label, n in (("positive", n_pos), ("negative", n_neg), ("recovery", n_rec)):
        for _ in range(n):
            out.append(generate_scenario(seed0 + i, ARCHETYPES[i % len(ARCHETYPES)], label))
            i += 1
    return out


def build_codebook(cfg: RunConfig, dataset):
    segs = [segments_of(s.reference) for s in dataset]
    rng = np.random.default_rng(cfg.codebook.seed)
    motions = np.concatenate(segs + [coverage_motions(rng, cfg.codebook.coverage_samples)])
    return fit_codebook(
        motions,
        k=cfg.codebook.k,
        seed=cfg.codebook.seed,
        heading_weight=cfg.codebook.heading_weight,
        iters=cfg.codebook.kmeans_iters,
    )


def train_base_model(cfg: RunConfig, train_set, codebook=None):
    codebook = codebook or build_codebook(cfg, train_set)
    model = PlanningModel(cfg.model, codebook)
    model.history_init = cfg.flow.history_init
    result = train_sft(model, train_set, cfg)
    return model, result


def _copy_params(src_store, dst_store, names):
    for n in names:
        dst_store.set(n, src_store[n].copy())


def ablate_layers(cfg: RunConfig, data_seed: int, train_count: int, eval_count: int, on_log=None):
    """Bridging-interval sweep {1, 2, 4, last-only}: per-arm stage-2 training
    on a shared stage-1 backbone, then ADE/PDMS and generation time."""
    train_set = make_mixed_dataset(data_seed, train_count, 0.0, 0.0)
    eval_set = make_mixed_dataset(data_seed + 10_000, eval_count, 0.0, 0.0)
    codebook = build_codebook(cfg, train_set)

    base_cfg = copy.deepcopy(cfg)
    base_cfg.sft.stage2_steps = 0
    base_model, _ = train_base_model(base_cfg, train_set, codebook)

    arms = [("interval_1", 1), ("interval_2", 2), ("interval_4", 4), ("last_only", cfg.model.enc_layers)]
    rows = []
    for name, interval in arms:
        arm_cfg = copy.deepcopy(cfg)
        arm_cfg.model.bridge_interval = interval
        arm_cfg.sft.stage1_steps = 0
        model = PlanningModel(arm_cfg.model, codebook)
        model.history_init = arm_cfg.flow.history_init
        _copy_params(base_model.store, model.store, base_model.backbone_params())
        train_sft(model, train_set, arm_cfg)

        ade = flow_ade_teacher(model, eval_set, flow_steps=cfg.flow.steps)
        _, summary = evaluate_model(model, eval_set, cfg.metrics, planner="flow", flow_steps=cfg.flow.steps)
        t0 = time.perf_counter()
        reps = 0
        for s in eval_set[: min(20, len(eval_set))]:
            model.plan_flow(s, reason_tags=s.reasoning_tags, steps=cfg.flow.steps)
            reps += 1
        gen_time = (time.perf_counter() - t0) / reps
        row = {
            "arm": name,
            "interval": interval,
            "n_bridge_layers": len(model.sparse_indices),
            "ade": ade,
            "pdms_flow": summary["pdms_flow"],
            "gen_time_s": gen_time,
        }
        rows.append(row)
        if on_log:
            on_log(row)
    return rows


def ablate_history_init(cfg: RunConfig, data_seed: int, train_count: int, eval_count: int, seeds=(0, 1, 2), on_log=None):
    """History-initialized expert vs the zero-anchor variant, matched budgets."""
    train_set = make_mixed_dataset(data_seed, train_count, 0.0, 0.0)
    eval_set = make_mixed_dataset(data_seed + 10_000, eval_count, 0.0, 0.0)
    codebook = build_codebook(cfg, train_set)
    rows = []
    for seed in seeds:
        for arm, hist_init in (("history_init", True), ("zero_anchor", False)):
            arm_cfg = copy.deepcopy(cfg)
            arm_cfg.model.param_seed = seed
            arm_cfg.sft.seed = seed
            arm_cfg.flow.history_init = hist_init
            model, _ = train_base_model(arm_cfg, train_set, codebook)
            ade = flow_ade_teacher(model, eval_set, flow_steps=cfg.flow.steps)
            row = {"arm": arm, "seed": seed, "ade": ade}
            rows.append(row)
            if on_log:
                on_log(row)
    return rows


def recipe_arms(total_mixed: int, warmup: int):
    """Fixed-budget recipe arms mirroring the data-recipe comparison."""
    m = total_mixed
    return {
        "pos_only": RftRecipe(warmup, {"positive": m, "negative": 0, "recovery": 0}, seed=0),
        "pos_neg": RftRecipe(warmup, {"positive": round(0.75 * m), "negative": m - round(0.75 * m), "recovery": 0}, seed=0),
        "pos_neg_rec": RftRecipe(
            warmup,
            {
                "positive": round(0.75 * m),
                "negative": (m - round(0.75 * m)) // 2,
                "recovery": m - round(0.75 * m) - (m - round(0.75 * m)) // 2,
            },
            seed=0,
        ),
        "no_warmup": RftRecipe(
            0,
            {
                "positive": warmup + round(0.75 * m),
                "negative": (m - round(0.75 * m)) // 2,
                "recovery": m - round(0.75 * m) - (m - round(0.75 * m)) // 2,
            },
            seed=0,
        ),
    }


def run_recipe_arm(sft_model: PlanningModel, rft_pool, eval_set, recipe: RftRecipe, cfg: RunConfig, seed: int):
    """Clone the SFT checkpoint, fine-tune with one recipe, evaluate."""
    model = PlanningModel(sft_model.cfg, sft_model.codebook, store=sft_model.store.copy())
    model.history_init = sft_model.history_init
    arm_cfg = copy.deepcopy(cfg)
    arm_cfg.rft.seed = seed
    recipe = RftRecipe(recipe.warmup_count, dict(recipe.mixed), seed=seed)
    stream, _ = sample_recipe(rft_pool, recipe)
    logs = run_rft(model, stream, arm_cfg)
    _, summary = evaluate_model(
        model,
        eval_set,
        arm_cfg.metrics,
        planner="ar",
        flow_steps=arm_cfg.flow.steps,
        sampled_match=4,
        match_delta=arm_cfg.reward.delta,
        rng_seed=seed,
    )
    return model, summary, logs


def ablate_recipe(cfg: RunConfig, sft_model, rft_pool, eval_set, total_mixed: int, warmup: int, seeds=(0,), on_log=None):
    rows = []
    for seed in seeds:
        for name, recipe in recipe_arms(total_mixed, warmup).items():
            _, summary, _ = run_recipe_arm(sft_model, rft_pool, eval_set, recipe, cfg, seed)
            row = {
                "arm": name,
                "seed": seed,
                "pdms": summary["pdms_ar"],
                "epdms": summary["epdms_ar"],
                "neg_match_sampled": summary.get("neg_match_sampled", 0.0),
            }
            rows.append(row)
            if on_log:
                on_log(row)
    return rows


def ablate_shaping(cfg: RunConfig, sft_model, rft_pool, eval_set, total_mixed: int, warmup: int,
                   lambdas=(0.0, 0.25, 0.5, 1.0), deltas=(1.0, 2.0, 4.0), on_log=None):
    """Negative/recovery shaping sweeps: term weight and proximity threshold."""
    base = recipe_arms(total_mixed, warmup)["pos_neg_rec"]
    rows = []
    for lam in lambdas:
        arm_cfg = copy.deepcopy(cfg)
        arm_cfg.reward.lambda_n = lam
        arm_cfg.reward.lambda_r = lam
        _, summary, _ = run_recipe_arm(sft_model, rft_pool, eval_set, base, arm_cfg, seed=0)
        row = {"arm": f"lambda_{lam}", "lambda": lam, "delta": arm_cfg.reward.delta,
               "pdms": summary["pdms_ar"], "neg_match_sampled": summary.get("neg_match_sampled", 0.0)}
        rows.append(row)
        if on_log:
            on_log(row)
    for delta in deltas:
        arm_cfg = copy.deepcopy(cfg)
        arm_cfg.reward.delta = delta
        _, summary, _ = run_recipe_arm(sft_model, rft_pool, eval_set, base, arm_cfg, seed=0)
        row = {"arm": f"delta_{delta}", "lambda": arm_cfg.reward.lambda_n, "delta": delta,
               "pdms": summary["pdms_ar"], "neg_match_sampled": summary.get("neg_match_sampled", 0.0)}
        rows.append(row)
        if on_log:
            on_log(row)
    return rows
