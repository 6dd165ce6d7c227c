"""Group-relative policy optimization over sampled token sequences.

Each step samples a group of candidates for one scenario at temperature 1,
decodes them through the codebook, scores the shaped reward, standardizes it
within the group, and ascends the clipped-ratio surrogate minus a KL penalty
to the supervised reference policy. One update per step means the sampling
policy equals the current policy, so every ratio is exactly 1 at the
gradient point; the clipping stays implemented generically regardless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from driveflow.config import RunConfig
from driveflow.nnkit import (
    AdamState,
    Tape,
    adam_step,
    add,
    exp,
    maximum,
    minimum,
    scale,
    sub,
    value_of,
)
from driveflow.policy.codebook import detokenize
from driveflow.policy.model import PlanningModel
from driveflow.training.rewards import RewardBreakdown, total_reward

ADV_STD_FLOOR = 1e-8


@dataclass
class RftRecipe:
    warmup_count: int
    mixed: dict  # counts per label: {"positive": n, "negative": n, "recovery": n}
    seed: int

    def __post_init__(self):
        for k, v in self.mixed.items():
            if k not in ("positive", "negative", "recovery"):
                raise ValueError(f"unknown label {k!r} in recipe")
            if v < 0:
                raise ValueError("recipe counts must be >= 0")
        if self.warmup_count < 0:
            raise ValueError("warmup_count must be >= 0")

    def total(self) -> int:
        return self.warmup_count + sum(self.mixed.values())


@dataclass
class GroupBatch:
    scenario_id: str
    label: str
    tokens: list
    rewards: list  # RewardBreakdown per candidate
    advantages: np.ndarray
    logp_old: list
    logp_ref: list
    ratios: list
    kl: list
    skipped: bool = False


def group_advantage(rewards) -> np.ndarray:
    """(r - mean) / population std; a degenerate group (std below 1e-8) gets
    all-zero advantages instead of an amplified-noise direction."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("group advantage needs G >= 2")
    std = float(r.std())
    if std < ADV_STD_FLOOR:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_term(logp_ref: float, logp_current: float) -> float:
    """rho - ln rho - 1 with rho = pi_ref / pi_theta; nonnegative, zero iff equal."""
    delta = logp_ref - logp_current
    return math.exp(delta) - delta - 1.0


def grpo_step(
    model: PlanningModel,
    ref_model: PlanningModel,
    scenario,
    cfg: RunConfig,
    rng: np.random.Generator,
    adam_state: AdamState,
) -> GroupBatch:
    """One sampled group and one policy update for one scenario query."""
    rft = cfg.rft
    g = rft.group_size
    ctx = model.encode_context(scenario, reason_tags=None, tape=None)
    ref_ctx = ref_model.encode_context(scenario, reason_tags=None, tape=None)

    groups = []
    for _ in range(g):
        tokens = model.sample_sequence(ctx, rng=rng)
        tags, codes = model.vocab.split(tokens)
        traj = detokenize(
            codes, model.codebook, start_pose=ctx.ego_pose, dt=model.cfg.dt, t0=0
        )
        bd = total_reward(scenario, traj, tags, cfg.reward, cfg.metrics)
        groups.append((tokens, tags, traj, bd))

    rewards = [bd.total for _, _, _, bd in groups]
    batch = GroupBatch(
        scenario_id=scenario.id,
        label=scenario.label,
        tokens=[t for t, _, _, _ in groups],
        rewards=[bd for _, _, _, bd in groups],
        advantages=np.zeros(g),
        logp_old=[],
        logp_ref=[],
        ratios=[],
        kl=[],
    )
    if not all(math.isfinite(r) for r in rewards):
        batch.skipped = True
        return batch

    advantages = group_advantage(rewards)
    batch.advantages = advantages
    logp_old = [
        float(value_of(model.sequence_logprob(t, ctx, tape=None))) for t, _, _, _ in groups
    ]
    logp_ref = [
        float(value_of(ref_model.sequence_logprob(t, ref_ctx, tape=None)))
        for t, _, _, _ in groups
    ]
    batch.logp_old = logp_old
    batch.logp_ref = logp_ref

    tape = Tape()
    ctx_t = model.encode_context(scenario, reason_tags=None, tape=tape)
    objective = None
    for i, (tokens, _, _, _) in enumerate(groups):
        lp = model.sequence_logprob(tokens, ctx_t, tape=tape)
        ratio = exp(tape, sub(tape, lp, logp_old[i]))
        ratio_val = float(value_of(ratio))
        # single update per step: the sampling policy is the current policy
        assert ratio_val == 1.0, f"ratio {ratio_val} != 1 at the gradient point"
        batch.ratios.append(ratio_val)
        clipped = minimum(
            tape, maximum(tape, ratio, 1.0 - rft.eps_clip), 1.0 + rft.eps_clip
        )
        surrogate = minimum(
            tape, scale(tape, ratio, advantages[i]), scale(tape, clipped, advantages[i])
        )
        delta = sub(tape, logp_ref[i], lp)
        kl = sub(tape, sub(tape, exp(tape, delta), delta), 1.0)
        batch.kl.append(float(value_of(kl)))
        term = sub(tape, surrogate, scale(tape, kl, rft.beta))
        objective = term if objective is None else add(tape, objective, term)
    objective = scale(tape, objective, 1.0 / g)

    # ascend the objective: backward of -J, then the minimizing optimizer step
    grads = tape.backward(objective, output_grad=-1.0)
    finite = all(np.all(np.isfinite(gv)) for gv in grads.values())
    if not finite:
        batch.skipped = True
        return batch
    adam_step(model.store, grads, adam_state, rft.lr, names=model.backbone_params())
    return batch


def run_rft(
    model: PlanningModel,
    stream,
    cfg: RunConfig,
    on_log=None,
):
    """Fine-tune the token policy over a (phase, scenario) stream.

    The flow expert stays bit-identical throughout (verified before return);
    the reference policy is a frozen copy of the incoming checkpoint.
    """
    stream = list(stream)
    if not stream:
        raise ValueError("empty RFT stream")
    expert_before = {n: model.store[n].copy() for n in model.expert_params()}
    ref_model = PlanningModel(model.cfg, model.codebook, store=model.store.copy())
    ref_model.history_init = model.history_init
    rng = np.random.default_rng(cfg.rft.seed)
    adam_state = AdamState()

    logs = []
    for step, (phase, scenario) in enumerate(stream):
        batch = grpo_step(model, ref_model, scenario, cfg, rng, adam_state)
        rewards = [bd.total for bd in batch.rewards]
        entry = {
            "phase": phase,
            "step": step,
            "scenario": batch.scenario_id,
            "label": batch.label,
            "reward_mean": float(np.mean(rewards)),
            "reward_std": float(np.std(rewards)),
            "r_driving_mean": float(np.mean([bd.r_driving for bd in batch.rewards])),
            "r_negative_mean": float(np.mean([bd.r_negative for bd in batch.rewards])),
            "r_recovery_mean": float(np.mean([bd.r_recovery for bd in batch.rewards])),
            "r_cot_mean": float(np.mean([bd.r_cot for bd in batch.rewards])),
            "kl_mean": float(np.mean(batch.kl)) if batch.kl else 0.0,
            "skipped": batch.skipped,
        }
        logs.append(entry)
        if on_log and (step % cfg.rft.log_every == 0 or step == len(stream) - 1):
            on_log(entry)

    for n, before in expert_before.items():
        after = model.store[n]
        if not np.array_equal(before, after):
            raise AssertionError(f"flow-expert parameter {n} changed during RFT")
    return logs
