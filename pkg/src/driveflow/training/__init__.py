"""Supervised two-stage training and GRPO reinforcement fine-tuning."""

from driveflow.training.grpo import (
    GroupBatch,
    RftRecipe,
    group_advantage,
    grpo_step,
    kl_term,
    run_rft,
)
from driveflow.training.latency import bench_latency
from driveflow.training.losses import fm_loss, lm_loss, target_tokens
from driveflow.training.rewards import (
    RewardBreakdown,
    alignment_check,
    avg_distance,
    cot_penalty,
    reference_match,
    total_reward,
)
from driveflow.training.sft import SftResult, train_sft

__all__ = [
    "GroupBatch",
    "RewardBreakdown",
    "RftRecipe",
    "SftResult",
    "alignment_check",
    "avg_distance",
    "bench_latency",
    "cot_penalty",
    "fm_loss",
    "group_advantage",
    "grpo_step",
    "kl_term",
    "lm_loss",
    "reference_match",
    "run_rft",
    "target_tokens",
    "total_reward",
    "train_sft",
]
