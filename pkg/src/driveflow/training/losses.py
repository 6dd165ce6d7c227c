"""SFT losses: token-sequence negative log-likelihood and the conditional
flow-matching regression."""

from __future__ import annotations

import numpy as np

from driveflow.config import FlowConfig
from driveflow.microworld.world import Scenario
from driveflow.nnkit import (
    add,
    affine,
    log_softmax,
    mean_,
    neg,
    pick,
    scale,
    square,
    sub,
)
from driveflow.policy.codebook import tokenize
from driveflow.policy.flow import fm_interpolate, sample_tau
from driveflow.policy.model import EncodedContext, PlanningModel


def target_tokens(model: PlanningModel, scenario: Scenario) -> list:
    """Supervised token sequence for one scenario: reason tags, the action
    switch, the tokenized reference, EOS. Grammar violations are rejected
    here, at data load."""
    codes = tokenize(scenario.reference, model.codebook)
    if len(codes) != model.vocab.t_f:
        raise ValueError(
            f"reference yields {len(codes)} action tokens, expected {model.vocab.t_f}"
        )
    return model.vocab.build_sequence(scenario.reasoning_tags, codes)


def lm_loss(model: PlanningModel, tokens, ctx: EncodedContext, tape=None):
    """(sequence loss, action-only loss) for one grammatical target.

    The sequence loss averages the NLL over the reasoning and action tokens
    (N = L + T positions); the action loss averages over the T action tokens
    alone. On a fast-thinking sample the two index sets coincide.
    """
    tokens = list(tokens)
    model.vocab.validate(tokens)
    input_ids = [model.vocab.bos_row] + tokens[:-1]
    h = model._decoder_hidden(tape, input_ids, ctx)
    logits = affine(tape, h, model._p(tape, "dec.out_w"), model._p(tape, "dec.out_b"))
    mask = model.vocab.grammar_mask_rows(tokens)
    logp = log_softmax(tape, logits, mask=mask)

    lm_idx = np.array(
        [i for i, t in enumerate(tokens) if model.vocab.is_reason(t) or model.vocab.is_code(t)]
    )
    act_idx = np.array([i for i, t in enumerate(tokens) if model.vocab.is_code(t)])
    toks = np.asarray(tokens)
    l_lm = neg(tape, mean_(tape, pick(tape, logp, lm_idx, toks[lm_idx])))
    l_action = neg(tape, mean_(tape, pick(tape, logp, act_idx, toks[act_idx])))
    return l_lm, l_action


def fm_loss(
    model: PlanningModel,
    scenarios,
    contexts,
    rng: np.random.Generator,
    flow_cfg: FlowConfig,
    tape=None,
):
    """Mean squared error between the predicted vector field and the
    interpolation-path derivative (future actions minus history anchors),
    at a shifted-normal flow time, with jittered anchors."""
    total = None
    for scenario, ctx in zip(scenarios, contexts):
        a_ref = model.reference_actions(scenario)
        tau = sample_tau(rng, flow_cfg.tau_shift)
        noise = (
            rng.normal(0.0, flow_cfg.noise_std, size=a_ref.shape)
            if flow_cfg.noise_std > 0
            else None
        )
        anchors, queries = model.embed_history(scenario.ego_history, tape=tape, noise=noise)
        a_tau = fm_interpolate(tape, a_ref, anchors, tau)
        target = sub(tape, a_ref, anchors)
        v = model.vector_field(a_tau, tau, queries, ctx, tape=tape)
        term = mean_(tape, square(tape, sub(tape, v, target)))
        total = term if total is None else add(tape, total, term)
    return scale(tape, total, 1.0 / len(scenarios))
