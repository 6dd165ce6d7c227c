"""Two-stage supervised training.

Stage 1 fits the backbone (context encoder + token head) on the sequence
loss. Stage 2 freezes it and fits only the action expert (history embedding
+ bridging) on the flow-matching loss; the frozen half runs without a tape,
so no gradient can reach it by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from driveflow.config import RunConfig
from driveflow.nnkit import AdamState, Tape, adam_step, add, scale, value_of
from driveflow.policy.model import PlanningModel
from driveflow.training.losses import fm_loss, lm_loss, target_tokens


@dataclass
class SftResult:
    stage1_curve: list = field(default_factory=list)  # (step, L_LM, L_Action)
    stage2_curve: list = field(default_factory=list)  # (step, L_FM)
    aborted: bool = False
    fm_initial: float = 0.0
    fm_final: float = 0.0


def _snapshot(store, names):
    return {n: store[n].copy() for n in names}


def _restore(store, snap):
    for n, v in snap.items():
        store.set(n, v)


def train_sft(model: PlanningModel, dataset, cfg: RunConfig, on_log=None) -> SftResult:
    """Run both stages in place on the model's store.

    ``dataset`` is a list of scenarios; only positive-labeled ones carry
    expert behavior, so the others are filtered out here. A non-finite loss
    aborts the stage and restores the last good snapshot.
    """
    scenarios = [s for s in dataset if s.label == "positive"]
    if not scenarios:
        raise ValueError("no positive scenarios to train on")
    sft = cfg.sft
    result = SftResult()
    rng = np.random.default_rng(sft.seed)

    # -- stage 1: backbone on the sequence loss ------------------------------
    targets = [target_tokens(model, s) for s in scenarios]
    backbone = model.backbone_params()
    state = AdamState()
    snap = _snapshot(model.store, backbone)
    for step in range(sft.stage1_steps):
        idx = rng.integers(0, len(scenarios), size=sft.batch_stage1)
        tape = Tape()
        loss = None
        act = None
        for i in idx:
            ctx = model.encode_context(scenarios[i], reason_tags=None, tape=tape)
            l_lm, l_act = lm_loss(model, targets[i], ctx, tape=tape)
            loss = l_lm if loss is None else add(tape, loss, l_lm)
            act = l_act if act is None else add(tape, act, l_act)
        loss = scale(tape, loss, 1.0 / len(idx))
        act_val = float(value_of(act)) / len(idx)
        loss_val = float(value_of(loss))
        if not np.isfinite(loss_val):
            _restore(model.store, snap)
            result.aborted = True
            break
        grads = tape.backward(loss)
        adam_step(model.store, grads, state, sft.lr_stage1, names=backbone)
        if step % sft.log_every == 0 or step == sft.stage1_steps - 1:
            result.stage1_curve.append((step, loss_val, act_val))
            if on_log:
                on_log({"phase": "sft1", "step": step, "l_lm": loss_val, "l_action": act_val})
        if step % sft.snapshot_every == 0:
            snap = _snapshot(model.store, backbone)

    # -- stage 2: action expert on the flow loss, backbone frozen ------------
    contexts = [
        model.encode_context(s, reason_tags=s.reasoning_tags, tape=None) for s in scenarios
    ]
    expert = model.expert_params()
    state2 = AdamState()
    snap2 = _snapshot(model.store, expert)
    for step in range(sft.stage2_steps):
        idx = rng.integers(0, len(scenarios), size=sft.batch_stage2)
        tape = Tape()
        loss = fm_loss(
            model,
            [scenarios[i] for i in idx],
            [contexts[i] for i in idx],
            rng,
            cfg.flow,
            tape=tape,
        )
        loss_val = float(value_of(loss))
        if not np.isfinite(loss_val):
            _restore(model.store, snap2)
            result.aborted = True
            break
        if step == 0:
            result.fm_initial = loss_val
        grads = tape.backward(loss)
        adam_step(model.store, grads, state2, sft.lr_stage2, names=expert)
        result.fm_final = loss_val
        if step % sft.log_every == 0 or step == sft.stage2_steps - 1:
            result.stage2_curve.append((step, loss_val))
            if on_log:
                on_log({"phase": "sft2", "step": step, "l_fm": loss_val})
        if step % sft.snapshot_every == 0:
            snap2 = _snapshot(model.store, expert)

    return result
