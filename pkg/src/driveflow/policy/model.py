"""The planning model.

One ``ParamStore`` holds three parameter groups:

* backbone: context featurization, the transformer encoder whose per-layer
  key/value caches condition everything downstream, and the autoregressive
  token head (reasoning + discrete action tokens);
* expert: the history-embedding MLP and the sparse cross-attention bridging
  layers that predict the flow-matching vector field;
* the motion codebook rides along as a non-learned artifact.

Passing ``tape=None`` to any forward runs it frozen on raw arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from driveflow.config import ModelConfig
from driveflow.microworld.world import INSTRUCTIONS, Scenario, Trajectory, traj_from_xy, wrap_angle
from driveflow.nnkit import (
    ParamStore,
    add,
    affine,
    attention,
    embedding_lookup,
    gated_mlp,
    layer_norm,
    log_softmax,
    matmul,
    pick,
    reshape,
    scale,
    softmax,
    sum_,
    tanh,
    value_of,
)
from driveflow.policy.codebook import ActionCodebook, detokenize
from driveflow.policy.flow import (
    euler_flow,
    select_sparse_layers,
    time_features,
    waypoint_positions,
)
from driveflow.policy.vocab import NEG_INF, TokenVocabulary

N_FEAT = 8
TYPE_PAD, TYPE_EGO, TYPE_HIST, TYPE_INSTR, TYPE_OBST, TYPE_LANE, TYPE_LIGHT, TYPE_ROUTE, TYPE_REASON = range(9)
N_TYPES = 9
N_TIME_FREQ = 8

BACKBONE_PREFIXES = ("ctx.", "enc.", "dec.")
EXPERT_PREFIXES = ("hist.", "vf.", "bridge.")

KIND_CODE = {"vehicle": 0.0, "pedestrian": 0.5, "cone": 1.0}


@dataclass
class EncodedContext:
    caches: list  # per encoder layer: (keys, values), Nodes or arrays
    key_mask: np.ndarray  # additive (1, 1, L), -inf at padded positions
    n_tokens: int
    ego_pose: np.ndarray  # (3,) world pose at t=0
    reason_tags: list


@dataclass
class InferenceResult:
    plan: Trajectory | None
    tokens: list
    reason_tags: list
    ar_plan: Trajectory
    flow_plan: Trajectory | None


def _rel_point(pose, x, y):
    c, s = math.cos(-pose[2]), math.sin(-pose[2])
    dx, dy = x - pose[0], y - pose[1]
    return c * dx - s * dy, s * dx + c * dy


def _polyline_sample(poly: np.ndarray, s_values, s0: float = 0.0):
    """Points (and tangent angles) of a polyline at given arc lengths."""
    pts = poly[:, :2]
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    out = []
    for s in s_values:
        s_abs = min(max(s0 + s, 0.0), cum[-1])
        i = int(np.searchsorted(cum, s_abs, side="right") - 1)
        i = min(i, len(seg_len) - 1)
        t = 0.0 if seg_len[i] == 0 else (s_abs - cum[i]) / seg_len[i]
        p = pts[i] + t * seg[i]
        ang = math.atan2(seg[i, 1], seg[i, 0]) if seg_len[i] > 0 else 0.0
        out.append((p[0], p[1], ang))
    return out


def build_context_features(scenario: Scenario, reason_tags, cfg: ModelConfig):
    """Context token features (n, N_FEAT) and type ids for one scenario."""
    from driveflow import kernels
    from driveflow.microworld.world import ego_state_at_end

    pose0 = scenario.ego_history.waypoints[-1]
    ego = ego_state_at_end(scenario.ego_history)
    rows = []
    types = []

    rows.append([ego.speed / 10.0, ego.accel / 3.0, 0, 0, 0, 0, 0, 0])
    types.append(TYPE_EGO)

    hist = scenario.ego_history
    speeds = hist.speeds()
    for j in range(len(hist)):
        xr, yr = _rel_point(pose0, hist.waypoints[j, 0], hist.waypoints[j, 1])
        hr = wrap_angle(hist.waypoints[j, 2] - pose0[2])
        vj = speeds[min(max(j - 1, 0), speeds.size - 1)] if speeds.size else 0.0
        rows.append([xr / 10.0, yr / 10.0, math.cos(hr), math.sin(hr), vj / 10.0, j / max(1, len(hist) - 1), 0, 0])
        types.append(TYPE_HIST)

    instr = np.zeros(N_FEAT)
    instr[INSTRUCTIONS.index(scenario.instruction)] = 1.0
    rows.append(instr.tolist())
    types.append(TYPE_INSTR)

    obstacles = scenario.scene.obstacles
    if len(obstacles) > cfg.max_obstacles:
        def dist0(o):
            p = o.trajectory.pose_at_index(0)
            return (p[0] - pose0[0]) ** 2 + (p[1] - pose0[1]) ** 2
        obstacles = sorted(obstacles, key=dist0)[: cfg.max_obstacles]
    for obs in obstacles:
        p = obs.trajectory.pose_at_index(0)
        xr, yr = _rel_point(pose0, p[0], p[1])
        hr = wrap_angle(p[2] - pose0[2])
        spd = obs.trajectory.speeds()
        v = float(spd[0]) if spd.size else 0.0
        rows.append([
            xr / 10.0, yr / 10.0, math.cos(hr), math.sin(hr),
            v / 10.0, obs.length / 5.0, obs.width / 5.0, KIND_CODE.get(obs.kind, 0.0),
        ])
        types.append(TYPE_OBST)

    for lane in scenario.scene.lane_centerlines:
        s0, _ = kernels.polyline_project(np.ascontiguousarray(lane[:, :2]), pose0[0], pose0[1])
        for x, y, _ in _polyline_sample(lane, (0.0, 15.0, 30.0, 45.0), s0):
            xr, yr = _rel_point(pose0, x, y)
            dr = wrap_angle(lane[0, 2] - pose0[2])
            rows.append([xr / 10.0, yr / 10.0, math.cos(dr), math.sin(dr), 0, 0, 0, 0])
            types.append(TYPE_LANE)

    for light in scenario.scene.traffic_lights:
        mid = light.stop_line.mean(axis=0)
        xr, yr = _rel_point(pose0, mid[0], mid[1])
        sched = light.red_schedule
        greens = np.nonzero(sched == 0)[0]
        first_green = float(greens[0]) if greens.size else float(len(sched))
        rows.append([
            xr / 10.0, yr / 10.0, float(light.is_red(0)), float(sched.mean()),
            first_green / 10.0, 0, 0, 0,
        ])
        types.append(TYPE_LIGHT)

    route = scenario.scene.route
    s0, _ = kernels.polyline_project(route, pose0[0], pose0[1])
    for x, y, ang in _polyline_sample(np.column_stack([route, np.zeros(len(route))]), (5.0, 15.0, 30.0, 45.0), s0):
        xr, yr = _rel_point(pose0, x, y)
        dr = wrap_angle(ang - pose0[2])
        rows.append([xr / 10.0, yr / 10.0, math.cos(dr), math.sin(dr), 0, 0, 0, 0])
        types.append(TYPE_ROUTE)

    for tag in reason_tags or []:
        row = np.zeros(N_FEAT)
        from driveflow.microworld.world import LATERAL_MANEUVERS
        row[LATERAL_MANEUVERS.index(tag)] = 1.0
        rows.append(row.tolist())
        types.append(TYPE_REASON)

    feats = np.asarray(rows, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)
    if feats.shape[0] > cfg.max_context:
        raise ValueError(
            f"context overflow: {feats.shape[0]} tokens > max_context {cfg.max_context}"
        )
    return feats, types


def _causal_mask(n: int) -> np.ndarray:
    m = np.zeros((1, n, n))
    m[0][np.triu_indices(n, k=1)] = NEG_INF
    return m


class PlanningModel:
    def __init__(self, cfg: ModelConfig, codebook: ActionCodebook, store: ParamStore | None = None):
        if cfg.enc_width % cfg.heads or cfg.bridge_width % cfg.heads:
            raise ValueError("widths must be divisible by the head count")
        self.cfg = cfg
        self.codebook = codebook
        self.vocab = TokenVocabulary(codebook.k, cfg.t_f, cfg.reason_max)
        self.sparse_indices = select_sparse_layers(cfg.enc_layers, cfg.bridge_interval)
        self.history_init = True
        self._pos_bridge = waypoint_positions(cfg.t_f, cfg.bridge_width)
        max_seq = cfg.reason_max + cfg.t_f + 3
        self._pos_dec = waypoint_positions(max_seq, cfg.enc_width)
        if store is None:
            store = ParamStore(cfg.param_seed)
            self._build_params(store)
        self.store = store

    # -- parameter layout ----------------------------------------------------

    def _build_params(self, p: ParamStore):
        cfg = self.cfg
        w, bw, dw = cfg.enc_width, cfg.bridge_width, cfg.enc_width

        p.create("ctx.embed.w", (N_FEAT, w))
        p.create("ctx.embed.b", (w,), init="zeros")
        p.create("ctx.type_emb", (N_TYPES, w), init="fan_in", fan_in=w)

        def attn_block(prefix, wq_in, kv_in, width):
            p.create(f"{prefix}.wq", (wq_in, width))
            p.create(f"{prefix}.bq", (width,), init="zeros")
            p.create(f"{prefix}.wk", (kv_in, width))
            p.create(f"{prefix}.bk", (width,), init="zeros")
            p.create(f"{prefix}.wv", (kv_in, width))
            p.create(f"{prefix}.bv", (width,), init="zeros")
            p.create(f"{prefix}.wo", (width, width))
            p.create(f"{prefix}.bo", (width,), init="zeros")

        def mlp_block(prefix, width, hidden):
            p.create(f"{prefix}.wg", (width, hidden))
            p.create(f"{prefix}.bg", (hidden,), init="zeros")
            p.create(f"{prefix}.wu", (width, hidden))
            p.create(f"{prefix}.bu", (hidden,), init="zeros")
            p.create(f"{prefix}.wd", (hidden, width))
            p.create(f"{prefix}.bd", (width,), init="zeros")

        def ln_block(prefix, width):
            p.create(f"{prefix}.g", (width,), init="ones")
            p.create(f"{prefix}.b", (width,), init="zeros")

        for i in range(cfg.enc_layers):
            ln_block(f"enc.L{i}.ln1", w)
            attn_block(f"enc.L{i}.attn", w, w, w)
            ln_block(f"enc.L{i}.ln2", w)
            mlp_block(f"enc.L{i}.mlp", w, cfg.enc_mlp_hidden)

        n_hist_feat = (cfg.t_h + 1) * 4
        p.create("hist.w1", (n_hist_feat, cfg.hist_hidden))
        p.create("hist.b1", (cfg.hist_hidden,), init="zeros")
        p.create("hist.skip", (n_hist_feat, cfg.t_f * 2))
        p.create("hist.w2", (cfg.hist_hidden, cfg.t_f * 2), init="zeros")
        p.create("hist.wq", (cfg.hist_hidden, cfg.t_f * bw))
        p.create("hist.bq", (cfg.t_f * bw,), init="zeros")

        p.create("vf.in_w", (2, bw))
        p.create("vf.in_b", (bw,), init="zeros")
        p.create("vf.time_w", (2 * N_TIME_FREQ, bw))
        p.create("vf.time_b", (bw,), init="zeros")
        for j in range(len(self.sparse_indices)):
            ln_block(f"bridge.L{j}.lnq", bw)
            attn_block(f"bridge.L{j}.attn", bw, w, bw)
            ln_block(f"bridge.L{j}.ln2", bw)
            mlp_block(f"bridge.L{j}.mlp", bw, cfg.bridge_mlp_hidden)
        ln_block("vf.ln_f", bw)
        p.create("vf.out_w", (bw, 2), init="zeros")
        p.create("vf.out_b", (2,), init="zeros")

        p.create("dec.tok_emb", (self.vocab.size + 1, dw), init="fan_in", fan_in=dw)
        for i in range(cfg.dec_layers):
            ln_block(f"dec.L{i}.ln1", dw)
            attn_block(f"dec.L{i}.self", dw, dw, dw)
            ln_block(f"dec.L{i}.lnx", dw)
            attn_block(f"dec.L{i}.cross", dw, w, dw)
            ln_block(f"dec.L{i}.ln2", dw)
            mlp_block(f"dec.L{i}.mlp", dw, cfg.dec_mlp_hidden)
        ln_block("dec.ln_f", dw)
        p.create("dec.out_w", (dw, self.vocab.size), init="zeros")
        p.create("dec.out_b", (self.vocab.size,), init="zeros")

    def backbone_params(self) -> list:
        return [n for n in self.store.names() if n.startswith(BACKBONE_PREFIXES)]

    def expert_params(self) -> list:
        return [n for n in self.store.names() if n.startswith(EXPERT_PREFIXES)]

    def _p(self, tape, name):
        return tape.param(self.store, name) if tape is not None else self.store[name]

    # -- context encoder ------------------------------------------------------

    def _ln(self, tape, x, prefix):
        return layer_norm(tape, x, self._p(tape, f"{prefix}.g"), self._p(tape, f"{prefix}.b"))

    def _mlp(self, tape, x, prefix):
        return gated_mlp(
            tape, x,
            self._p(tape, f"{prefix}.wg"), self._p(tape, f"{prefix}.bg"),
            self._p(tape, f"{prefix}.wu"), self._p(tape, f"{prefix}.bu"),
            self._p(tape, f"{prefix}.wd"), self._p(tape, f"{prefix}.bd"),
        )

    def encode_context(
        self, scenario: Scenario, reason_tags=None, tape=None, pad_to: int | None = None
    ) -> EncodedContext:
        """Run the encoder and record each layer's key/value cache."""
        cfg = self.cfg
        feats, types = build_context_features(scenario, reason_tags, cfg)
        n_real = feats.shape[0]
        if pad_to is not None:
            if pad_to < n_real or pad_to > cfg.max_context:
                raise ValueError(f"pad_to {pad_to} out of range for {n_real} tokens")
            pad = pad_to - n_real
            feats = np.concatenate([feats, np.zeros((pad, N_FEAT))], axis=0)
            types = np.concatenate([types, np.full(pad, TYPE_PAD, dtype=np.int64)])
        n = feats.shape[0]
        key_mask = np.zeros((1, 1, n))
        key_mask[0, 0, n_real:] = NEG_INF

        x = add(
            tape,
            affine(tape, feats, self._p(tape, "ctx.embed.w"), self._p(tape, "ctx.embed.b")),
            embedding_lookup(tape, self._p(tape, "ctx.type_emb"), types),
        )
        caches = []
        for i in range(cfg.enc_layers):
            pre = f"enc.L{i}"
            hn = self._ln(tape, x, f"{pre}.ln1")
            q = affine(tape, hn, self._p(tape, f"{pre}.attn.wq"), self._p(tape, f"{pre}.attn.bq"))
            k = affine(tape, hn, self._p(tape, f"{pre}.attn.wk"), self._p(tape, f"{pre}.attn.bk"))
            v = affine(tape, hn, self._p(tape, f"{pre}.attn.wv"), self._p(tape, f"{pre}.attn.bv"))
            att = attention(tape, q, k, v, cfg.heads, mask=key_mask)
            x = add(tape, x, affine(tape, att, self._p(tape, f"{pre}.attn.wo"), self._p(tape, f"{pre}.attn.bo")))
            x = add(tape, x, self._mlp(tape, self._ln(tape, x, f"{pre}.ln2"), f"{pre}.mlp"))
            caches.append((k, v))

        return EncodedContext(
            caches=caches,
            key_mask=key_mask,
            n_tokens=n_real,
            ego_pose=scenario.ego_history.waypoints[-1].copy(),
            reason_tags=list(reason_tags or []),
        )

    # -- history embedding and the flow expert --------------------------------

    def history_features(self, history: Trajectory) -> np.ndarray:
        """Per-pose (x, y, heading, speed) relative to the history end, flat.

        Every component scales linearly with the approach speed on a straight
        constant-speed history, so the freshly initialized (linear) embedding
        is homogeneous in that speed."""
        end = history.waypoints[-1]
        speeds = history.speeds()
        rows = []
        for j in range(len(history)):
            xr, yr = _rel_point(end, history.waypoints[j, 0], history.waypoints[j, 1])
            hr = wrap_angle(history.waypoints[j, 2] - end[2])
            vj = speeds[min(max(j - 1, 0), speeds.size - 1)] if speeds.size else 0.0
            rows.append([xr, yr, hr, vj])
        return np.asarray(rows).reshape(-1)

    def embed_history(self, history: Trajectory, tape=None, noise: np.ndarray | None = None):
        """History anchors (t_f, 2) in action space plus per-waypoint query
        features; optionally jittered by a precomputed noise array."""
        cfg = self.cfg
        feats = self.history_features(history)[None, :]
        h = tanh(tape, affine(tape, feats, self._p(tape, "hist.w1"), self._p(tape, "hist.b1")))
        anchors = add(
            tape,
            matmul(tape, feats, self._p(tape, "hist.skip")),
            matmul(tape, h, self._p(tape, "hist.w2")),
        )
        anchors = reshape(tape, anchors, (cfg.t_f, 2))
        queries = reshape(
            tape,
            affine(tape, h, self._p(tape, "hist.wq"), self._p(tape, "hist.bq")),
            (cfg.t_f, cfg.bridge_width),
        )
        if not self.history_init:
            anchors = scale(tape, anchors, 0.0)
            queries = scale(tape, queries, 0.0)
        if noise is not None:
            anchors = add(tape, anchors, noise)
        return anchors, queries

    def vector_field(self, a_tau, tau: float, queries, ctx: EncodedContext, tape=None):
        """Velocity over the future waypoints given flow state and caches."""
        cfg = self.cfg
        x = affine(tape, a_tau, self._p(tape, "vf.in_w"), self._p(tape, "vf.in_b"))
        t_emb = affine(
            tape,
            time_features(tau, N_TIME_FREQ)[None, :],
            self._p(tape, "vf.time_w"),
            self._p(tape, "vf.time_b"),
        )
        x = add(tape, x, t_emb)
        x = add(tape, x, queries)
        x = add(tape, x, self._pos_bridge)
        for j, li in enumerate(self.sparse_indices):
            pre = f"bridge.L{j}"
            k_src, v_src = ctx.caches[li]
            xq = self._ln(tape, x, f"{pre}.lnq")
            q = affine(tape, xq, self._p(tape, f"{pre}.attn.wq"), self._p(tape, f"{pre}.attn.bq"))
            k = affine(tape, k_src, self._p(tape, f"{pre}.attn.wk"), self._p(tape, f"{pre}.attn.bk"))
            v = affine(tape, v_src, self._p(tape, f"{pre}.attn.wv"), self._p(tape, f"{pre}.attn.bv"))
            att = attention(tape, q, k, v, cfg.heads, mask=ctx.key_mask)
            x = add(tape, x, affine(tape, att, self._p(tape, f"{pre}.attn.wo"), self._p(tape, f"{pre}.attn.bo")))
            x = add(tape, x, self._mlp(tape, self._ln(tape, x, f"{pre}.ln2"), f"{pre}.mlp"))
        out = self._ln(tape, x, "vf.ln_f")
        return affine(tape, out, self._p(tape, "vf.out_w"), self._p(tape, "vf.out_b"))

    def reference_actions(self, scenario: Scenario) -> np.ndarray:
        """Ground-truth action array: future waypoint offsets in the ego frame."""
        pose0 = scenario.ego_history.waypoints[-1]
        ref = scenario.reference.positions[1 : self.cfg.t_f + 1]
        out = np.empty((ref.shape[0], 2))
        for i, (x, y) in enumerate(ref):
            out[i] = _rel_point(pose0, x, y)
        return out

    def actions_to_trajectory(self, actions: np.ndarray, ego_pose) -> Trajectory:
        """World-frame plan from action offsets; headings from differences."""
        x0, y0, psi0 = ego_pose
        c, s = math.cos(psi0), math.sin(psi0)
        xs = [x0]
        ys = [y0]
        for ax, ay in actions:
            xs.append(x0 + c * ax - s * ay)
            ys.append(y0 + s * ax + c * ay)
        return traj_from_xy(xs, ys, dt=self.cfg.dt, t0=0, heading0=psi0)

    def plan_flow(
        self, scenario: Scenario, reason_tags=None, steps: int | None = None,
        ctx: EncodedContext | None = None,
    ) -> Trajectory | None:
        """Integrate the learned field from the history anchors; None when the
        integration goes non-finite (invalid plan)."""
        if ctx is None:
            ctx = self.encode_context(scenario, reason_tags=reason_tags, tape=None)
        steps = steps if steps is not None else 5
        anchors, queries = self.embed_history(scenario.ego_history, tape=None)
        field = lambda a, tau: self.vector_field(a, tau, queries, ctx, tape=None)
        final = euler_flow(field, anchors, steps)
        if final is None:
            return None
        return self.actions_to_trajectory(final, ctx.ego_pose)

    # -- autoregressive token head --------------------------------------------

    def _decoder_hidden(self, tape, input_ids, ctx: EncodedContext):
        cfg = self.cfg
        n = len(input_ids)
        x = embedding_lookup(tape, self._p(tape, "dec.tok_emb"), np.asarray(input_ids))
        x = add(tape, x, self._pos_dec[:n])
        causal = _causal_mask(n)
        enc_k, enc_v = ctx.caches[-1]
        for i in range(cfg.dec_layers):
            pre = f"dec.L{i}"
            hn = self._ln(tape, x, f"{pre}.ln1")
            q = affine(tape, hn, self._p(tape, f"{pre}.self.wq"), self._p(tape, f"{pre}.self.bq"))
            k = affine(tape, hn, self._p(tape, f"{pre}.self.wk"), self._p(tape, f"{pre}.self.bk"))
            v = affine(tape, hn, self._p(tape, f"{pre}.self.wv"), self._p(tape, f"{pre}.self.bv"))
            att = attention(tape, q, k, v, cfg.heads, mask=causal)
            x = add(tape, x, affine(tape, att, self._p(tape, f"{pre}.self.wo"), self._p(tape, f"{pre}.self.bo")))
            hx = self._ln(tape, x, f"{pre}.lnx")
            qx = affine(tape, hx, self._p(tape, f"{pre}.cross.wq"), self._p(tape, f"{pre}.cross.bq"))
            kx = affine(tape, enc_k, self._p(tape, f"{pre}.cross.wk"), self._p(tape, f"{pre}.cross.bk"))
            vx = affine(tape, enc_v, self._p(tape, f"{pre}.cross.wv"), self._p(tape, f"{pre}.cross.bv"))
            attx = attention(tape, qx, kx, vx, cfg.heads, mask=ctx.key_mask)
            x = add(tape, x, affine(tape, attx, self._p(tape, f"{pre}.cross.wo"), self._p(tape, f"{pre}.cross.bo")))
            x = add(tape, x, self._mlp(tape, self._ln(tape, x, f"{pre}.ln2"), f"{pre}.mlp"))
        return self._ln(tape, x, "dec.ln_f")

    def ar_head_logits(self, ctx: EncodedContext, prefix, tape=None):
        """Logits over the vocabulary for the token following ``prefix``."""
        for t in prefix:
            if not 0 <= t < self.vocab.size:
                raise ValueError(f"token {t} outside vocabulary")
        input_ids = [self.vocab.bos_row] + list(prefix)
        h = self._decoder_hidden(tape, input_ids, ctx)
        logits = affine(tape, h, self._p(tape, "dec.out_w"), self._p(tape, "dec.out_b"))
        return logits[-1] if tape is None else logits

    def sequence_logprob(self, tokens, ctx: EncodedContext, tape=None, grammar: bool = True):
        """Sum of token log-probabilities of a complete sequence under the
        causal head; with ``grammar`` the distribution is the hard-masked one
        actually used for emission."""
        tokens = list(tokens)
        if grammar:
            self.vocab.validate(tokens)
        input_ids = [self.vocab.bos_row] + tokens[:-1]
        h = self._decoder_hidden(tape, input_ids, ctx)
        logits = affine(tape, h, self._p(tape, "dec.out_w"), self._p(tape, "dec.out_b"))
        mask = self.vocab.grammar_mask_rows(tokens) if grammar else None
        logp = log_softmax(tape, logits, mask=mask)
        picked = pick(tape, logp, np.arange(len(tokens)), np.asarray(tokens))
        return sum_(tape, picked)

    def sample_sequence(
        self, ctx: EncodedContext, rng: np.random.Generator | None = None,
        temperature: float = 1.0, greedy: bool = False,
    ) -> list:
        """Grammar-constrained ancestral sampling (or greedy decoding)."""
        if not greedy and rng is None:
            raise ValueError("sampling needs an rng; pass greedy=True for argmax")
        tokens: list = []
        max_len = self.vocab.reason_max + self.vocab.t_f + 2
        for _ in range(max_len):
            allowed = self.vocab.allowed_after(tokens)
            if not np.any(allowed):
                break
            logits = np.array(self.ar_head_logits(ctx, tokens, tape=None))
            logits[~allowed] = NEG_INF
            if greedy:
                tok = int(np.argmax(logits))
            else:
                z = logits / max(temperature, 1e-9)
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                tok = int(rng.choice(self.vocab.size, p=p))
            tokens.append(tok)
            if tok == self.vocab.eos:
                break
        self.vocab.validate(tokens)
        return tokens

    # -- end-to-end inference --------------------------------------------------

    def infer(
        self, scenario: Scenario, rng: np.random.Generator | None = None,
        greedy: bool = True, flow_steps: int = 5, planner: str = "flow",
    ) -> InferenceResult:
        """Reason with the token head, then plan.

        The token head decodes reasoning plus discrete action tokens from the
        scene context; the flow expert re-reads the context extended with the
        emitted reasoning and integrates the trajectory.
        """
        ctx = self.encode_context(scenario, reason_tags=None, tape=None)
        tokens = self.sample_sequence(ctx, rng=rng, greedy=greedy)
        tags, codes = self.vocab.split(tokens)
        ar_plan = detokenize(
            codes, self.codebook, start_pose=ctx.ego_pose, dt=self.cfg.dt, t0=0
        )
        flow_plan = self.plan_flow(scenario, reason_tags=tags, steps=flow_steps)
        plan = flow_plan if planner == "flow" else ar_plan
        return InferenceResult(
            plan=plan, tokens=tokens, reason_tags=tags, ar_plan=ar_plan, flow_plan=flow_plan
        )
