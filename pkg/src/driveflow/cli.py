"""Command-line entry point wiring data generation, training, evaluation,
scoring, ablations, and the latency benchmark."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import yaml

from driveflow import ablate as ablate_mod
from driveflow import dataio, metrics
from driveflow.config import ModelConfig, RunConfig, load_config
from driveflow.evalloop import evaluate_model
from driveflow.microworld import ARCHETYPES, Trajectory
from driveflow.policy.model import PlanningModel
from driveflow.training import RftRecipe, bench_latency, run_rft, train_sft


class CliError(RuntimeError):
    pass


def _prepare_out_dir(path: str, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise CliError(f"output directory {path!r} exists and is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _write_run_config(cfg: RunConfig, out_dir: str) -> None:
    cfg.dump_yaml(os.path.join(out_dir, "config.yaml"))


def _load_model(checkpoint_path: str, cfg: RunConfig | None, allow_mismatch: bool):
    expected = cfg.config_hash() if cfg is not None else None
    store, codebook, header, opt_state = dataio.read_checkpoint(
        checkpoint_path, expected_config_hash=expected, allow_mismatch=allow_mismatch
    )
    if cfg is None:
        cfg = load_config(overrides=header["config"])
    model = PlanningModel(cfg.model, codebook, store=store)
    model.history_init = cfg.flow.history_init
    return model, cfg, header, opt_state


def _save_model(model: PlanningModel, cfg: RunConfig, out_dir: str, name: str = "checkpoint.txt", extra=None):
    path = os.path.join(out_dir, name)
    dataio.write_checkpoint(
        path, model.store, model.codebook, cfg.to_dict(), cfg.config_hash(), extra=extra
    )
    return path


def _parse_recipe(text: str) -> RftRecipe:
    fields = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, _, val = part.partition("=")
        fields[key.strip()] = int(val)
    try:
        return RftRecipe(
            warmup_count=fields.pop("warmup"),
            mixed={
                "positive": fields.pop("positive", 0),
                "negative": fields.pop("negative", 0),
                "recovery": fields.pop("recovery", 0),
            },
            seed=fields.pop("seed", 0),
        )
    except KeyError as e:
        raise CliError(f"recipe is missing field {e}") from e


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    archetypes = args.archetypes.split(",") if args.archetypes else list(ARCHETYPES)
    for a in archetypes:
        if a not in ARCHETYPES:
            raise CliError(f"unknown archetype {a!r}")
    n_neg = round(args.count * args.neg_frac)
    n_rec = round(args.count * args.rec_frac)
    n_pos = args.count - n_neg - n_rec
    scenarios = []
    i = 0
    from driveflow.microworld import generate_scenario

    for label, n in (("positive", n_pos), ("negative", n_neg), ("recovery", n_rec)):
        for _ in range(n):
            scenarios.append(
                generate_scenario(args.seed + i, archetypes[i % len(archetypes)], label)
            )
            i += 1
    dataio.write_dataset(scenarios, args.out)
    with open(args.out + ".meta.yaml", "w") as f:
        yaml.safe_dump(
            {
                "seed": args.seed,
                "count": args.count,
                "archetypes": archetypes,
                "neg_frac": args.neg_frac,
                "rec_frac": args.rec_frac,
                "labels": {"positive": n_pos, "negative": n_neg, "recovery": n_rec},
            },
            f,
        )
    print(f"wrote {len(scenarios)} scenarios to {args.out} "
          f"(pos {n_pos} / neg {n_neg} / rec {n_rec})")
    return 0


def cmd_train_sft(args) -> int:
    cfg = load_config(args.config)
    _prepare_out_dir(args.out, args.force)
    dataset = dataio.read_dataset(args.data)
    codebook = ablate_mod.build_codebook(cfg, [s for s in dataset if s.label == "positive"])
    model = PlanningModel(cfg.model, codebook)
    model.history_init = cfg.flow.history_init
    log_rows = []
    result = train_sft(model, dataset, cfg, on_log=log_rows.append)
    _write_run_config(cfg, args.out)
    dataio.write_jsonl(log_rows, os.path.join(args.out, "sft_log.jsonl"))
    path = _save_model(model, cfg, args.out, extra={"stage": "sft", "aborted": result.aborted})
    print(
        f"sft done: fm_loss {result.fm_initial:.4f} -> {result.fm_final:.4f}; "
        f"checkpoint {path}"
    )
    return 1 if result.aborted else 0


def cmd_train_rft(args) -> int:
    cfg = load_config(args.config) if args.config else None
    model, cfg, _, _ = _load_model(args.checkpoint, cfg, args.allow_config_mismatch)
    _prepare_out_dir(args.out, args.force)
    dataset = dataio.read_dataset(args.data)
    recipe = _parse_recipe(args.recipe)
    stream, notes = dataio.sample_recipe(dataset, recipe)
    log_rows = []
    run_rft(model, stream, cfg, on_log=lambda e: log_rows.append(e))
    _write_run_config(cfg, args.out)
    dataio.write_jsonl(log_rows, os.path.join(args.out, "rft_log.jsonl"))
    path = _save_model(model, cfg, args.out, extra={"stage": "rft", "recipe_notes": notes})
    rewards = [e["reward_mean"] for e in log_rows]
    print(
        f"rft done over {len(stream)} steps; reward first/last "
        f"{rewards[0]:.3f}/{rewards[-1]:.3f}; checkpoint {path}"
    )
    return 0


def cmd_eval(args) -> int:
    model, cfg, _, _ = _load_model(args.checkpoint, None, allow_mismatch=True)
    scenarios = dataio.read_dataset(args.data)
    rows, summary = evaluate_model(
        model,
        scenarios,
        cfg.metrics,
        planner=args.planner,
        flow_steps=cfg.flow.steps,
        sampled_match=args.sampled_match,
        match_delta=cfg.reward.delta,
    )
    agg = dataio.write_report(rows, args.report)
    with open(args.report + ".summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    key = "PDMS" if args.mode == "pdms" else "EPDMS"
    print(
        f"eval over {summary['n']} scenarios ({args.planner} planner): "
        f"{key} {agg[key]:.4f}  [flow {summary['pdms_flow']:.4f} / ar {summary['pdms_ar']:.4f}]"
    )
    return 0


def cmd_score(args) -> int:
    scenarios = {s.id: s for s in dataio.read_dataset(args.scenario_file)}
    rows = []
    for obj in dataio.read_jsonl(args.traj_file):
        sid = obj["id"]
        if sid not in scenarios:
            raise CliError(f"trajectory {sid!r} has no matching scenario")
        s = scenarios[sid]
        wp = np.array(obj["waypoints"], dtype=np.float64)
        traj = wp if wp.ndim != 2 or not np.all(np.isfinite(wp)) else Trajectory(
            wp, dt=obj.get("dt", s.reference.dt), t0=obj.get("t0", s.reference.t0)
        )
        rep = metrics.score(traj, s)
        rows.append(dataio.make_report_row(s, rep))
    agg = dataio.write_report(rows, args.report)
    print(f"scored {len(rows)} trajectories: PDMS {agg['PDMS']:.4f} EPDMS {agg['EPDMS']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    _prepare_out_dir(args.out, args.force)
    _write_run_config(cfg, args.out)
    log = []

    def on_log(row):
        log.append(row)
        print("  " + json.dumps(row))

    if args.kind == "layers":
        rows = ablate_mod.ablate_layers(cfg, args.data_seed, args.train_count, args.eval_count, on_log)
    elif args.kind == "history-init":
        seeds = [int(s) for s in args.seeds.split(",")]
        rows = ablate_mod.ablate_history_init(
            cfg, args.data_seed, args.train_count, args.eval_count, seeds, on_log
        )
    elif args.kind in ("recipe", "shaping"):
        train_set = ablate_mod.make_mixed_dataset(args.data_seed, args.train_count, 0.0, 0.0)
        rft_pool = ablate_mod.make_mixed_dataset(
            args.data_seed + 50_000, args.pool_count, 0.25, 0.25
        )
        eval_set = ablate_mod.make_mixed_dataset(args.data_seed + 90_000, args.eval_count)
        sft_model, _ = ablate_mod.train_base_model(cfg, train_set)
        if args.kind == "recipe":
            seeds = [int(s) for s in args.seeds.split(",")]
            rows = ablate_mod.ablate_recipe(
                cfg, sft_model, rft_pool, eval_set, args.mixed_count, args.warmup_count, seeds, on_log
            )
        else:
            rows = ablate_mod.ablate_shaping(
                cfg, sft_model, rft_pool, eval_set, args.mixed_count, args.warmup_count, on_log=on_log
            )
    else:
        raise CliError(f"unknown ablation kind {args.kind!r}")

    dataio.write_jsonl(rows, os.path.join(args.out, f"ablate_{args.kind}.jsonl"))
    _write_table(rows, os.path.join(args.out, f"ablate_{args.kind}.txt"))
    print(f"ablation {args.kind}: {len(rows)} arms -> {args.out}")
    return 0


def _write_table(rows, path):
    if not rows:
        with open(path, "w") as f:
            f.write("(no rows)\n")
        return
    cols = list(rows[0].keys())
    widths = [max(len(c), 12) for c in cols]
    with open(path, "w") as f:
        f.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)) + "\n")
        for r in rows:
            vals = [f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols]
            f.write("  ".join(v.ljust(w) for v, w in zip(vals, widths)) + "\n")


def cmd_bench_latency(args) -> int:
    model, cfg, _, _ = _load_model(args.checkpoint, None, allow_mismatch=True)
    counts = [int(c) for c in args.waypoints.split(",")]
    rows = bench_latency(model, counts, repeats=args.repeats, flow_steps=cfg.flow.steps)
    for r in rows:
        print(
            f"waypoints {r['waypoints']:3d}: ar {r['ar_median_s'] * 1e3:8.2f} ms "
            f"({r['ar_tokens']} tokens)  flow {r['flow_median_s'] * 1e3:8.2f} ms "
            f"({r['flow_steps']} steps)"
        )
    if args.out:
        dataio.write_jsonl(rows, args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driveflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a scenario dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--archetypes", default="")
    g.add_argument("--neg-frac", type=float, default=0.1)
    g.add_argument("--rec-frac", type=float, default=0.1)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train-sft", help="two-stage supervised training")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true")
    t.set_defaults(fn=cmd_train_sft)

    r = sub.add_parser("train-rft", help="GRPO reinforcement fine-tuning")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--recipe", required=True,
                   help="warmup=N,positive=N,negative=N,recovery=N,seed=N")
    r.add_argument("--config", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.add_argument("--allow-config-mismatch", action="store_true")
    r.set_defaults(fn=cmd_train_rft)

    e = sub.add_parser("eval", help="evaluate a checkpoint over a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--mode", choices=("pdms", "epdms"), default="pdms")
    e.add_argument("--planner", choices=("flow", "ar"), default="flow")
    e.add_argument("--sampled-match", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("score", help="score external trajectories against scenarios")
    s.add_argument("--traj-file", required=True)
    s.add_argument("--scenario-file", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(fn=cmd_score)

    a = sub.add_parser("ablate", help="run an ablation sweep")
    a.add_argument("--kind", choices=("recipe", "layers", "history-init", "shaping"), required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true")
    a.add_argument("--data-seed", type=int, default=0)
    a.add_argument("--train-count", type=int, default=140)
    a.add_argument("--eval-count", type=int, default=42)
    a.add_argument("--pool-count", type=int, default=200)
    a.add_argument("--mixed-count", type=int, default=120)
    a.add_argument("--warmup-count", type=int, default=50)
    a.add_argument("--seeds", default="0")
    a.set_defaults(fn=cmd_ablate)

    b = sub.add_parser("bench-latency", help="time both trajectory generators")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--waypoints", default="10,50")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", default=None)
    b.set_defaults(fn=cmd_bench_latency)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, dataio.DataFormatError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
