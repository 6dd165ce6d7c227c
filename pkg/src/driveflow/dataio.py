"""Persistence: line-delimited scenario datasets, structured-text checkpoints,
evaluation reports, and deterministic recipe sampling.

All files are text. Floats go through ``repr`` (shortest decimal that
round-trips float64 exactly), so parse(serialize(x)) is the identity and
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from driveflow.metrics import PDMS_COLUMNS, ScoreReport
from driveflow.microworld.world import (
    Obstacle,
    Scenario,
    Scene,
    TrafficLight,
    Trajectory,
)
from driveflow.nnkit import AdamState, ParamStore
from driveflow.policy.codebook import ActionCodebook
from driveflow.training.grpo import RftRecipe

SCENARIO_SCHEMA = 1
CHECKPOINT_SCHEMA = 1


class DataFormatError(ValueError):
    pass


def _atomic_write(path, write_fn):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        write_fn(f)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# scenario datasets
# ---------------------------------------------------------------------------


def _traj_to_obj(t: Trajectory) -> dict:
    return {"dt": t.dt, "t0": t.t0, "waypoints": t.waypoints.tolist()}


def _traj_from_obj(o: dict) -> Trajectory:
    return Trajectory(np.array(o["waypoints"], dtype=np.float64), dt=o["dt"], t0=o["t0"])


def scenario_to_obj(s: Scenario) -> dict:
    return {
        "id": s.id,
        "archetype": s.archetype,
        "label": s.label,
        "instruction": s.instruction,
        "reasoning_tags": list(s.reasoning_tags),
        "ego_history": _traj_to_obj(s.ego_history),
        "reference": _traj_to_obj(s.reference),
        "scene": {
            "drivable_area": [p.tolist() for p in s.scene.drivable_area],
            "lane_centerlines": [c.tolist() for c in s.scene.lane_centerlines],
            "route": s.scene.route.tolist(),
            "obstacles": [
                {
                    "kind": o.kind,
                    "length": o.length,
                    "width": o.width,
                    "trajectory": _traj_to_obj(o.trajectory),
                }
                for o in s.scene.obstacles
            ],
            "traffic_lights": [
                {
                    "stop_line": l.stop_line.tolist(),
                    "red_schedule": l.red_schedule.tolist(),
                }
                for l in s.scene.traffic_lights
            ],
        },
    }


def scenario_from_obj(o: dict) -> Scenario:
    sc = o["scene"]
    scene = Scene(
        drivable_area=[np.array(p) for p in sc["drivable_area"]],
        lane_centerlines=[np.array(c) for c in sc["lane_centerlines"]],
        obstacles=[
            Obstacle(
                trajectory=_traj_from_obj(ob["trajectory"]),
                length=ob["length"],
                width=ob["width"],
                kind=ob["kind"],
            )
            for ob in sc["obstacles"]
        ],
        traffic_lights=[
            TrafficLight(np.array(l["stop_line"]), np.array(l["red_schedule"]))
            for l in sc["traffic_lights"]
        ],
        route=np.array(sc["route"]),
    )
    return Scenario(
        id=o["id"],
        scene=scene,
        ego_history=_traj_from_obj(o["ego_history"]),
        reference=_traj_from_obj(o["reference"]),
        label=o["label"],
        instruction=o["instruction"],
        archetype=o["archetype"],
        reasoning_tags=list(o["reasoning_tags"]),
    )


def write_dataset(scenarios, path) -> None:
    scenarios = list(scenarios)

    def emit(f):
        f.write(json.dumps({"schema_version": SCENARIO_SCHEMA, "kind": "scenarios"}) + "\n")
        for s in scenarios:
            f.write(json.dumps(scenario_to_obj(s)) + "\n")
        f.write(json.dumps({"record_count": len(scenarios)}) + "\n")

    _atomic_write(path, emit)


def read_dataset(path) -> list:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCENARIO_SCHEMA or header.get("kind") != "scenarios":
        raise DataFormatError(f"{path}: unsupported header {header}")
    out = []
    trailer = None
    for i, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{i}: malformed line ({e})") from e
        if "record_count" in obj:
            trailer = obj["record_count"]
            break
        try:
            out.append(scenario_from_obj(obj))
        except (KeyError, ValueError) as e:
            raise DataFormatError(f"{path}:{i}: bad record ({e})") from e
    if trailer is None:
        raise DataFormatError(
            f"{path}: truncated file, last complete record is #{len(out)} "
            f"({out[-1].id if out else 'none'})"
        )
    if trailer != len(out):
        raise DataFormatError(f"{path}: trailer says {trailer} records, found {len(out)}")
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _fmt_floats(arr: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in arr.reshape(-1))


def write_checkpoint(
    path,
    store: ParamStore,
    codebook: ActionCodebook,
    config_dict: dict,
    config_hash: str,
    opt_state: AdamState | None = None,
    extra: dict | None = None,
) -> None:
    def emit(f):
        header = {
            "schema_version": CHECKPOINT_SCHEMA,
            "config_hash": config_hash,
            "config": config_dict,
            "store_seed": store.seed,
            "codebook": {
                "seed": codebook.seed,
                "k": codebook.k,
                "heading_weight": codebook.heading_weight,
            },
            "has_opt_state": opt_state is not None,
            "extra": extra or {},
        }
        f.write(json.dumps(header) + "\n")
        f.write(f"codebook {codebook.k} 3\n")
        f.write(_fmt_floats(codebook.centroids) + "\n")
        for name in store.names():
            arr = store[name]
            f.write(f"param {name} {' '.join(map(str, arr.shape))}\n")
            f.write(_fmt_floats(arr) + "\n")
        if opt_state is not None:
            f.write(f"opt_t {opt_state.t}\n")
            for kind, table in (("opt_m", opt_state.m), ("opt_v", opt_state.v)):
                for name, arr in table.items():
                    f.write(f"{kind} {name} {' '.join(map(str, arr.shape))}\n")
                    f.write(_fmt_floats(arr) + "\n")
        f.write("end\n")

    _atomic_write(path, emit)


def read_checkpoint(path, expected_config_hash: str | None = None, allow_mismatch: bool = False):
    """Returns (store, codebook, header, opt_state)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty checkpoint")
    header = json.loads(lines[0])
    if header.get("schema_version") != CHECKPOINT_SCHEMA:
        raise DataFormatError(f"{path}: unsupported checkpoint schema")
    if expected_config_hash is not None and header["config_hash"] != expected_config_hash:
        if not allow_mismatch:
            raise DataFormatError(
                f"{path}: config hash {header['config_hash']} does not match "
                f"{expected_config_hash}; pass the override flag to load anyway"
            )
    if lines[-1] != "end":
        raise DataFormatError(f"{path}: truncated checkpoint (no end marker)")

    i = 1
    if not lines[i].startswith("codebook "):
        raise DataFormatError(f"{path}: missing codebook block")
    _, k, dim = lines[i].split()
    vals = np.array(lines[i + 1].split(), dtype=np.float64).reshape(int(k), int(dim))
    codebook = ActionCodebook(
        centroids=vals,
        seed=header["codebook"]["seed"],
        heading_weight=header["codebook"]["heading_weight"],
    )
    i += 2

    store = ParamStore(header["store_seed"])
    opt_state = AdamState() if header.get("has_opt_state") else None
    while i < len(lines) and lines[i] != "end":
        fields = lines[i].split()
        tag = fields[0]
        if tag == "param":
            name = fields[1]
            shape = tuple(int(x) for x in fields[2:])
            arr = np.array(lines[i + 1].split(), dtype=np.float64).reshape(shape)
            store._arrays[name] = arr
            i += 2
        elif tag == "opt_t":
            opt_state.t = int(fields[1])
            i += 1
        elif tag in ("opt_m", "opt_v"):
            name = fields[1]
            shape = tuple(int(x) for x in fields[2:])
            arr = np.array(lines[i + 1].split(), dtype=np.float64).reshape(shape)
            getattr(opt_state, tag[-1])[name] = arr
            i += 2
        else:
            raise DataFormatError(f"{path}: unknown block {tag!r}")
    return store, codebook, header, opt_state


# ---------------------------------------------------------------------------
# recipe sampling
# ---------------------------------------------------------------------------


def sample_recipe(dataset, recipe: RftRecipe):
    """Deterministic (phase, scenario) stream: warm-up positives first, then a
    seed-shuffled label mix. Draws are without replacement when the pool
    allows, with replacement otherwise (flagged in the returned notes)."""
    rng = np.random.default_rng(recipe.seed)
    pools = {
        label: [s for s in dataset if s.label == label]
        for label in ("positive", "negative", "recovery")
    }
    notes = []

    def draw(label, count):
        pool = pools[label]
        if count == 0:
            return []
        if not pool:
            raise ValueError(f"recipe requests {label} samples but the dataset has none")
        replace = count > len(pool)
        if replace:
            notes.append(f"{label}: drawing {count} from {len(pool)} with replacement")
        idx = rng.choice(len(pool), size=count, replace=replace)
        return [pool[i] for i in idx]

    stream = [("warmup", s) for s in draw("positive", recipe.warmup_count)]
    mixed = []
    for label in ("positive", "negative", "recovery"):
        mixed.extend(draw(label, recipe.mixed.get(label, 0)))
    order = rng.permutation(len(mixed))
    stream.extend(("mixed", mixed[i]) for i in order)
    return stream, notes


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = tuple(c.upper() for c in PDMS_COLUMNS) + ("PDMS", "EPDMS")


def _report_row(scenario_id: str, label: str, archetype: str, report: ScoreReport, extra=None):
    row = {"id": scenario_id, "label": label, "archetype": archetype, "valid": report.valid}
    for c in PDMS_COLUMNS:
        row[c.upper()] = getattr(report.subscores, c)
    row["PDMS"] = report.pdms
    row["EPDMS"] = report.epdms
    if extra:
        row.update(extra)
    return row


def write_report(rows, path) -> dict:
    """Write per-scenario rows plus aggregate means as JSONL and as an aligned
    text table next to it; returns the aggregate row."""
    rows = list(rows)
    agg = {"id": "MEAN", "label": "-", "archetype": "-", "valid": True}
    for c in REPORT_COLUMNS:
        agg[c] = float(np.mean([r[c] for r in rows])) if rows else 0.0

    def emit(f):
        f.write(json.dumps({"kind": "eval_report", "columns": list(REPORT_COLUMNS)}) + "\n")
        for r in rows:
            f.write(json.dumps(r) + "\n")
        f.write(json.dumps({"aggregate": agg}) + "\n")

    _atomic_write(path, emit)

    txt_path = str(path) + ".txt"
    headers = ["id", "label"] + list(REPORT_COLUMNS)
    widths = [max(len(h), 24 if h == "id" else 8) for h in headers]

    def fmt_row(vals):
        return "  ".join(str(v)[: w].ljust(w) for v, w in zip(vals, widths))

    def emit_txt(f):
        f.write(fmt_row(headers) + "\n")
        for r in rows + [agg]:
            vals = [r["id"], r["label"]] + [
                f"{r[c]:.4f}" if isinstance(r[c], float) else r[c] for c in REPORT_COLUMNS
            ]
            f.write(fmt_row(vals) + "\n")

    _atomic_write(txt_path, emit_txt)
    return agg


def make_report_row(scenario, report: ScoreReport, extra=None) -> dict:
    return _report_row(scenario.id, scenario.label, scenario.archetype, report, extra)


def write_jsonl(rows, path) -> None:
    def emit(f):
        for r in rows:
            f.write(json.dumps(r) + "\n")

    _atomic_write(path, emit)


def read_jsonl(path) -> list:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
