"""Run configuration: every hyperparameter of every module, materialized with
explicit defaults, hashable into checkpoints, and loadable from a YAML file
with one section per module."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from driveflow.metrics import MetricsConfig


@dataclass
class ModelConfig:
    enc_layers: int = 8
    enc_width: int = 128
    heads: int = 4
    enc_mlp_hidden: int = 256
    dec_layers: int = 2
    dec_mlp_hidden: int = 256
    bridge_width: int = 64
    bridge_mlp_hidden: int = 128
    bridge_interval: int = 2
    hist_hidden: int = 64
    t_f: int = 10  # future horizon, steps of dt
    t_h: int = 4  # history horizon, steps of dt
    dt: float = 0.5
    max_context: int = 48
    reason_max: int = 8
    max_obstacles: int = 8
    param_seed: int = 0


@dataclass
class CodebookConfig:
    k: int = 256
    seed: int = 11
    heading_weight: float = 2.0  # meters-per-radian scale in the matching metric
    coverage_samples: int = 4096
    kmeans_iters: int = 60


@dataclass
class FlowConfig:
    steps: int = 5
    tau_shift: float = 0.0
    noise_std: float = 0.25  # anchor jitter during training, meters
    history_init: bool = True  # False: zero anchors (pure-noise-equivalent baseline)


@dataclass
class RewardConfig:
    benchmark_mode: str = "pdms"  # pdms | epdms
    lambda_n: float = 0.5
    lambda_r: float = 0.5
    lambda_c: float = 0.05
    delta: float = 2.0  # reference-matching distance threshold, meters
    l_tol: int = 4  # tolerated reasoning length, tokens
    gamma: float = 0.5  # reasoning-length sigmoid steepness
    kappa_align: float = 10.0  # fixed penalty replacing r_cot on misalignment


@dataclass
class SftConfig:
    stage1_steps: int = 1200
    stage2_steps: int = 2000
    batch_stage1: int = 8
    batch_stage2: int = 16
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-3
    seed: int = 0
    snapshot_every: int = 200
    log_every: int = 50


@dataclass
class RftConfig:
    group_size: int = 8
    lr: float = 3e-5
    beta: float = 0.01
    eps_clip: float = 0.2
    seed: int = 0
    log_every: int = 20


@dataclass
class EvalConfig:
    planner: str = "flow"  # flow | ar


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    rft: RftConfig = field(default_factory=RftConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump_yaml(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _apply_section(obj, values: dict, section: str):
    valid = {f.name for f in dataclasses.fields(obj)}
    for key, val in values.items():
        if key not in valid:
            raise KeyError(f"unknown option {section}.{key}")
        setattr(obj, key, type(getattr(obj, key))(val) if val is not None else None)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Materialize a full RunConfig from an optional YAML file plus overrides
    (a {section: {key: value}} mapping)."""
    cfg = RunConfig()
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    for source in (raw, overrides or {}):
        for section, values in source.items():
            if section not in _SECTIONS:
                raise KeyError(f"unknown config section {section!r}")
            if values:
                _apply_section(getattr(cfg, section), values, section)
    return cfg
