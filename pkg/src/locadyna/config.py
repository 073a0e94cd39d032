"""Experiment configuration, presets, and strict JSON loading.

A config file is a JSON object whose keys are ExperimentConfig field names;
the optional "preset" key selects the base defaults and the remaining keys
override them. Unknown keys are errors. Fields left null resolve to
variant-dependent defaults (reward proximity, detection debounce) when the
config is finalized; manifests always store the fully resolved form.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

AGENT_KINDS = ("reg", "pm_simple", "pm_scalable", "lofo")
ENVIRONMENTS = ("grid", "mountaincar")
VARIANTS = ("loca", "loca1", "loca2")


@dataclass
class ExperimentConfig:
    preset: str = "grid_desk"
    environment: str = "grid"
    variant: str = "loca"
    agent: str = "pm_scalable"
    grid_size: int = 12
    phase1_steps: int = 60_000
    phase2_steps: int = 120_000
    eval_interval: int = 2_000
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: list(range(10)))
    gamma: float = 0.99

    epsilon: float = 0.5
    value_lr: float = 1e-3
    q_hidden: list = field(default_factory=lambda: [48, 48])
    target_sync_period: int = 500
    planning_steps: int = 1
    planning_batch_size: int = 32

    model_lr: float = 1e-3
    model_learning_steps: int = 1
    model_batch_size: int = 32
    enc_hidden: list = field(default_factory=lambda: [32])
    body_hidden: list = field(default_factory=lambda: [32])
    head_hidden: list = field(default_factory=lambda: [16])
    buffer_capacity: int = 180_000
    update_period: int = 1

    bootstrap_steps: int = 3_000
    embed_dataset_steps: int | None = None
    rebootstrap_fraction: float = 0.1
    reward_proximity: float | None = None
    beta: float = 10.0
    embed_epochs: int = 4
    embed_batch_size: int = 32
    embed_negatives: int = 32
    embed_lr: float = 1e-3
    embed_hidden: list = field(default_factory=lambda: [32, 32])
    embed_dim: int = 16
    k_max: int = 6
    kmeans_restarts: int = 10
    elbow_threshold: float = 0.15
    classifier_hidden: list = field(default_factory=lambda: [32])
    classifier_epochs: int = 30
    classifier_lr: float = 1e-3
    anomaly_weight: float = 0.2
    debounce: int | None = None

    lofo_capacity: int = 20_000
    lofo_d_local: float | None = None
    lofo_n_local: int = 1

    stop_when_adapted: bool = False
    adapted_threshold: float = 0.9

    def finalize(self) -> "ExperimentConfig":
        """Fill variant-dependent defaults and validate."""
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.environment!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent {self.agent!r}")
        det = self.variant == "loca"
        if self.reward_proximity is None:
            self.reward_proximity = 0.5 if det else 0.75
        if self.debounce is None:
            self.debounce = 1 if det else 3
        if self.lofo_d_local is None:
            self.lofo_d_local = 0.001 if self.environment == "grid" else 0.005
        if self.phase1_steps <= 0 or self.phase2_steps <= 0:
            raise ConfigError("phase step budgets must be positive")
        if self.eval_interval <= 0 or (self.phase1_steps % self.eval_interval
                                       or self.phase2_steps % self.eval_interval):
            raise ConfigError("eval_interval must divide both phase budgets")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be at least 1")
        if self.bootstrap_steps <= 0:
            raise ConfigError("bootstrap_steps must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.buffer_capacity < 1 or self.lofo_capacity < 1:
            raise ConfigError("buffer capacities must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}

PRESETS: dict[str, dict] = {
    # 12x12 grid, 60k + 120k steps: the default desk-scale experiment.
    "grid_desk": {},
    # Small grid for smoke tests and CI-sized runs.
    "grid_quick": {
        "grid_size": 8,
        "phase1_steps": 4_000,
        "phase2_steps": 6_000,
        "eval_interval": 1_000,
        "eval_episodes": 5,
        "seeds": [0, 1],
        "buffer_capacity": 10_000,
        "bootstrap_steps": 800,
        "lofo_capacity": 4_000,
    },
    # MountainCar at the published scale. Slow: 4.5M steps per seed.
    "mountaincar_paper": {
        "environment": "mountaincar",
        "phase1_steps": 1_500_000,
        "phase2_steps": 3_000_000,
        "eval_interval": 10_000,
        "eval_episodes": 10,
        "seeds": [0, 1, 2, 3, 4],
        "value_lr": 5e-6,
        "q_hidden": [64, 64, 64, 64],
        "target_sync_period": 500,
        "planning_steps": 5,
        "planning_batch_size": 32,
        "model_lr": 5e-5,
        "model_learning_steps": 5,
        "model_batch_size": 32,
        "enc_hidden": [64, 64, 63],
        "body_hidden": [64, 64],
        "head_hidden": [64],
        "buffer_capacity": 4_500_000,
        "bootstrap_steps": 50_000,
        "embed_dataset_steps": 100_000,
        "embed_lr": 1e-4,
        "embed_negatives": 128,
        "embed_epochs": 5,
        "embed_hidden": [64, 64, 64],
        "lofo_capacity": 4_500_000,
        "lofo_d_local": 0.005,
    },
    # MountainCar shrunk to desk scale (mainly for cluster-discovery runs).
    "mountaincar_desk": {
        "environment": "mountaincar",
        "phase1_steps": 100_000,
        "phase2_steps": 200_000,
        "eval_interval": 5_000,
        "bootstrap_steps": 6_000,
        "buffer_capacity": 300_000,
        "embed_epochs": 3,
        "lofo_capacity": 20_000,
        "lofo_d_local": 0.005,
    },
}


def make_config(preset: str = "grid_desk", **overrides) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    merged = dict(PRESETS[preset])
    merged.update(overrides)
    unknown = set(merged) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(preset=preset, **{k: v for k, v in merged.items()
                                             if k != "preset"})
    return cfg.finalize()


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]   # accept a run manifest directly
    preset = data.pop("preset", "grid_desk")
    return make_config(preset, **data)
