"""Run configuration: one plain-text file, `key = value` per line.

`#` starts a comment. Keys cover the scenario, propagation, phy, policy,
and training sections; unknown keys and malformed lines are rejected
with their line number. The full schema lives in docs/config.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import PropagationParams
from .env import CellFreeEnv
from .phy import PhyParams
from .policy import PolicySpec
from .scenario import ConfigError, ScenarioConfig
from .seeding import derive_rng
from .training import TrainConfig

_REQUIRED = object()


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_or_auto(s: str):
    return None if s.strip().lower() == "auto" else float(s)


# key -> (section, field, parser, default)
SCHEMA = {
    # scenario
    "num_aps": ("scenario", "num_aps", int, _REQUIRED),
    "num_ues": ("scenario", "num_ues", int, _REQUIRED),
    "se_target": ("scenario", "se_target", float, _REQUIRED),
    "rng_seed": ("scenario", "rng_seed", int, 1),
    "area_radius": ("scenario", "area_radius", float, 500.0),
    "ap_height": ("scenario", "ap_height", float, 10.0),
    "ue_height": ("scenario", "ue_height", float, 1.5),
    "mobility_class": ("scenario", "mobility_class", str, "pedestrian"),
    "pedestrian_speed_kmh": ("scenario", "pedestrian_speed_kmh", float, 1.0),
    "vehicular_speed_kmh": ("scenario", "vehicular_speed_kmh", float, 35.0),
    "slot_duration": ("scenario", "slot_duration", float, 0.005),
    "slots_per_window": ("scenario", "slots_per_window", int, 10),
    "travel_time_mean_s": ("scenario", "travel_time_mean_s", float, 10.0),
    "pause_probability": ("scenario", "pause_probability", float, 0.3),
    "pause_time_mean_s": ("scenario", "pause_time_mean_s", float, 5.0),
    "history_len": ("scenario", "history_len", int, 10),
    "episode_windows": ("scenario", "episode_windows", int, 200),
    "obs_probe_samples": ("scenario", "obs_probe_samples", int, 1000),
    # propagation
    "carrier_frequency_hz": ("propagation", "carrier_frequency", float, 9e9),
    "pathloss_exponent": ("propagation", "pathloss_exponent", float, 3.0),
    "reference_loss_db": ("propagation", "reference_loss_db", _parse_float_or_auto, None),
    "shadowing_sigma_db": ("propagation", "shadowing_sigma_db", float, 0.0),
    # phy
    "rho_d": ("phy", "rho_d", float, 1e6),
    "p_ap_w": ("phy", "p_ap", float, 0.2),
    "amp_efficiency": ("phy", "amp_efficiency", float, 0.4),
    "noise_power_w": ("phy", "noise_power", float, 8e-14),
    # policy network
    "embed_dim": ("policy", "embed_dim", int, 64),
    "gru_hidden": ("policy", "gru_hidden", int, 64),
    "rounds": ("policy", "rounds", int, 2),
    "use_rnn": ("policy", "use_rnn", _parse_bool, True),
    "include_self": ("policy", "include_self", _parse_bool, True),
    "tie_backbones": ("policy", "tie_backbones", _parse_bool, False),
    # monolithic baseline network
    "mlp_hidden": ("mlp", "hidden", int, 256),
    "mlp_layers": ("mlp", "layers", int, 2),
    # training
    "total_env_steps": ("train", "total_env_steps", int, 500_000),
    "num_parallel_envs": ("train", "num_parallel_envs", int, 8),
    "rollout_length": ("train", "rollout_length", int, 32),
    "ppo_update_iterations": ("train", "ppo_update_iterations", int, 10),
    "clip_epsilon": ("train", "clip_epsilon", float, 0.1),
    "learning_rate": ("train", "learning_rate", float, 0.001),
    "discount": ("train", "discount", float, 0.01),
    "gae_lambda": ("train", "gae_lambda", float, 0.95),
    "lambda_lr": ("train", "lambda_lr", float, 2.0),
    "initial_lambda": ("train", "initial_lambda", float, 0.0),
    "entropy_coef": ("train", "entropy_coef", float, 0.01),
    "grad_clip": ("train", "grad_clip", float, 1.0),
    "checkpoint_every": ("train", "checkpoint_every", int, 50),
    # pretraining
    "pretrain_windows": ("pretrain", "windows", int, 50_000),
    "pretrain_holdout_windows": ("pretrain", "holdout_windows", int, 5_000),
    "pretrain_epochs": ("pretrain", "epochs", int, 3),
    "pretrain_lr": ("pretrain", "lr", float, 0.001),
    "pretrain_batch_windows": ("pretrain", "batch_windows", int, 64),
    "pretrain_k": ("pretrain", "k", int, 4),
    # evaluation / benchmarking
    "eval_windows": ("run", "eval_windows", int, 2000),
    "bench_k": ("run", "bench_k", int, 1),
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    propagation: PropagationParams
    phy: PhyParams
    policy: PolicySpec
    train: TrainConfig
    mlp: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.scenario.rng_seed

    def env_factory(self, phase_offset: int = 0):
        """Environments draw their streams from the manifest seed plus a
        per-environment index (documented splitting rule)."""

        def factory(i: int) -> CellFreeEnv:
            return CellFreeEnv(self.scenario, propagation=self.propagation,
                               phy=self.phy, rng=derive_rng(self.seed, phase_offset + i))

        return factory

    def make_env(self, stream: int) -> CellFreeEnv:
        return CellFreeEnv(self.scenario, propagation=self.propagation,
                           phy=self.phy, rng=derive_rng(self.seed, stream))


def parse_config_text(text: str, path: str = "<config>") -> dict:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        _, _, parser, _ = SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}")
    return values


def build_config(values: dict, overrides: dict | None = None) -> RunConfig:
    merged = dict(values)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    sections: dict[str, dict] = {}
    resolved = {}
    for key, (section, fname, _parser, default) in SCHEMA.items():
        if key in merged:
            val = merged[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            val = default
        sections.setdefault(section, {})[fname] = val
        resolved[key] = val
    return RunConfig(
        scenario=ScenarioConfig(**sections["scenario"]),
        propagation=PropagationParams(**sections["propagation"]),
        phy=PhyParams(**sections["phy"]),
        policy=PolicySpec(**sections["policy"]),
        train=TrainConfig(**sections["train"]),
        mlp=sections.get("mlp", {}),
        pretrain=sections.get("pretrain", {}),
        run=sections.get("run", {}),
        raw=resolved,
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return build_config(parse_config_text(text, str(path)), overrides)
