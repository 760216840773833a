"""Flat key=value run configuration with a closed, documented schema.

Files hold one "key = value" pair per line; '#' starts a comment. Every key
has a default, unknown keys are rejected, and writing then reloading a config
reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .trainer import ABLATION_MODES, PPOConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run identity
    seed: int = 0
    mode: str = "full"               # full | no_ac | no_lp | none
    out_dir: str = "runs/default"
    # datasets
    train_scenes: str = ""
    train_episodes: str = ""
    eval_scenes: str = ""
    eval_episodes: str = ""
    # optimization
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 4
    minibatches: int = 4
    learning_rate: float = 2.5e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lp_weight: float = 1.0
    classifier_weight: float = 1.0
    adversary_bound: float = 1.0
    total_episodes: int = 2000
    rollout_length: int = 128
    num_envs: int = 4
    optimizer: str = "adam"          # adam | sgd (plain-gradient reference)
    max_env_steps: int = 0           # 0 = no step cap
    checkpoint_every: int = 50       # updates between checkpoints
    # acoustics
    freq_bins: int = 16
    time_frames: int = 16
    ild_coefficient: float = 0.8
    dataset_seed: int = 0
    audio_snr_db: float | None = None   # None = noise-free
    depth_noise_std: float = 0.0
    # depth sensor
    ray_count: int = 16
    fov_deg: float = 90.0
    d_max: float = 10.0

    def __post_init__(self):
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"mode must be one of {ABLATION_MODES}, got {self.mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def ppo(self) -> PPOConfig:
        return PPOConfig(
            gamma=self.gamma, gae_lambda=self.gae_lambda, clip_eps=self.clip_eps,
            update_epochs=self.update_epochs, minibatches=self.minibatches,
            learning_rate=self.learning_rate, value_coef=self.value_coef,
            entropy_coef=self.entropy_coef, lp_weight=self.lp_weight,
            classifier_weight=self.classifier_weight,
            adversary_bound=self.adversary_bound, total_episodes=self.total_episodes,
            rollout_length=self.rollout_length, num_envs=self.num_envs,
            optimizer=self.optimizer, seed=self.seed)


_OPTIONAL_FLOATS = {"audio_snr_db"}


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    if name in _OPTIONAL_FLOATS:
        return None if raw in ("", "none") else float(raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {f.name: getattr(base, f.name) for f in fields(RunConfig)} if base else {}
    kinds = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "float | None": float}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, types[kinds[key]], raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = ""
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="ascii") as f:
        return parse_config(f.read(), base=base)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(config_to_text(cfg))
