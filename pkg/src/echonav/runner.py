"""Wiring between run configs and the training / evaluation machinery.

Everything here is deterministic in the config seed: scene files are inputs,
and all remaining randomness (parameter init, rollout sampling, update
shuffling, observation noise) flows from named streams derived from it.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .acoustics import (HEARD_CATEGORIES, AcousticConfig, build_signature_set)
from .checkpoint import load_checkpoint, restore_into
from .config import RunConfig
from .gridworld import NavEnv
from .metrics import (OracleAgent, PolicyAgent, RandomAgent, evaluate,
                      probe_semantic_leakage)
from .policy import PolicyNetwork
from .scenes import load_scenes
from .seeding import stream, stream_seed
from .trainer import TrainState, ablation_modes, train
from .gridworld import load_episodes


def acoustic_config(cfg: RunConfig) -> AcousticConfig:
    return AcousticConfig(freq_bins=cfg.freq_bins, time_frames=cfg.time_frames,
                          ild_coefficient=cfg.ild_coefficient,
                          noise_snr_db=cfg.audio_snr_db, dataset_seed=cfg.dataset_seed)


def build_net(cfg: RunConfig, init_seed: int | None = None) -> PolicyNetwork:
    seed = stream_seed(cfg.seed, "policy-init") if init_seed is None else init_seed
    return PolicyNetwork(num_heard=len(HEARD_CATEGORIES), freq_bins=cfg.freq_bins,
                         time_frames=cfg.time_frames, ray_count=cfg.ray_count,
                         init_seed=seed)


def build_envs(cfg: RunConfig, scenes_path: str, episodes_path: str,
               signatures, n_envs: int, noise_stream: str = "train-noise") -> list[NavEnv]:
    scenes = {s.scene_id: s for s in load_scenes(scenes_path)}
    episodes = load_episodes(episodes_path)
    acfg = acoustic_config(cfg)
    fov = math.radians(cfg.fov_deg)
    noisy = cfg.audio_snr_db is not None or cfg.depth_noise_std > 0
    envs = []
    for i in range(n_envs):
        noise_rng = stream(cfg.seed, f"{noise_stream}-{i}") if noisy else None
        envs.append(NavEnv(scenes, episodes, signatures, acfg,
                           ray_count=cfg.ray_count, fov=fov, d_max=cfg.d_max,
                           depth_noise_std=cfg.depth_noise_std, noise_rng=noise_rng,
                           episode_offset=i, episode_stride=n_envs))
    return envs


def run_training(cfg: RunConfig, resume: str | None = None) -> dict:
    """Full training run per the config; returns paths and final counters."""
    if not cfg.train_scenes or not cfg.train_episodes:
        raise FileNotFoundError("config must set train_scenes and train_episodes")
    os.makedirs(cfg.out_dir, exist_ok=True)
    effective_seed, signatures = build_signature_set(
        cfg.dataset_seed, cfg.freq_bins, cfg.time_frames)
    envs = build_envs(cfg, cfg.train_scenes, cfg.train_episodes, signatures,
                      cfg.num_envs)
    net = build_net(cfg)
    state = TrainState()
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        restore_into(net, tensors)
        state.n = int(meta.get("n", 0))
        state.env_steps = int(meta.get("env_steps", 0))
    ppo = ablation_modes(cfg.ppo(), cfg.mode)
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    checkpoint_dir = os.path.join(cfg.out_dir, "checkpoints")
    state = train(ppo, envs, net, log_path, checkpoint_dir,
                  checkpoint_every=cfg.checkpoint_every,
                  max_env_steps=cfg.max_env_steps, state=state,
                  rollout_seed=stream_seed(cfg.seed, "rollout"),
                  update_seed=stream_seed(cfg.seed, "update"))
    return {"log": log_path, "checkpoint_dir": checkpoint_dir,
            "final_checkpoint": os.path.join(checkpoint_dir, "checkpoint_final.zip"),
            "episodes_completed": state.n, "env_steps": state.env_steps,
            "dataset_seed_effective": effective_seed, "net": net}


def load_net_from_checkpoint(path, cfg: RunConfig) -> PolicyNetwork:
    tensors, meta = load_checkpoint(path)
    num_heard = int(meta.get("num_heard", len(HEARD_CATEGORIES)))
    if num_heard != len(HEARD_CATEGORIES):
        raise ValueError(f"checkpoint trained with {num_heard} heard categories, "
                         f"this build defines {len(HEARD_CATEGORIES)}")
    net = PolicyNetwork(num_heard=num_heard,
                        freq_bins=int(meta.get("freq_bins", cfg.freq_bins)),
                        time_frames=int(meta.get("time_frames", cfg.time_frames)),
                        ray_count=int(meta.get("ray_count", cfg.ray_count)),
                        init_seed=0)
    restore_into(net, tensors)
    return net


def run_evaluation(cfg: RunConfig, agent_kind: str = "policy",
                   checkpoint: str | None = None, probe: bool = False) -> dict:
    """Greedy evaluation over the eval episode set, split heard/unheard."""
    if not cfg.eval_scenes or not cfg.eval_episodes:
        raise FileNotFoundError("config must set eval_scenes and eval_episodes")
    _, signatures = build_signature_set(cfg.dataset_seed, cfg.freq_bins, cfg.time_frames)
    scenes = load_scenes(cfg.eval_scenes)
    scenes_by_id = {s.scene_id: s for s in scenes}
    episodes = load_episodes(cfg.eval_episodes)
    acfg = acoustic_config(cfg)

    net = None
    if agent_kind == "policy":
        if checkpoint is None:
            raise ValueError("policy evaluation needs a checkpoint")
        net = load_net_from_checkpoint(checkpoint, cfg)

    def agent_factory():
        if agent_kind == "policy":
            return PolicyAgent(net, mode="greedy")
        if agent_kind == "random":
            return RandomAgent(stream(cfg.seed, "eval-random"))
        if agent_kind == "oracle":
            return OracleAgent()
        raise ValueError(f"unknown agent kind {agent_kind!r}")

    summaries, results = evaluate(
        agent_factory, scenes_by_id, episodes, signatures, acfg,
        depth_noise_std=cfg.depth_noise_std,
        noise_seed=stream_seed(cfg.seed, "eval-noise"))
    out = {"summaries": summaries, "results": results}
    if probe:
        if net is None:
            raise ValueError("probe requires a policy checkpoint")
        out["probe_accuracy"] = probe_semantic_leakage(
            net, scenes, signatures, acfg, seed=stream_seed(cfg.seed, "probe") % (1 << 31))
    return out


def summary_table(summaries) -> str:
    lines = ["split     SR      SPL     SNA     episodes"]
    for split in sorted(summaries):
        s = summaries[split]
        lines.append(f"{split:<9} {s.sr:<7.3f} {s.spl:<7.3f} {s.sna:<7.3f} {s.episode_count}")
    return "\n".join(lines)
