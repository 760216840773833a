"""Command-line entry point: dataset generation, training, evaluation, checks.

Every command is deterministic given its arguments. Failures print a single
machine-parsable line "error: <category>: <message>" to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .acoustics import HEARD_CATEGORIES, NUM_CATEGORIES
from .config import ConfigError, RunConfig, load_config, save_config
from .gridworld import (EpisodeGenerationError, episode_is_valid,
                        generate_episodes, load_episodes, save_episodes)
from .scenes import (SceneGenerationError, generate_scene, load_scenes,
                     save_scenes)
from .seeding import stream_seed


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def cmd_gen_scenes(args) -> int:
    if os.path.exists(args.out) and not args.force:
        raise CliError("io", f"{args.out} exists; pass --force to overwrite")
    scenes = []
    for i in range(args.count):
        seed = stream_seed(args.seed, f"scene-{args.split}-{i}") % (1 << 31)
        scenes.append(generate_scene(seed, args.width, args.height, args.rooms,
                                     scene_id=args.start_id + i, split=args.split))
    for scene in scenes:
        scene.validate()
    save_scenes(args.out, scenes)
    print(f"wrote {len(scenes)} {args.split} scenes to {args.out}")
    return 0


def cmd_gen_episodes(args) -> int:
    if os.path.exists(args.out) and not args.force:
        raise CliError("io", f"{args.out} exists; pass --force to overwrite")
    scenes = load_scenes(args.scenes)
    categories = (list(HEARD_CATEGORIES) if args.split == "train"
                  else list(range(NUM_CATEGORIES)))
    episodes = []
    for scene in scenes:
        seed = stream_seed(args.seed, f"episodes-{args.split}") % (1 << 31)
        batch = generate_episodes(scene, args.per_scene, seed, categories)
        for episode in batch:
            if not episode_is_valid(scene, episode):
                raise CliError("data", f"generated episode failed validation in "
                                       f"scene {scene.scene_id}")
        episodes.extend(batch)
    save_episodes(args.out, episodes)
    print(f"wrote {len(episodes)} episodes ({args.split} categories) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .runner import run_training

    cfg = RunConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("mode", args.mode),
                                   ("out_dir", args.out_dir)) if v is not None}
    if overrides:
        cfg = RunConfig(**{**cfg.__dict__, **overrides})
    if args.config:
        cfg = load_config(args.config, base=cfg)  # config file wins over flags
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(os.path.join(cfg.out_dir, "resolved_config.txt"), cfg)
    outcome = run_training(cfg, resume=args.resume)
    print(f"trained {outcome['episodes_completed']} episodes "
          f"({outcome['env_steps']} env steps)")
    print(f"log: {outcome['log']}")
    print(f"final checkpoint: {outcome['final_checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import export_trajectory, results_to_text, summaries_to_csv
    from .runner import run_evaluation, summary_table
    from .scenes import load_scenes as _load

    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    cfg = RunConfig(**{**cfg.__dict__,
                       "eval_scenes": args.scenes or cfg.eval_scenes,
                       "eval_episodes": args.episodes or cfg.eval_episodes,
                       "audio_snr_db": args.snr_db if args.snr_db is not None else cfg.audio_snr_db,
                       "depth_noise_std": (args.depth_noise_std
                                           if args.depth_noise_std is not None
                                           else cfg.depth_noise_std),
                       "seed": args.seed if args.seed is not None else cfg.seed})
    os.makedirs(args.out_dir, exist_ok=True)
    outcome = run_evaluation(cfg, agent_kind=args.agent, checkpoint=args.checkpoint,
                             probe=args.probe)
    summaries_to_csv(outcome["summaries"], os.path.join(args.out_dir, "metrics.csv"))
    with open(os.path.join(args.out_dir, "results.txt"), "w", encoding="ascii") as f:
        f.write(results_to_text(outcome["results"]))
    if args.export_trajectories > 0:
        scenes_by_id = {s.scene_id: s for s in _load(cfg.eval_scenes)}
        episodes = load_episodes(cfg.eval_episodes)
        for i, result in enumerate(outcome["results"][:args.export_trajectories]):
            scene = scenes_by_id[episodes[i].scene_id]
            export_trajectory(result, scene,
                              os.path.join(args.out_dir, f"trajectory_{i:03d}.svg"))
    print(summary_table(outcome["summaries"]))
    if "probe_accuracy" in outcome:
        chance = 1.0 / len(HEARD_CATEGORIES)
        print(f"probe accuracy: {outcome['probe_accuracy']:.3f} (chance {chance:.3f})")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(seed=args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<28} max_rel_err={r.max_rel_err:.3e}  {status}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise CliError("gradcheck", f"{len(failed)} gradient checks failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echonav",
        description="Desk-scale audio-visual navigation lab: generate scenes "
                    "and episodes, train the recurrent PPO agent with its "
                    "auxiliary heads, evaluate, and verify gradients.")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded execution (always on; "
                             "flag kept for interface stability)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="write a procedural scene set")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--rooms", type=int, default=3)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-episodes", help="write episode sets for a scene file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-scene", type=int, default=100)
    p.add_argument("--split", choices=("train", "eval"), default="train",
                   help="train draws heard categories only; eval draws all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_episodes)

    p = sub.add_parser("train", help="run PPO training per a config file")
    p.add_argument("--config", help="key=value config file (overrides flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("full", "no_ac", "no_lp", "none"))
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline agent")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--scenes")
    p.add_argument("--episodes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--agent", choices=("policy", "random", "oracle"), default="policy")
    p.add_argument("--snr-db", type=float, help="audio noise level (e.g. 20/30/40/50)")
    p.add_argument("--depth-noise-std", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--probe", action="store_true",
                   help="also fit the category probe on frozen audio features")
    p.add_argument("--export-trajectories", type=int, default=0,
                   help="write SVG maps for the first N episodes")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


_ERROR_CATEGORIES = [
    (ConfigError, "config"),
    (SceneGenerationError, "scene-generation"),
    (EpisodeGenerationError, "episode-generation"),
    (FileNotFoundError, "io"),
    (PermissionError, "io"),
    (ValueError, "data"),
]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line reporting contract
        for kind, category in _ERROR_CATEGORIES:
            if isinstance(exc, kind):
                print(f"error: {category}: {exc}", file=sys.stderr)
                return 1
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
