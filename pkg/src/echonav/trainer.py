"""PPO training with jointly optimized auxiliary heads.

Rollouts are collected with frozen parameters across parallel environment
instances, then every update epoch minimizes the clipped surrogate, value
error, entropy bonus, the adversarial category loss (through the gradient
reversal layer), and the masked direction-regression loss in one optimizer
step per minibatch. The reversal strength follows a sigmoid ramp over
completed episodes.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .acoustics import HEARD_CATEGORIES
from .autodiff import Tensor
from .gridworld import NUM_ACTIONS, NavEnv
from .policy import CORE_WIDTH, PolicyNetwork, act, adversary_weight

ABLATION_MODES = ("full", "no_ac", "no_lp", "none")

LOG_COLUMNS = ("update", "env_steps", "n", "lambda", "sr_rolling",
               "loss_actor", "loss_value", "loss_entropy", "loss_C", "loss_P")


class TrainingAbort(RuntimeError):
    """Update produced a non-finite loss; message carries the dump."""


@dataclass
class PPOConfig:
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
    optimizer: str = "adam"   # "sgd" is the plain-gradient reference mode
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")


def ablation_modes(config: PPOConfig, mode: str) -> PPOConfig:
    """Zero out auxiliary-loss weights per ablation mode."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; pick one of {ABLATION_MODES}")
    if mode in ("no_ac", "none"):
        config = replace(config, classifier_weight=0.0)
    if mode in ("no_lp", "none"):
        config = replace(config, lp_weight=0.0)
    return config


@dataclass
class TrainState:
    n: int = 0                 # completed episodes, drives the reversal ramp
    env_steps: int = 0
    checkpoint_index: int = 0
    recent_success: deque = field(default_factory=lambda: deque(maxlen=100))

    def rolling_sr(self) -> float:
        if not self.recent_success:
            return 0.0
        return sum(self.recent_success) / len(self.recent_success)


@dataclass(eq=False)
class RolloutBuffer:
    """Per-step records for one collection phase, shaped (length, num_envs, ...)."""

    depth: np.ndarray
    audio: np.ndarray
    prev_onehot: np.ndarray
    hidden: np.ndarray
    actions: np.ndarray
    logprobs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    categories: np.ndarray
    angle_targets: np.ndarray
    at_source: np.ndarray
    last_values: np.ndarray

    @property
    def length(self) -> int:
        return self.depth.shape[0]

    @property
    def num_envs(self) -> int:
        return self.depth.shape[1]


def _angle_targets(yaw: float, pitch: float) -> np.ndarray:
    return np.array([np.sin(yaw), np.cos(yaw), np.sin(pitch), np.cos(pitch)],
                    dtype=np.float32)


def collect_rollout(envs: list[NavEnv], net: PolicyNetwork, state: TrainState,
                    length: int, rng: np.random.Generator,
                    observations: list | None = None,
                    hidden: np.ndarray | None = None) -> tuple[RolloutBuffer, list, np.ndarray]:
    """Step every environment `length` times with sampled actions.

    observations/hidden carry state between consecutive rollouts; pass None to
    reset all environments first. Returns the filled buffer plus the carried
    observations and hidden state for the next call.
    """
    n_envs = len(envs)
    if observations is None:
        observations = [env.reset() for env in envs]
        hidden = net.initial_hidden(n_envs)
    ray_count = envs[0].ray_count
    audio_dim = 2 * envs[0].cfg.freq_bins * envs[0].cfg.time_frames

    buf = RolloutBuffer(
        depth=np.zeros((length, n_envs, ray_count), dtype=np.float32),
        audio=np.zeros((length, n_envs, audio_dim), dtype=np.float32),
        prev_onehot=np.zeros((length, n_envs, NUM_ACTIONS), dtype=np.float32),
        hidden=np.zeros((length, n_envs, CORE_WIDTH), dtype=np.float32),
        actions=np.zeros((length, n_envs), dtype=np.int64),
        logprobs=np.zeros((length, n_envs), dtype=np.float32),
        values=np.zeros((length, n_envs), dtype=np.float32),
        rewards=np.zeros((length, n_envs), dtype=np.float32),
        dones=np.zeros((length, n_envs), dtype=bool),
        categories=np.zeros((length, n_envs), dtype=np.int64),
        angle_targets=np.zeros((length, n_envs, 4), dtype=np.float32),
        at_source=np.zeros((length, n_envs), dtype=bool),
        last_values=np.zeros(n_envs, dtype=np.float32),
    )

    for t in range(length):
        depth = np.stack([o.depth for o in observations])
        audio = np.stack([o.audio.flat() for o in observations])
        prev = np.stack([o.prev_action_onehot() for o in observations])
        buf.depth[t] = depth
        buf.audio[t] = audio
        buf.prev_onehot[t] = prev
        buf.hidden[t] = hidden
        for i, env in enumerate(envs):
            yaw, pitch = env.ground_truth_angles()
            buf.angle_targets[t, i] = _angle_targets(yaw, pitch)
            buf.at_source[t, i] = env.at_source()
            buf.categories[t, i] = env.episode.category_id

        out = net.forward(depth, audio, prev, hidden, adversary_weight=0.0)
        values = out.value.data
        logits = out.action_logits.data
        hidden = out.hidden.data.copy()

        for i, env in enumerate(envs):
            action, logprob = act(logits[i], rng, mode="sample")
            result = env.step(action)
            buf.actions[t, i] = action
            buf.logprobs[t, i] = logprob
            buf.values[t, i] = values[i]
            buf.rewards[t, i] = result.reward
            buf.dones[t, i] = result.done
            if result.done:
                state.n += 1
                state.recent_success.append(1.0 if result.info["success"] else 0.0)
                observations[i] = env.reset()
                hidden[i] = 0.0
            else:
                observations[i] = result.observation
        state.env_steps += n_envs

    depth = np.stack([o.depth for o in observations])
    audio = np.stack([o.audio.flat() for o in observations])
    prev = np.stack([o.prev_action_onehot() for o in observations])
    out = net.forward(depth, audio, prev, hidden, adversary_weight=0.0)
    buf.last_values[:] = out.value.data
    return buf, observations, hidden


def gae_advantages(buffer: RolloutBuffer, gamma: float,
                   gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with episode-boundary masking.

    Returns raw (unnormalized) advantages and the matching value targets;
    the update normalizes advantages across the whole buffer.
    """
    length, n_envs = buffer.rewards.shape
    advantages = np.zeros((length, n_envs), dtype=np.float64)
    running = np.zeros(n_envs, dtype=np.float64)
    next_values = buffer.last_values.astype(np.float64)
    for t in range(length - 1, -1, -1):
        nonterminal = 1.0 - buffer.dones[t].astype(np.float64)
        delta = (buffer.rewards[t] + gamma * next_values * nonterminal
                 - buffer.values[t])
        running = delta + gamma * gae_lambda * nonterminal * running
        advantages[t] = running
        next_values = buffer.values[t].astype(np.float64)
    advantages = advantages.astype(np.float32)
    returns = advantages + buffer.values
    return advantages, returns


@dataclass
class LossReport:
    actor: float
    value: float
    entropy: float
    classifier: float
    location: float

    def non_finite(self) -> bool:
        vals = (self.actor, self.value, self.entropy, self.classifier, self.location)
        return not np.all(np.isfinite(vals))


def assemble_loss(net: PolicyNetwork, cfg: PPOConfig, adv_weight: float,
                  depth, audio, prev, hidden, actions, old_logprobs,
                  advantages, returns, categories, angle_targets, at_source):
    """Forward one minibatch and build the combined objective on the tape.

    Returns (loss tensor, LossReport of the components).
    """
    out = net.forward(depth, audio, prev, Tensor(hidden), adversary_weight=adv_weight)
    batch = len(actions)
    onehot = np.zeros((batch, NUM_ACTIONS), dtype=np.float32)
    onehot[np.arange(batch), actions] = 1.0

    logp_all = ad.log_softmax(out.action_logits)
    logp = ad.sum_(ad.multiply(logp_all, Tensor(onehot)), axis=1)
    ratio = ad.exp(ad.sub(logp, Tensor(old_logprobs)))
    adv_t = Tensor(advantages)
    surrogate = ad.minimum(ad.multiply(ratio, adv_t),
                           ad.multiply(ad.clip(ratio, 1.0 - cfg.clip_eps,
                                               1.0 + cfg.clip_eps), adv_t))
    loss_actor = ad.scale(ad.mean(surrogate), -1.0)

    loss_value = ad.mse(out.value, Tensor(returns))

    probs = ad.softmax(out.action_logits)
    entropy = ad.scale(ad.mean(ad.sum_(ad.multiply(probs, logp_all), axis=1)), -1.0)

    loss = ad.add(ad.add(loss_actor, ad.scale(loss_value, cfg.value_coef)),
                  ad.scale(entropy, -cfg.entropy_coef))

    heard_set = set(HEARD_CATEGORIES)
    heard_mask = np.array([c in heard_set for c in categories])
    class_value = 0.0
    if heard_mask.all():
        loss_class = ad.cross_entropy(out.class_logits, categories)
        loss = ad.add(loss, ad.scale(loss_class, cfg.classifier_weight))
        class_value = float(loss_class.data)
    elif heard_mask.any():
        # select the heard rows with a constant 0/1 projection matrix
        rows = np.nonzero(heard_mask)[0]
        proj = np.zeros((len(rows), batch), dtype=np.float32)
        proj[np.arange(len(rows)), rows] = 1.0
        picked_logits = ad.matmul(Tensor(proj), out.class_logits)
        loss_class = ad.cross_entropy(picked_logits, categories[rows])
        loss = ad.add(loss, ad.scale(loss_class, cfg.classifier_weight))
        class_value = float(loss_class.data)

    valid = ~np.asarray(at_source)
    loc_value = 0.0
    if valid.any():
        mask = np.repeat(valid.astype(np.float32)[:, None], 4, axis=1)
        diff = ad.multiply(ad.sub(out.angle_pred, Tensor(angle_targets)), Tensor(mask))
        loss_loc = ad.scale(ad.sum_(ad.multiply(diff, diff)),
                            1.0 / (4.0 * float(valid.sum())))
        loss = ad.add(loss, ad.scale(loss_loc, cfg.lp_weight))
        loc_value = float(loss_loc.data)

    report = LossReport(actor=float(loss_actor.data), value=float(loss_value.data),
                        entropy=float(entropy.data), classifier=class_value,
                        location=loc_value)
    return loss, report


def ppo_update(net: PolicyNetwork, optimizer, buffer: RolloutBuffer, cfg: PPOConfig,
               adv_weight: float, rng: np.random.Generator) -> LossReport:
    """Run every update epoch over shuffled minibatches; one optimizer step each."""
    advantages, returns = gae_advantages(buffer, cfg.gamma, cfg.gae_lambda)
    flat = advantages.reshape(-1)
    normalized = ((flat - flat.mean()) / (flat.std() + 1e-8)).astype(np.float32)

    n = buffer.length * buffer.num_envs
    depth = buffer.depth.reshape(n, -1)
    audio = buffer.audio.reshape(n, -1)
    prev = buffer.prev_onehot.reshape(n, -1)
    hidden = buffer.hidden.reshape(n, -1)
    actions = buffer.actions.reshape(-1)
    old_logprobs = buffer.logprobs.reshape(-1)
    returns_flat = returns.reshape(-1)
    categories = buffer.categories.reshape(-1)
    angle_targets = buffer.angle_targets.reshape(n, 4)
    at_source = buffer.at_source.reshape(-1)

    reports = []
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, cfg.minibatches):
            net.zero_grads()
            with ad.Tape() as tape:
                loss, report = assemble_loss(
                    net, cfg, adv_weight,
                    depth[chunk], audio[chunk], prev[chunk], hidden[chunk],
                    actions[chunk], old_logprobs[chunk], normalized[chunk],
                    returns_flat[chunk], categories[chunk], angle_targets[chunk],
                    at_source[chunk])
                if report.non_finite():
                    raise TrainingAbort(f"non-finite loss components: {report}")
                tape.backward(loss)
            optimizer.step()
            reports.append(report)

    k = len(reports)
    return LossReport(
        actor=sum(r.actor for r in reports) / k,
        value=sum(r.value for r in reports) / k,
        entropy=sum(r.entropy for r in reports) / k,
        classifier=sum(r.classifier for r in reports) / k,
        location=sum(r.location for r in reports) / k,
    )


def train(cfg: PPOConfig, envs: list[NavEnv], net: PolicyNetwork,
          log_path, checkpoint_dir, checkpoint_every: int = 50,
          max_env_steps: int = 0, state: TrainState | None = None,
          rollout_seed: int | None = None, update_seed: int | None = None,
          on_update=None) -> TrainState:
    """Alternate collection and updates until the episode budget is spent.

    Writes one CSV log row per update and a checkpoint at a fixed update
    cadence plus at exit. Deterministic for a fixed config and seeds.
    """
    import os

    from .checkpoint import save_checkpoint

    state = state or TrainState()
    rollout_rng = np.random.Generator(np.random.PCG64(
        cfg.seed if rollout_seed is None else rollout_seed))
    update_rng = np.random.Generator(np.random.PCG64(
        cfg.seed + 1 if update_seed is None else update_seed))
    optimizer = ad.make_optimizer(cfg.optimizer, net.parameters(), cfg.learning_rate)

    os.makedirs(checkpoint_dir, exist_ok=True)

    def write_checkpoint(tag):
        meta = {"n": state.n, "total_episodes": cfg.total_episodes,
                "adversary_bound": cfg.adversary_bound,
                "env_steps": state.env_steps,
                "num_heard": net.num_heard, "freq_bins": net.freq_bins,
                "time_frames": net.time_frames, "ray_count": net.ray_count}
        save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_{tag}.zip"),
                        net.parameter_items(), meta)

    write_checkpoint("init")
    observations = None
    hidden = None
    update_index = 0
    with open(log_path, "w", newline="", encoding="ascii") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)
        while state.n < cfg.total_episodes and (
                max_env_steps <= 0 or state.env_steps < max_env_steps):
            buffer, observations, hidden = collect_rollout(
                envs, net, state, cfg.rollout_length, rollout_rng,
                observations, hidden)
            lam = adversary_weight(min(state.n, cfg.total_episodes),
                                   cfg.total_episodes, cfg.adversary_bound)
            report = ppo_update(net, optimizer, buffer, cfg, lam, update_rng)
            update_index += 1
            writer.writerow([update_index, state.env_steps, state.n, repr(lam),
                             repr(state.rolling_sr()), repr(report.actor),
                             repr(report.value), repr(report.entropy),
                             repr(report.classifier), repr(report.location)])
            if on_update is not None:
                on_update(update_index, state, net, report)
            if checkpoint_every > 0 and update_index % checkpoint_every == 0:
                state.checkpoint_index += 1
                write_checkpoint(f"{state.checkpoint_index:05d}")
    if update_index > 0:
        write_checkpoint("final")
    return state
