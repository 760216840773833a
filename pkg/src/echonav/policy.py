"""Recurrent actor-critic network with two auxiliary heads.

Audio and depth observations are encoded by small MLPs, fused with a one-hot
of the previous action, and advanced through a gated recurrent core whose
output feeds the actor, the critic, and the direction-prediction head. The
category-classifier head reads the audio embedding through a gradient
reversal layer, so its training signal pushes the audio encoder away from
category-specific features while the classifier itself keeps trying to
recover them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gridworld import NUM_ACTIONS

AUDIO_EMBED = 64
VISUAL_EMBED = 32
CORE_WIDTH = 128
AUDIO_HIDDEN = 128
VISUAL_HIDDEN = 64
HEAD_HIDDEN = 64


def adversary_weight(completed: int, total: int, bound: float) -> float:
    """Sigmoid ramp of the reversal strength from 0 toward bound over training.

    completed counts finished episodes, total the planned budget. The value is
    0 at the start, nondecreasing, and approaches (never reaches) bound.
    """
    if total <= 0:
        raise ValueError("total episode budget must be positive")
    if not 0 <= completed <= total:
        raise ValueError(f"completed={completed} outside [0, {total}]")
    progress = completed / total
    return 2.0 * bound / (1.0 + math.exp(-10.0 * progress)) - bound


def decode_angle(sin_pred: float, cos_pred: float) -> float:
    """Angle in radians from a (sin, cos) pair, normalized to unit length.

    Diagnostic only; training losses act on the raw pair.
    """
    norm = math.hypot(sin_pred, cos_pred)
    if norm == 0.0:
        raise ValueError("cannot decode a zero (sin, cos) pair")
    return math.atan2(sin_pred / norm, cos_pred / norm)


@dataclass
class PolicyOutput:
    action_logits: Tensor   # (B, 4)
    value: Tensor           # (B,)
    class_logits: Tensor    # (B, C_heard)
    angle_pred: Tensor      # (B, 4): sin/cos of yaw, sin/cos of pitch
    hidden: Tensor          # (B, CORE_WIDTH)


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                 gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class PolicyNetwork:
    """All learnable tensors plus the forward pass that ties them together."""

    def __init__(self, num_heard: int, freq_bins: int, time_frames: int,
                 ray_count: int, init_seed: int):
        self.num_heard = num_heard
        self.freq_bins = freq_bins
        self.time_frames = time_frames
        self.ray_count = ray_count
        self.audio_dim = 2 * freq_bins * time_frames
        self.fused_dim = AUDIO_EMBED + VISUAL_EMBED + NUM_ACTIONS
        rng = np.random.Generator(np.random.PCG64(init_seed))
        self._params: dict[str, Tensor] = {}

        def param(name, arr):
            t = Tensor(arr, requires_grad=True)
            self._params[name] = t
            return t

        def mlp(prefix, dims, out_gain=1.0):
            for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
                gain = out_gain if i == len(dims) - 2 else 1.0
                param(f"{prefix}.w{i}", _linear_init(rng, d_in, d_out, gain))
                param(f"{prefix}.b{i}", np.zeros(d_out, dtype=np.float32))

        mlp("audio_encoder", [self.audio_dim, AUDIO_HIDDEN, AUDIO_EMBED])
        mlp("visual_encoder", [ray_count, VISUAL_HIDDEN, VISUAL_EMBED])
        param("core.wx", _linear_init(rng, self.fused_dim, 3 * CORE_WIDTH))
        param("core.wh", _linear_init(rng, CORE_WIDTH, 3 * CORE_WIDTH))
        param("core.b", np.zeros(3 * CORE_WIDTH, dtype=np.float32))
        param("actor.w", _linear_init(rng, CORE_WIDTH, NUM_ACTIONS, gain=0.01))
        param("actor.b", np.zeros(NUM_ACTIONS, dtype=np.float32))
        param("critic.w", _linear_init(rng, CORE_WIDTH, 1))
        param("critic.b", np.zeros(1, dtype=np.float32))
        mlp("audio_classifier", [AUDIO_EMBED, HEAD_HIDDEN, HEAD_HIDDEN, HEAD_HIDDEN, num_heard])
        mlp("location_predictor", [CORE_WIDTH, HEAD_HIDDEN, HEAD_HIDDEN, HEAD_HIDDEN, 4])

    # -- parameter access --------------------------------------------------

    def parameter_items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def group_items(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n.startswith(prefix + ".")]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def initial_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, CORE_WIDTH), dtype=np.float32)

    # -- submodules ---------------------------------------------------------

    def _mlp(self, prefix: str, x: Tensor, n_layers: int, final_relu: bool) -> Tensor:
        h = x
        for i in range(n_layers):
            h = ad.add(ad.matmul(h, self._params[f"{prefix}.w{i}"]),
                       self._params[f"{prefix}.b{i}"])
            if i + 1 < n_layers or final_relu:
                h = ad.relu(h)
        return h

    def encode_audio(self, audio_flat: Tensor) -> Tensor:
        return self._mlp("audio_encoder", audio_flat, 2, final_relu=True)

    def encode_depth(self, depth: Tensor) -> Tensor:
        return self._mlp("visual_encoder", depth, 2, final_relu=True)

    def classify(self, audio_embed: Tensor) -> Tensor:
        return self._mlp("audio_classifier", audio_embed, 4, final_relu=False)

    def predict_direction(self, core_out: Tensor) -> Tensor:
        return self._mlp("location_predictor", core_out, 4, final_relu=False)

    def core_step(self, fused: Tensor, hidden: Tensor) -> Tensor:
        """One gated recurrent update: update/reset gates plus candidate state."""
        w = CORE_WIDTH
        gx = ad.matmul(fused, self._params["core.wx"])
        gh = ad.matmul(hidden, self._params["core.wh"])
        b = self._params["core.b"]

        def part(t, i, axis=1):
            return ad.slice_(t, i * w, (i + 1) * w, axis=axis)

        z = ad.sigmoid(ad.add(ad.add(part(gx, 0), part(gh, 0)), part(b, 0, axis=0)))
        r = ad.sigmoid(ad.add(ad.add(part(gx, 1), part(gh, 1)), part(b, 1, axis=0)))
        # reset gate rescales the recurrent contribution to the candidate
        gated = ad.matmul(ad.multiply(r, hidden), self._params["core.wh"])
        cand = ad.tanh(ad.add(ad.add(part(gx, 2), part(gated, 2)), part(b, 2, axis=0)))
        keep = ad.sub(Tensor(np.ones_like(z.data)), z)
        return ad.add(ad.multiply(keep, hidden), ad.multiply(z, cand))

    # -- forward / act -------------------------------------------------------

    def forward(self, depth: np.ndarray, audio_flat: np.ndarray,
                prev_action_onehot: np.ndarray, hidden: Tensor | np.ndarray,
                adversary_weight: float) -> PolicyOutput:
        """Advance the recurrent state one step and evaluate every head.

        Inputs are batched row-wise; hidden is the recurrent state from the
        previous step (zeros at an episode start). adversary_weight only
        shapes the backward pass of the classifier path; forward outputs are
        identical for any value.
        """
        if not isinstance(hidden, Tensor):
            hidden = Tensor(hidden)
        audio_embed = self.encode_audio(Tensor(np.asarray(audio_flat, dtype=np.float32)))
        depth_embed = self.encode_depth(Tensor(np.asarray(depth, dtype=np.float32)))
        fused = ad.concat(
            [audio_embed, depth_embed,
             Tensor(np.asarray(prev_action_onehot, dtype=np.float32))], axis=1)
        core = self.core_step(fused, hidden)
        logits = ad.add(ad.matmul(core, self._params["actor.w"]), self._params["actor.b"])
        value = ad.reshape(
            ad.add(ad.matmul(core, self._params["critic.w"]), self._params["critic.b"]),
            (core.shape[0],))
        class_logits = self.classify(ad.grad_reverse(audio_embed, adversary_weight))
        angle_pred = self.predict_direction(core)
        return PolicyOutput(logits, value, class_logits, angle_pred, core)


def act(action_logits: np.ndarray, rng: np.random.Generator | None,
        mode: str = "sample") -> tuple[int, float]:
    """Pick an action from one row of logits; returns (action index, log-prob).

    sample draws from the softmax distribution; greedy takes the argmax with
    lowest-index tie-break.
    """
    logits = np.asarray(action_logits, dtype=np.float64).reshape(-1)
    shifted = logits - logits.max()
    p = np.exp(shifted)
    p /= p.sum()
    if mode == "greedy":
        a = int(np.argmax(logits))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        a = int(rng.choice(len(p), p=p))
    else:
        raise ValueError(f"unknown act mode: {mode!r}")
    return a, float(np.log(p[a]))
