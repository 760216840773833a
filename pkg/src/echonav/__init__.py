"""Desk-scale audio-visual navigation laboratory.

Procedural gridworld scenes with synthetic binaural audio, a minimal
reverse-mode autodiff engine, and a recurrent PPO agent trained jointly with
an adversarial category classifier (via gradient reversal) and a relative
direction predictor.
"""

__version__ = "0.1.0"

from .acoustics import (AcousticConfig, BinauralSpectrogram, CategorySignature,
                        HEARD_CATEGORIES, NUM_CATEGORIES, UNHEARD_CATEGORIES)
from .autodiff import Tape, Tensor, grad_reverse
from .gridworld import Action, AgentPose, Episode, NavEnv, ObservationBundle
from .policy import PolicyNetwork, adversary_weight, decode_angle
from .scenes import SceneGrid, generate_scene, geodesic_distance
from .trainer import PPOConfig, RolloutBuffer, TrainState

__all__ = [
    "AcousticConfig", "Action", "AgentPose", "BinauralSpectrogram",
    "CategorySignature", "Episode", "HEARD_CATEGORIES", "NUM_CATEGORIES",
    "NavEnv", "ObservationBundle", "PPOConfig", "PolicyNetwork",
    "RolloutBuffer", "SceneGrid", "Tape", "Tensor", "TrainState",
    "UNHEARD_CATEGORIES", "adversary_weight", "decode_angle",
    "generate_scene", "geodesic_distance", "grad_reverse",
]
