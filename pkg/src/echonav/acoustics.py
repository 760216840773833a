"""Synthetic binaural audio: category signatures, attenuation, and level cues.

Each sound category owns a smooth nonnegative magnitude envelope. Rendering
scales it by a distance attenuation shared between ears and splits it with a
direction-dependent level difference, so the observation factorizes into a
semantic part (the envelope) and a spatial part (the gains). Loudness follows
the geodesic distance, the bearing the straight line; together they carry
both range and direction cues without a wave simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NUM_CATEGORIES = 12
HEARD_CATEGORIES = tuple(range(8))
UNHEARD_CATEGORIES = tuple(range(8, 12))
MIN_SIGNATURE_SEPARATION = 0.2

DEFAULT_FREQ_BINS = 16
DEFAULT_TIME_FRAMES = 16
DEFAULT_ILD = 0.8


@dataclass(frozen=True)
class AcousticConfig:
    freq_bins: int = DEFAULT_FREQ_BINS
    time_frames: int = DEFAULT_TIME_FRAMES
    ild_coefficient: float = DEFAULT_ILD   # in [0, 1): keeps both gains positive
    noise_snr_db: float | None = None      # None disables audio noise
    dataset_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ild_coefficient < 1.0:
            raise ValueError("ild_coefficient must be in [0, 1)")


@dataclass(eq=False)
class CategorySignature:
    category_id: int
    envelope: np.ndarray  # (F, T) nonnegative, unit mean


@dataclass(eq=False)
class BinauralSpectrogram:
    left: np.ndarray   # (F, T) nonnegative
    right: np.ndarray  # (F, T) nonnegative

    def flat(self) -> np.ndarray:
        """Both channels as one float32 vector (left rows then right rows)."""
        return np.concatenate([self.left.reshape(-1), self.right.reshape(-1)]).astype(np.float32)

    def energy(self) -> float:
        return float((self.left ** 2).sum() + (self.right ** 2).sum())


def make_signature(category_id: int, dataset_seed: int, freq_bins: int,
                   time_frames: int) -> CategorySignature:
    """Smooth pseudorandom envelope with category-specific temporal modulation.

    Deterministic in (category_id, dataset_seed); normalized to unit mean.
    """
    if freq_bins < 4 or time_frames < 4:
        raise ValueError("need at least 4 frequency bins and 4 time frames")
    rng = np.random.Generator(np.random.PCG64([dataset_seed, category_id]))
    freqs = np.arange(freq_bins)
    profile = np.zeros(freq_bins)
    for _ in range(3):
        center = rng.uniform(0, freq_bins - 1)
        width = rng.uniform(0.8, freq_bins / 3.0)
        profile += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((freqs - center) / width) ** 2)
    profile += 0.05
    t = np.arange(time_frames)
    rate = rng.uniform(0.5, 3.0)
    phase = rng.uniform(0, 2 * math.pi)
    modulation = 1.0 + rng.uniform(0.3, 0.9) * np.sin(2 * math.pi * rate * t / time_frames + phase)
    modulation = np.clip(modulation, 0.05, None)
    envelope = np.outer(profile, modulation)
    envelope *= 1.0 + 0.15 * rng.standard_normal((freq_bins, time_frames))
    envelope = np.clip(envelope, 0.0, None)
    envelope /= envelope.mean()
    return CategorySignature(category_id, envelope.astype(np.float32))


def signature_separation(a: CategorySignature, b: CategorySignature) -> float:
    """Relative distance between two envelopes (Frobenius, scale-normalized)."""
    na = float(np.linalg.norm(a.envelope))
    nb = float(np.linalg.norm(b.envelope))
    return float(np.linalg.norm(a.envelope - b.envelope)) / max(na, nb)


def build_signature_set(dataset_seed: int, freq_bins: int = DEFAULT_FREQ_BINS,
                        time_frames: int = DEFAULT_TIME_FRAMES,
                        num_categories: int = NUM_CATEGORIES,
                        max_reseeds: int = 50) -> tuple[int, list[CategorySignature]]:
    """All category signatures for a dataset seed, pairwise well separated.

    If any pair falls below the separation floor the whole set regenerates
    under the next derived seed; returns (effective_seed, signatures).
    """
    seed = dataset_seed
    for _ in range(max_reseeds):
        sigs = [make_signature(c, seed, freq_bins, time_frames) for c in range(num_categories)]
        ok = all(signature_separation(sigs[i], sigs[j]) >= MIN_SIGNATURE_SEPARATION
                 for i in range(num_categories) for j in range(i + 1, num_categories))
        if ok:
            return seed, sigs
        seed += 1000003
    raise RuntimeError(f"no separated signature set near seed {dataset_seed}")


def render(sig: CategorySignature, geodesic_dist: float, yaw: float, pitch: float,
           cfg: AcousticConfig) -> BinauralSpectrogram:
    """Binaural magnitudes for a source at the given range and direction.

    Attenuation 1/(1 + distance) hits both ears; the level split is
    0.5 * (1 +/- k * cos(pitch) * sin(yaw)), so the two gains always sum to 1
    and the left ear is louder exactly when the source is on the left.
    """
    if geodesic_dist < 0:
        raise ValueError("distance must be nonnegative")
    attenuation = 1.0 / (1.0 + geodesic_dist)
    lateral = cfg.ild_coefficient * math.cos(pitch) * math.sin(yaw)
    gain_left = 0.5 * (1.0 + lateral)
    gain_right = 0.5 * (1.0 - lateral)
    return BinauralSpectrogram(
        left=(attenuation * gain_left * sig.envelope).astype(np.float32),
        right=(attenuation * gain_right * sig.envelope).astype(np.float32))


def add_noise(spec: BinauralSpectrogram, snr_db: float,
              rng: np.random.Generator) -> BinauralSpectrogram:
    """Gaussian perturbation at a target signal-to-noise ratio in dB.

    Noise power is set from the pre-clamp signal power; negative magnitudes
    are clamped to zero afterwards. snr_db = inf returns the input untouched.
    """
    if math.isinf(snr_db):
        return spec
    signal_power = float((spec.left ** 2).mean() + (spec.right ** 2).mean()) / 2.0
    if signal_power <= 0.0:
        raise ValueError("cannot add relative noise to a zero-energy spectrogram")
    sigma = math.sqrt(signal_power / (10.0 ** (snr_db / 10.0)))
    noisy = []
    for channel in (spec.left, spec.right):
        noise = rng.normal(0.0, sigma, size=channel.shape)
        noisy.append(np.clip(channel + noise, 0.0, None).astype(np.float32))
    return BinauralSpectrogram(left=noisy[0], right=noisy[1])


def add_depth_noise(depth: np.ndarray, stddev: float, rng: np.random.Generator,
                    d_max: float) -> np.ndarray:
    """Per-ray Gaussian perturbation, clipped back into [0, d_max]."""
    if stddev == 0.0:
        return depth
    noisy = depth + rng.normal(0.0, stddev, size=depth.shape)
    return np.clip(noisy, 0.0, d_max).astype(np.float32)


# --- line-delimited export (inspection only) ---------------------------------
# header: "signature <category_id> <F> <T> <dataset_seed>", then F rows of T
# magnitudes


def signatures_to_text(sigs: list[CategorySignature], dataset_seed: int) -> str:
    lines = []
    for s in sigs:
        f_bins, t_frames = s.envelope.shape
        lines.append(f"signature {s.category_id} {f_bins} {t_frames} {dataset_seed}")
        for row in s.envelope:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_signatures(path, sigs: list[CategorySignature], dataset_seed: int) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(signatures_to_text(sigs, dataset_seed))
