import numpy as np
import pytest

from echonav.acoustics import AcousticConfig, build_signature_set
from echonav.scenes import generate_scene


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(3, 12, 12, 2, scene_id=0, split="train")


@pytest.fixture(scope="session")
def open_scene():
    return generate_scene(7, 10, 10, 1, scene_id=1, split="train")


@pytest.fixture(scope="session")
def acoustic_cfg():
    return AcousticConfig(freq_bins=8, time_frames=8)


@pytest.fixture(scope="session")
def signatures(acoustic_cfg):
    _, sigs = build_signature_set(0, acoustic_cfg.freq_bins, acoustic_cfg.time_frames)
    return sigs
