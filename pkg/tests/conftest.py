import numpy as np
import pytest

from mirrorfusion.config import EncoderConfig, TrainConfig
from mirrorfusion.data import synth_generate


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two 4-frame 64px synthetic videos, shared across tests."""
    root = tmp_path_factory.mktemp("data") / "videos"
    synth_generate(seed=7, n_videos=2, frames_per_video=4, size=64, out=root)
    return root


@pytest.fixture
def small_cfg():
    return TrainConfig(image_size=64, epochs=1, batch_size=2, lr=1e-4,
                       encoder=EncoderConfig(base_channels=8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
