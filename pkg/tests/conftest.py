import numpy as np
import pytest

from ivseg.data import ToyVideoSpec, generate_toy_video
from ivseg.nets import ModelConfig, init_params

TINY_CONFIG = ModelConfig(variant="reduced", stage_channels=(8, 16, 16, 16), decoder_width=8, roi_size=32)


@pytest.fixture(scope="session")
def tiny_model():
    """Small random-init model for behavioral tests (quality irrelevant)."""
    return init_params(TINY_CONFIG, 0)


@pytest.fixture(scope="session")
def toy_video_small():
    """6-frame 64x64 single-object toy video."""
    spec = ToyVideoSpec(num_frames=6, h=64, w=64, num_objects=1, motion_amplitude=5.0)
    return generate_toy_video(spec, 0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
