import numpy as np
import pytest
import torch

from phantom_insight.core.numerics import seed_everything
from phantom_insight.data_utils.synth import SceneSpec, gen_sequence, generate_dataset
from phantom_insight.utils.config import make_config


@pytest.fixture(autouse=True)
def seed():
    seed_everything(0)
    yield


@pytest.fixture
def tiny_config():
    return make_config("tiny")


@pytest.fixture
def tiny_video():
    """Five 16x16 frames with one moving camouflaged ellipse."""
    return gen_sequence(SceneSpec.for_split("train", 7, frame_size=16, num_frames=5))


@pytest.fixture
def tiny_dataset(tmp_path):
    """A written manifest with 2 train / 1 val / 1 unseen videos of 16x16 frames."""
    return generate_dataset(
        str(tmp_path / "data"),
        seed=3,
        frame_size=16,
        num_frames=4,
        splits={"train": 2, "val": 1, "unseen": 1},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_frame(rng, size=16):
    return rng.random((size, size, 3)).astype(np.float32)


def as_double(*tensors):
    return [t.to(torch.float64) for t in tensors]
