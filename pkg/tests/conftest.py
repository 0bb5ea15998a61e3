import numpy as np
import pytest

from fluorotrack.config import resolve_config
from fluorotrack.phantom import MotionModel, PhantomConfig, generate_dataset


TOY_OVERRIDES = [
    "phantom.image_size=96",
    "phantom.frames=16",
    "phantom.contrast_onset=3",
    "phantom.occlusion_probability=0.5",
    "phantom.distractors=2",
    "phantom.motion_amplitude=5",
    "phantom.motion_period=10",
    "model.encoder_depth=2",
    "model.decoder_depth=1",
    "track.crop=64",
    "track.mca_depth=1",
    "pretrain.crop=64",
]


def toy_phantom_config(seed=0, **kwargs):
    defaults = dict(
        image_size=96,
        frames_per_sequence=16,
        contrast_onset_frame=3,
        occlusion_probability=0.5,
        num_distractors=2,
        motion=MotionModel(amplitude=5.0, period=10.0, drift=0.3),
        rng_seed=seed,
    )
    defaults.update(kwargs)
    return PhantomConfig(**defaults)


@pytest.fixture(scope="session")
def toy_config():
    return resolve_config(overrides=TOY_OVERRIDES)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Four annotated 96x96 sequences with vessels and occasional occlusion."""
    root = tmp_path_factory.mktemp("toy_dataset")
    return generate_dataset(toy_phantom_config(seed=0), 4, 1.0, root)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
