import pytest
import torch

from facialgan.config import ModelConfig, TrainConfig
from facialgan.toy import make_toy_dataset

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_model() -> ModelConfig:
    """16px networks: big enough for every code path, cheap enough for CI."""
    return ModelConfig(image_size=16, base_channels=8, max_channels=32)


@pytest.fixture(scope="session")
def tiny_train_config(toy_root_16) -> TrainConfig:
    return TrainConfig(image_size=16, batch_size=4, total_iters=50, base_channels=8,
                       max_channels=32, seg_epochs=5, seed=0, log_every=1,
                       checkpoint_every=10 ** 9, data_root=str(toy_root_16),
                       threads=1)


@pytest.fixture(scope="session")
def toy_root_16(tmp_path_factory):
    """Six synthetic samples at 16px for fast data/training tests."""
    return make_toy_dataset(tmp_path_factory.mktemp("toy16"), n=6, image_size=16, seed=3)


@pytest.fixture(scope="session")
def toy_root_64(tmp_path_factory):
    """18 samples at 64px -> 16/1/1 split; the desk-scale dataset."""
    return make_toy_dataset(tmp_path_factory.mktemp("toy64"), n=18, image_size=64, seed=0)
