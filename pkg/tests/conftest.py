import numpy as np
import pytest

from veil.config import AugmentConfig, ModelConfig, RunConfig, SyntheticConfig, TrainConfig
from veil.datasets import ImageBatch, generate_synthetic
from veil.train import holdout_split

# 24 -> conv 22 -> pool 11 -> conv 9 -> crop 8 -> pool 4 -> conv 2 -> pool 1
TINY_SIZE = 24


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(input_size=TINY_SIZE, conv_channels=(2, 3, 4), fc_hidden=(8, 6), seed=0)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(T=2, epochs_init=2, epochs_adv=1, epochs_refit=1, epochs_probe=2,
                       learning_rate=0.05, momentum=0.9, batch_size=8, seed=0)


@pytest.fixture
def tiny_synthetic_config():
    return SyntheticConfig(num_identities=3, num_emotions=2, images_per_cell=4, image_size=TINY_SIZE, seed=0)


@pytest.fixture
def tiny_images(tiny_synthetic_config):
    return generate_synthetic(tiny_synthetic_config)


@pytest.fixture
def tiny_batch(tiny_images):
    return ImageBatch.from_images(tiny_images)


@pytest.fixture
def tiny_split(tiny_batch):
    return holdout_split(tiny_batch, 0.25, seed=0)


@pytest.fixture
def tiny_run_config(tmp_path, tiny_synthetic_config, tiny_model_config, tiny_train_config):
    return RunConfig(synthetic=tiny_synthetic_config, augment=AugmentConfig(target_size=36),
                     model=tiny_model_config, train=tiny_train_config, folds=2, seeds=(0,),
                     output_dir=str(tmp_path / 'run'), tensorboard=False)


@pytest.fixture
def tiny_config_file(tmp_path, tiny_run_config):
    path = tmp_path / 'tiny.json'
    tiny_run_config.dump(str(path))
    return path

