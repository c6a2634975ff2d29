import pytest

from dannlab.data import SyntheticShiftSpec, generate_shift_task
from dannlab.experiments import prepare_data
from dannlab.train import TrainConfig

TINY_SPEC_KWARGS = dict(
    n_source=240,
    n_target=240,
    latent_dim=2,
    feature_dim=16,
    rotation_angle=25.0,
    translation=1.0,
    noise_std=0.05,
    seed=5,
)


@pytest.fixture(scope="session")
def tiny_task():
    return generate_shift_task(SyntheticShiftSpec(**TINY_SPEC_KWARGS))


@pytest.fixture(scope="session")
def tiny_prepared(tiny_task):
    source, target, pool = tiny_task
    return prepare_data(source, target, pool, seed=5)


@pytest.fixture()
def tiny_config():
    return TrainConfig(epochs=4, batch_size=32, lambda_warmup_epochs=1, trials=2, seed=5)
