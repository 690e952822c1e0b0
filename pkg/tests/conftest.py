import pytest
import torch

from stepwise_gan.counting import generate_dataset
from stepwise_gan.models import Discriminator, Generator, ValueNet, make_rng

from helpers import tiny_model_config

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(seed=7, sizes=(64, 16, 16), n_max=6)


@pytest.fixture()
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture()
def tiny_models(tiny_cfg):
    G = Generator(tiny_cfg, init_seed=11)
    D = Discriminator(tiny_cfg, init_seed=12)
    V = ValueNet(tiny_cfg, init_seed=13)
    return G, D, V


@pytest.fixture()
def rng():
    return make_rng(123)
