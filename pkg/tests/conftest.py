import numpy as np
import pytest
import torch

from realosr.data import natural_erp, synthetic_panoramas
from realosr.degrade import synthesize_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def astronaut_erp():
    return natural_erp(64)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two 128x256 synthetic panoramas degraded x4."""
    root = tmp_path_factory.mktemp("ds")
    imgs = [(f"p{i}", im) for i, im in enumerate(synthetic_panoramas(2, 128, seed=5))]
    synthesize_dataset(imgs, root, seed=11)
    return root


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield
