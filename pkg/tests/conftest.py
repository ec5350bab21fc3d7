import numpy as np
import pytest

from kvembed.model import ModelConfig, random_init


@pytest.fixture(scope="session")
def toy():
    cfg = ModelConfig()
    return cfg, random_init(cfg, 42)


@pytest.fixture(scope="session")
def tiny():
    cfg = ModelConfig(n_layers=3, d_model=16, n_heads=2, head_dim=8, d_ffn=24, max_seq=128)
    return cfg, random_init(cfg, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
