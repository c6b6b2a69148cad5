"""
Shared pytest fixtures for the PPGAN test suite.
"""
import os
import sys

import pytest

# Add parent directory to path to import ppgan
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ppgan.config import PPGANConfig
from ppgan.models import TrainConfig
from ppgan.ndnum import RngStream


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment checks (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def no_log_file(monkeypatch):
    """Keep test runs from writing ppgan.log into the working directory."""
    monkeypatch.setattr(PPGANConfig, "LOG_FILE", "")


@pytest.fixture
def rng():
    return RngStream(1234, 7)


@pytest.fixture
def tiny_config():
    """A private config small enough to train in well under a second per iteration."""
    return TrainConfig(
        alpha_d=0.05, alpha_g=0.05, weight_clip=0.05, grad_clip=1.0,
        batch_size=8, critic_iters=2, gen_iters=6, noise_scale=0.8,
        noise_calibration='fixed', latent_dim=3, hidden_dim=5, seed=11,
        delta=1e-5, epsilon=50.0, lambda_max=32,
        checkpoint_interval=2, log_interval=1,
    )


@pytest.fixture
def tiny_nonprivate_config(tiny_config):
    from dataclasses import replace
    return replace(tiny_config, epsilon=float('inf'), noise_scale=0.0)


@pytest.fixture
def tiny_dataset():
    import numpy as np
    gen = np.random.default_rng(5)
    return np.tanh(gen.normal(size=(40, 4)))
