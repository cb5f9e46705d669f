import numpy as np
import pytest

from rbsl import EnvConfig, mix, rollout_expert, rollout_random


@pytest.fixture
def reach_config():
    return EnvConfig(variant="reach2d", p_block=0.7)


@pytest.fixture
def push_config():
    return EnvConfig(variant="push2d", p_block=0.7)


@pytest.fixture(scope="session")
def small_mixture():
    """A small half-expert dataset shared by pipeline-level tests."""
    config = EnvConfig(variant="reach2d", p_block=0.7)
    expert = rollout_expert(config, episodes=30, noise_std=0.02, seed=101)
    random = rollout_random(config, episodes=30, seed=102)
    return mix(expert, random, expert_fraction=0.5, seed=103, total=60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
