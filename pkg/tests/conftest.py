import numpy as np
import pytest

from gamfq.engine import ScenarioSpec


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running learning runs (minutes to hours)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_battle():
    """A 2v2 battle on a 10x10 map, short episodes."""
    return ScenarioSpec.default("multibattle", map_width=10, map_height=10, episode_length=12).with_teams(2, 2)


@pytest.fixture
def small_battle():
    return ScenarioSpec.default("multibattle", map_width=16, map_height=16, episode_length=30).with_teams(4, 4)
