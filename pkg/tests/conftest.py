import numpy as np
import pytest

from ctxspot.config import SpottingConfig
from ctxspot.gradcheck import tiny_config

GOAL_K = (-40, -20, 120, 180)


@pytest.fixture
def goal_slicing():
    return GOAL_K


@pytest.fixture
def default_cfg():
    return SpottingConfig()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def random_valid_slicing(rng):
    k2 = -int(rng.integers(1, 31))
    k1 = k2 - int(rng.integers(1, 41))
    k3 = int(rng.integers(2, 41))
    k4 = k3 + int(rng.integers(1, 61))
    return (k1, k2, k3, k4)
