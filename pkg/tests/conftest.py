import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

ISAACS_TABLE = [
    [
        {"a": [1.0, 0.4, 0.3, 0.3], "b": [0.5, 0.0], "c": 0.0, "f": 0.5},
        {"a": [0.4, 1.0, 0.3, 0.3], "b": [0.0, 0.0], "c": -0.5, "f": 0.0},
    ],
    [
        {"a": [0.3, 0.3, 1.2, 0.2], "b": [0.0, 0.0], "c": 0.0, "f": -0.5},
        {"a": [0.3, 0.3, 0.2, 1.2], "b": [0.0, -0.5], "c": 0.0, "f": 0.3},
    ],
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def configs_dir():
    return CONFIGS
