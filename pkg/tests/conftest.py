from __future__ import annotations

import numpy as np
import pytest

import console
from environments import Pendulum, PointMass


@pytest.fixture(autouse=True)
def quiet_console():
    console.set_verbosity(console.QUIET)
    yield
    console.set_verbosity(console.NORMAL)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def pendulum():
    return Pendulum()


@pytest.fixture
def point_mass():
    return PointMass()


SMALL_RUN = {
    "env": "pointmass",
    "env_params": {"horizon": 10},
    "models": 2,
    "model_hidden_sizes": [8],
    "model_max_passes": 10,
    "policy_hidden_sizes": [8],
    "fictitious_batch_size": 50,
    "validation_starts": 5,
    "validation_check_every": 2,
    "max_inner_updates": 6,
    "timesteps_per_iteration": 30,
    "model_free_batch_size": 20,
    "outer_iterations": 2,
    "eval_episodes": 2,
}


@pytest.fixture
def small_run():
    return dict(SMALL_RUN)
