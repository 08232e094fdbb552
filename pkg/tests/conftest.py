import numpy as np
import pytest

import icegrid as ig

from oracles import random_dataset, sim_point_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


@pytest.fixture(scope="session")
def two_core_data():
    """Small misaligned two-core dataset drawn exactly from the model."""
    return random_dataset(seed=5, n_per_core=(12, 10), span=4.0)


@pytest.fixture(scope="session")
def medium_data():
    """Enough data that the posterior is well concentrated; still fast to fit."""
    theta = ig.HyperParams(v2=0.3, rho=0.85, sigma2_eps=0.08)
    sigma = np.array([[1.0, theta.rho], [theta.rho, 1.0]])
    return sim_point_dataset(theta, sigma, (60, 55), span=8.0, seed=11)


@pytest.fixture(scope="session")
def medium_posterior(medium_data):
    model = ig.CovarianceModel("m1", 2)
    mode = ig.find_mode(medium_data, model)
    return ig.explore_grid(medium_data, model, mode)


@pytest.fixture(scope="session")
def medium_grid(medium_data):
    lo = float(medium_data.t_o[0])
    hi = float(medium_data.t_o[-1])
    return ig.ImputationGrid.regular(lo + 0.3, hi - 0.3, delta=0.5)


@pytest.fixture(scope="session")
def medium_mixture(medium_posterior, medium_data, medium_grid):
    return ig.mixture_marginals(medium_posterior, medium_data, medium_grid)
