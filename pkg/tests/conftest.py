import numpy as np
import pytest

from psmcrb.linmodel import ExperimentConfig, build_geometry, generate_standard_gaussian_setup

# The shared experiment: N=4, M=2, sigma^2=1, (H, theta1, theta2) drawn once
# from standard Gaussians.  Seed 2 gives theta2' Pperp theta2 ~ 2.87, a
# healthy interior noncentrality.
GEN_SEED = 2
N, M = 4, 2
SIGMA2 = 1.0


@pytest.fixture(scope="session")
def setup():
    h, theta1, theta2 = generate_standard_gaussian_setup(GEN_SEED, N, M)
    return h, theta1, theta2


@pytest.fixture(scope="session")
def geo(setup):
    h, _, _ = setup
    return build_geometry(h)


@pytest.fixture(scope="session")
def phi_h2(setup):
    _, _, theta2 = setup
    return np.array(theta2)


@pytest.fixture(scope="session")
def phi_h1(setup):
    h, theta1, _ = setup
    return h @ theta1


def make_config(setup, hypothesis, gamma_grid, trials, seed):
    h, theta1, theta2 = setup
    return ExperimentConfig(
        h=h, sigma2=SIGMA2, true_hypothesis=hypothesis,
        theta1_true=theta1, theta2_true=theta2,
        gamma_grid=np.asarray(gamma_grid, dtype=float),
        trials=trials, master_seed=seed,
    )
