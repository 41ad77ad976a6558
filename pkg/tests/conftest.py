import textwrap

import numpy as np
import pytest

from fnlab.coeffs import CoefficientModel, sample
from fnlab.particles import generate_noise

# Homogeneous desk example shared across modules: Sigma = 0.13
MU, NU, SIGMA = 0.1, 0.2, 0.3

CARA_CONFIG = textwrap.dedent(
    """
    [scenario]
    game = cara_n
    agents = 4
    replications = 32
    steps = 8
    horizon = 1
    seed = 11

    [mu]
    value = 0.1

    [nu]
    value = 0.2

    [sigma]
    value = 0.3

    [delta]
    value = 1

    [theta]
    value = 0.5
    """
)


def constant_model(delta=1.0, theta=0.5, mu=MU, nu=NU, sigma=SIGMA, horizon=1.0):
    return CoefficientModel.constant(mu, nu, sigma, delta, theta, horizon=horizon)


def values_of(model, shape=(1, 1), z=0.0, t=0.0):
    return sample(model, np.ones(shape), z, t)


@pytest.fixture
def cara_model():
    return constant_model(delta=1.0, theta=0.5)


@pytest.fixture
def crra_model():
    return constant_model(delta=2.0, theta=0.5)


@pytest.fixture
def small_bundle():
    return generate_noise(7, 0, n_replications=64, n_agents=4, steps=16, dt=1 / 16)


@pytest.fixture
def write_config(tmp_path):
    def write(text, name="scenario.ini"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return write
