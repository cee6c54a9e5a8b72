import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iwvi_lab import rng
from iwvi_lab.models import GaussianLinearModel, GumbelHeterogeneityModel

settings.register_profile("lab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture(scope="session")
def gumbel():
    return GumbelHeterogeneityModel()


@pytest.fixture(scope="session")
def gauss():
    return GaussianLinearModel()


@pytest.fixture(scope="session")
def gumbel_data(gumbel):
    return gumbel.simulate(1.0, 100, rng.SeedSpec(11).split("data"))


@pytest.fixture
def root():
    return rng.SeedSpec(20240601)



np.seterr(over="ignore", under="ignore")
