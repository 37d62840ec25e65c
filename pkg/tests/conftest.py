import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aforge.design_space import baseline_layout
from aforge.dynamics import Vehicle

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def planar():
    return baseline_layout("planar", 0.2)


@pytest.fixture(scope="session")
def planar_vehicle(planar):
    return Vehicle.build(planar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
