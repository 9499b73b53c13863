import numpy as np
import pytest

from hmmselect.models import get_model


@pytest.fixture(scope="session")
def sv():
    return get_model("sv")


@pytest.fixture(scope="session")
def svj():
    return get_model("svj")


@pytest.fixture(scope="session")
def lg():
    return get_model("lg")


@pytest.fixture(scope="session")
def lg_theta(lg):
    return lg.theta(0.9, np.sqrt(0.3), 1.0)


@pytest.fixture(scope="session")
def lg_data_200(lg, lg_theta):
    """One fixed linear-Gaussian realisation shared by oracle comparisons."""
    return lg.simulate(lg_theta, 200, 20240212)
