import numpy as np
import pytest

from oscbf import load_robot


@pytest.fixture(scope="session")
def panda():
    return load_robot("panda")


@pytest.fixture(scope="session")
def planar2():
    return load_robot("planar_2r")


@pytest.fixture(scope="session")
def planar3():
    return load_robot("planar_3r")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
