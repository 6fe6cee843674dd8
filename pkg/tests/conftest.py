import numpy as np
import pytest
from hypothesis import settings

from data import generate_2d, generate_regression
from models import LpConstraint, build_classification_pair, build_regression_pair

settings.register_profile("advgame", deadline=None, max_examples=100)
settings.load_profile("advgame")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def linf():
    return LpConstraint(np.inf, 0.2)


@pytest.fixture
def l2():
    return LpConstraint(2, 0.2)


@pytest.fixture
def circles():
    return generate_2d("circles", 60, 0.05, seed=3)


@pytest.fixture
def regression_data():
    return generate_regression(80, dim=2, noise=0.05, seed=4)


@pytest.fixture
def pair(linf):
    return build_classification_pair(2, 2, linf, seed=11)


@pytest.fixture
def regression_pair(l2):
    return build_regression_pair(2, l2, seed=12)
