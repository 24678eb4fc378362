import numpy as np
import pytest

from drconv.conv import ConvSpec
from drconv.layers import DRConvLayer


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full training runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_drconv(rng):
    spec = ConvSpec(k=3, in_channels=3, out_channels=2)
    return DRConvLayer.initialize(spec, m=3, rng=rng)
