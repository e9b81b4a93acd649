import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fwrisk import TimeGrid, chain_preset, chain_shift, population_second_moment, sine_basis  # noqa: E402


@pytest.fixture(scope="session")
def basis10():
    return sine_basis(10)


@pytest.fixture(scope="session")
def grid100():
    return TimeGrid.uniform(100)


@pytest.fixture(scope="session")
def grid512():
    return TimeGrid.uniform(512)


@pytest.fixture(scope="session")
def preset():
    return chain_preset()


@pytest.fixture(scope="session")
def shift():
    return chain_shift()


@pytest.fixture(scope="session")
def moments(preset, shift):
    """Population second moments (shifted, observational) of the chain preset."""
    return population_second_moment(preset, shift), population_second_moment(preset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def within_se(samples, target, k=3.0):
    """``|mean - target| <= k * SE``; returns (ok, mean, se)."""
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean()
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    return abs(mean - target) <= k * se, mean, se
