import numpy as np
import pytest

from neumkac import BoundaryProfile, KacKernel


@pytest.fixture(scope="session")
def kernel():
    return KacKernel()


@pytest.fixture(scope="session")
def reservoirs():
    return BoundaryProfile(0.8, 0.2)


@pytest.fixture(scope="session")
def shared_runs():
    """Cross-test cache for expensive simulations (acceptance reuse)."""
    return {}


def rng(seed=0):
    return np.random.default_rng(seed)
