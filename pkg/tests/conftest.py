import numpy as np
import pytest

from biaslab import _backend
from biaslab.core import discretize, spring_model


@pytest.fixture(scope="session")
def spring():
    return spring_model()


@pytest.fixture(scope="session")
def fine(spring):
    return discretize(spring, 0.1)


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


def random_stable(rng, d):
    """Random d x d matrix with spectral radius < 1."""
    M = rng.standard_normal((d, d))
    return 0.9 * M / max(1.0, np.abs(np.linalg.eigvals(M)).max())


def random_spd(rng, d, scale=1.0):
    M = rng.standard_normal((d, d))
    return scale * (M @ M.T / d + 0.1 * np.eye(d))
