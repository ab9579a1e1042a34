import numpy as np
import pytest

from datk.experiments import SyntheticSpec, make_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def synthetic():
    spec = SyntheticSpec()
    return spec, make_synthetic_dataset(spec, 40, 0), make_synthetic_dataset(spec, 20, 1)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
