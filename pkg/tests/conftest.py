import numpy as np
import pytest

from asediff import linear_beta_schedule


@pytest.fixture(scope="session")
def ns():
    return linear_beta_schedule()


@pytest.fixture(scope="session")
def ns4():
    return linear_beta_schedule(4, 0.1, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
