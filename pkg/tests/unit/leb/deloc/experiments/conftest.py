import pytest

from leb.deloc.ensembles import DistributionSpec, draw, stream
from leb.deloc.experiments import OptimizerParams


@pytest.fixture
def gaussian_matrix():
    return draw(DistributionSpec(), stream(8), (16, 16))


@pytest.fixture
def fast_optimizer():
    """A short continuation schedule for searches in unit tests."""
    return OptimizerParams(rounds=2, iterations=20, starts=6, seed=1)
