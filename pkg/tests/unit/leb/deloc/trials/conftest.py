from unittest.mock import create_autospec

import pytest

from leb.deloc import TrialRecord
from leb.deloc.trials import Processor


@pytest.fixture
def trial_fn():
    """Records one standard normal draw per trial, flagged when it is positive."""

    def fn(trial, rng):
        value = float(rng.standard_normal())
        return TrialRecord(trial, 4, value, 0.0, value > 0)

    return fn


@pytest.fixture
def post_processor():
    return create_autospec(Processor, spec_set=True)
