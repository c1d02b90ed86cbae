import math

import numpy as np
import pytest

from leb.deloc import TrialRecord
from leb.deloc.trials import *


class TestTrialRunner:
    def test_post_processors_run_for_every_trial(self, trial_fn, post_processor):
        runner = TrialRunner(trial_fn, 5, post_processors=[post_processor])

        runner.run()

        assert post_processor.call_count == 5

    def test_post_processors_see_records_in_trial_order(self, trial_fn, post_processor):
        runner = TrialRunner(trial_fn, 6, threads=3, post_processors=[post_processor])

        runner.run()

        trials = [call.kwargs["record"].trial for call in post_processor.call_args_list]
        assert trials == list(range(6))

    def test_records_depend_only_on_seed_and_trial(self, trial_fn):
        single = TrialRunner(trial_fn, 8, seed=42).run()
        threaded = TrialRunner(trial_fn, 8, seed=42, threads=4).run()

        assert single == threaded

    def test_seeds_differ(self, trial_fn):
        first = TrialRunner(trial_fn, 3, seed=0).run()
        second = TrialRunner(trial_fn, 3, seed=1).run()

        assert [r.statistic for r in first] != [r.statistic for r in second]

    @pytest.mark.parametrize(
        "inputs", [{"trials": 0}, {"seed": -1}, {"seed": 2**64}, {"threads": 0}]
    )
    def test_input_validation(self, trial_fn, inputs):
        with pytest.raises(ValueError):
            TrialRunner(trial_fn, **{"trials": 1, **inputs})


def test_log_progress_counts_violations(trial_fn, caplog):
    progress = LogProgress("test", every=2)
    runner = TrialRunner(trial_fn, 4, post_processors=[progress])

    with caplog.at_level("INFO", logger="leb.deloc.trials"):
        records = runner.run()

    assert progress.count == 4
    assert progress.violations == sum(r.violated for r in records)
    assert len(caplog.records) == 2


class TestSummarize:
    def test_basic_statistics(self):
        summary = summarize([1.0, 2.0, 3.0, 4.0])

        assert summary.count == 4
        assert summary.mean == 2.5
        assert summary.std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
        assert (summary.minimum, summary.maximum) == (1.0, 4.0)
        assert summary.quantile(0.5) == 2.5

    def test_non_finite_values_are_dropped(self):
        assert summarize([1.0, math.nan, math.inf]).count == 1

    def test_empty(self):
        summary = summarize([])

        assert summary.count == 0
        assert math.isnan(summary.mean)


class TestWilsonInterval:
    def test_contains_the_proportion(self):
        low, high = wilson_interval(30, 100)

        assert low < 0.3 < high

    def test_zero_successes(self):
        low, high = wilson_interval(0, 50)

        assert low == 0.0
        assert 0 < high < 0.1

    def test_known_value(self):
        # z = 1.96, p = 0.5, n = 100
        low, high = wilson_interval(50, 100)

        assert low == pytest.approx(0.4038, abs=1e-4)
        assert high == pytest.approx(0.5962, abs=1e-4)

    @pytest.mark.parametrize("successes, trials", [(1, 0), (-1, 5), (6, 5)])
    def test_input_validation(self, successes, trials):
        with pytest.raises(ValueError):
            wilson_interval(successes, trials)


def test_violation_frequency():
    records = [TrialRecord(t, 2, 0.0, violated=t % 4 == 0) for t in range(8)]

    assert violation_frequency(records) == 0.25
    assert violation_frequency([]) == 0.0
