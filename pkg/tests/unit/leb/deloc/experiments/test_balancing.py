import math
from itertools import combinations

import numpy as np
import pytest

from leb.deloc import AcceptanceError, CalibrationConstants, StageError
from leb.deloc.ensembles import stream
from leb.deloc.experiments import *


def brute_force_oracle(v, l):
    """Enumerates every pair (j0, J0) in pure python."""
    n = v.size
    u = np.abs(v / np.linalg.norm(v)) ** 2
    hits = 0
    for j0 in range(n):
        others = [j for j in range(n) if j != j0]
        for J0 in combinations(others, l - 1):
            if u[j0] >= u.max() * (1 - 1e-12) and sum(u[j] for j in J0) <= 2 * l / n:
                hits += 1
    return hits / exact_pair_count(n, l)


class TestCountLightSubsets:
    @pytest.mark.parametrize(
        "weights, size, threshold, expected",
        [
            ([0.1, 0.2, 0.3], 2, 0.45, 2),
            ([0.1, 0.2, 0.3], 3, 1.0, 1),
            ([0.1, 0.2, 0.3], 0, 0.0, 1),
            ([0.1, 0.2], 3, 1.0, 0),
            ([1.0, 1.0, 1.0, 1.0], 2, 1.5, 0),
        ],
    )
    def test_counts(self, weights, size, threshold, expected):
        assert count_light_subsets(np.array(weights), size, threshold) == expected


class TestCoefficientBalancingOracle:
    def test_coordinate_vector(self):
        assert coefficient_balancing_oracle(np.eye(4)[0], 2) == 0.25

    def test_flat_vector(self):
        assert coefficient_balancing_oracle(np.ones(8) / math.sqrt(8), 3) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_vector_matches_enumeration(self, seed):
        v = stream(seed).standard_normal(6)

        probability = coefficient_balancing_oracle(v, 3)

        assert exact_pair_count(6, 3) == 60
        assert probability >= 1 / 12
        assert probability == pytest.approx(brute_force_oracle(v, 3))

    def test_complex_vectors(self):
        rng = stream(1)
        v = rng.standard_normal(7) + 1j * rng.standard_normal(7)

        assert coefficient_balancing_oracle(v, 2) == pytest.approx(brute_force_oracle(v, 2))

    def test_sampled_mode_agrees_with_enumeration(self):
        v = stream(2).standard_normal(8)

        exact = coefficient_balancing_oracle(v, 3)
        sampled = coefficient_balancing_oracle(v, 3, "sampled", samples=40_000, rng=stream(3))

        assert sampled == pytest.approx(exact, abs=0.01)

    def test_budget_forces_sampling(self, monkeypatch, caplog):
        monkeypatch.setattr("leb.deloc.experiments._balancing.ENUMERATION_BUDGET", 10)

        with caplog.at_level("WARNING"):
            probability = coefficient_balancing_oracle(np.eye(4)[0], 2, samples=4000)

        assert "enumeration budget" in caplog.text
        assert probability == pytest.approx(0.25, abs=0.05)

    @pytest.mark.parametrize(
        "v, l, mode", [(np.zeros(4), 2, "exact"), (np.ones(4), 5, "exact"), (np.ones(4), 2, "x")]
    )
    def test_input_validation(self, v, l, mode):
        with pytest.raises(ValueError):
            coefficient_balancing_oracle(v, l, mode)

    def test_low_probability_is_an_acceptance_failure(self, monkeypatch):
        monkeypatch.setattr("leb.deloc.experiments._balancing._exact", lambda *_: 0)

        with pytest.raises(AcceptanceError):
            coefficient_balancing_oracle(np.ones(4), 2)


def test_balancing_alpha():
    assert balancing_alpha(100, 4, 2.0) == pytest.approx(2.0 / (4 * math.log(100) ** 1.5))


class TestBalancingEventMc:
    def test_zero_constants_always_hold(self):
        estimate = balancing_event_mc(32, 4, trials=10, alpha=0.0, kappa=0.0)

        assert estimate.successes == estimate.valid == 10
        assert estimate.frequency == 1.0
        assert estimate.stage_errors == 0
        assert estimate.target == pytest.approx(1 - 1 / 64)

    def test_calibrated_constants_hold_on_the_pilot(self):
        constants = CalibrationConstants()
        alpha_const, kappa = calibrate_balancing(32, 4, trials=10, seed=5, constants=constants)

        estimate = balancing_event_mc(
            32, 4, trials=10, seed=5, alpha=balancing_alpha(32, 4, alpha_const), kappa=kappa
        )

        assert estimate.frequency == 1.0

    def test_records(self):
        estimate = balancing_event_mc(32, 4, z=1.0 + 1.0j, trials=4, seed=1)

        assert len(estimate.records) == 4
        for record in estimate.records:
            assert 2 <= record.extras["l_prime"] <= 4
            assert record.extras["stage_error"] == 0.0
        assert 0.0 <= estimate.interval[0] <= estimate.interval[1] <= 1.0

    def test_threads_do_not_change_results(self):
        single = balancing_event_mc(32, 4, trials=6, seed=2)
        threaded = balancing_event_mc(32, 4, trials=6, seed=2, threads=3)

        assert single.records == threaded.records

    @pytest.mark.parametrize("inputs", [{"l": 9}, {"z": 10.0}, {"kappa": -1.0}])
    def test_input_validation(self, inputs):
        arguments = {"n": 32, "l": 4, "trials": 1, **inputs}

        with pytest.raises(ValueError):
            balancing_event_mc(**arguments)

    def test_stage_errors_are_counted_separately(self, monkeypatch):
        def fail(*_, **__):
            raise StageError("window", ValueError("boom"))

        monkeypatch.setattr("leb.deloc.experiments._balancing.build_test_projection", fail)

        estimate = balancing_event_mc(32, 4, trials=3)

        assert estimate.stage_errors == 3
        assert estimate.valid == 0
        assert math.isnan(estimate.frequency)
        assert estimate.interval == (0.0, 1.0)
