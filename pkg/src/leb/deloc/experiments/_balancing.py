import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numba import njit  # type: ignore
from numpy import random

from leb.deloc import (
    AcceptanceError,
    CalibrationConstants,
    StageError,
    TrialRecord,
    Vector,
    require_finite,
)
from leb.deloc.ensembles import DistributionSpec, draw, stream
from leb.deloc.test_projection import (
    TestProjectionInput,
    balancing_event_check,
    build_test_projection,
)
from leb.deloc.trials import LogProgress, TrialRunner, wilson_interval

__all__ = [
    "ENUMERATION_BUDGET",
    "BalancingEstimate",
    "balancing_alpha",
    "balancing_event_mc",
    "calibrate_balancing",
    "coefficient_balancing_oracle",
    "count_light_subsets",
    "exact_pair_count",
]

log = logging.getLogger(__name__)

ENUMERATION_BUDGET: int = int(float(os.environ.get("DELOC_ENUMERATION_BUDGET", 1e7)))

DEFAULT_SAMPLES = 100_000

# Relative slack for comparing |v_j| with ||v||_inf and the mass of J0 with 2 l / n.
TIE_RTOL = 1e-12


@njit
def count_light_subsets(weights: np.ndarray, size: int, threshold: float) -> int:
    """Counts the subsets of `size` entries of `weights` whose sum is at most `threshold`."""
    m = weights.size
    if size == 0:
        return 1 if threshold >= 0 else 0
    if size > m:
        return 0

    index = np.arange(size)
    count = 0
    while True:
        total = 0.0
        for t in range(size):
            total += weights[index[t]]
        if total <= threshold:
            count += 1

        # Advance to the next combination in lexicographic order.
        i = size - 1
        while i >= 0 and index[i] == m - size + i:
            i -= 1
        if i < 0:
            break
        index[i] += 1
        for t in range(i + 1, size):
            index[t] = index[t - 1] + 1
    return count


def exact_pair_count(n: int, l: int) -> int:
    """|Lambda| = n C(n - 1, l - 1), the number of pairs (j0, J0)."""
    return n * math.comb(n - 1, l - 1)


def _exact(magnitudes_sq: Vector, l: int, threshold: float) -> int:
    largest = magnitudes_sq.max()
    hits = 0
    for j0 in np.flatnonzero(magnitudes_sq >= largest * (1 - TIE_RTOL)):
        others = np.delete(magnitudes_sq, j0)
        hits += count_light_subsets(others, l - 1, threshold)
    return hits


def _sampled(magnitudes_sq: Vector, l: int, threshold: float, samples: int, rng) -> int:
    n = magnitudes_sq.size
    largest = magnitudes_sq.max()
    hits = 0
    for _ in range(samples):
        j0 = int(rng.integers(n))
        if magnitudes_sq[j0] < largest * (1 - TIE_RTOL):
            continue
        J0 = rng.choice(n - 1, size=l - 1, replace=False)
        J0 = J0 + (J0 >= j0)
        if magnitudes_sq[J0].sum() <= threshold:
            hits += 1
    return hits


def coefficient_balancing_oracle(
    v: Vector,
    l: int,
    mode: str = "exact",
    samples: int = DEFAULT_SAMPLES,
    rng: Optional[random.Generator] = None,
) -> float:
    """The probability, over a uniform pair (j0, J0), that |v_j0| = ||v||_inf and
    sum_{j in J0} |v_j|^2 <= 2 l / n for the unit vector v / ||v||.

    In exact mode every pair is enumerated and a probability below 1 / (2n) raises
    AcceptanceError. When the number of pairs exceeds ENUMERATION_BUDGET the oracle falls back to
    `samples` uniformly drawn pairs.

    """
    v = require_finite(v, "v")
    n = v.size
    if not 1 <= l <= n:
        raise ValueError(f"l must lie in [1, {n}]")
    if mode not in ("exact", "sampled"):
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("v must be nonzero")

    magnitudes_sq = np.abs(v / norm) ** 2
    threshold = 2 * l / n * (1 + TIE_RTOL)
    pairs = exact_pair_count(n, l)

    if mode == "exact" and pairs > ENUMERATION_BUDGET:
        log.warning(
            "%d pairs exceed the enumeration budget %d; sampling", pairs, ENUMERATION_BUDGET
        )
        mode = "sampled"

    if mode == "exact":
        probability = _exact(magnitudes_sq, l, threshold) / pairs
        if probability < 1 / (2 * n):
            raise AcceptanceError(
                f"balancing probability {probability:.6g} is below 1/(2n) = {1 / (2 * n):.6g}"
            )
        return probability

    rng = rng if rng is not None else stream(0)
    return _sampled(magnitudes_sq, l, threshold, samples, rng) / samples


def balancing_alpha(n: int, l: int, alpha_const: float) -> float:
    """alpha = c / (l log^{3/2} n)."""
    return alpha_const / (l * math.log(n) ** 1.5)


@dataclass(frozen=True)
class BalancingEstimate:
    """The empirical frequency of the balancing event over the trials whose test projection
    could be built; failed constructions are tallied in `stage_errors`."""

    n: int
    l: int
    z: complex
    alpha: float
    kappa: float
    successes: int
    valid: int
    stage_errors: int
    interval: Tuple[float, float]
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def frequency(self) -> float:
        return self.successes / self.valid if self.valid else float("nan")

    @property
    def target(self) -> float:
        """1 - 1 / (2n)."""
        return 1 - 1 / (2 * self.n)

    @property
    def half_width(self) -> float:
        return (self.interval[1] - self.interval[0]) / 2


def _check_disc(n: int, l: int, z: complex, K1: float) -> None:
    if l > n / 4:
        raise ValueError(f"l must not exceed n / 4 = {n / 4}")
    if abs(z) > K1 * math.sqrt(n) * (1 + 1e-12):
        raise ValueError(f"|z| must not exceed K1 sqrt(n) = {K1 * math.sqrt(n):.6g}")


def balancing_event_mc(
    n: int,
    l: int,
    z: complex = 0.0,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 500,
    constants: CalibrationConstants = CalibrationConstants(),
    seed: int = 0,
    threads: int = 1,
    alpha: Optional[float] = None,
    kappa: Optional[float] = None,
) -> BalancingEstimate:
    """Estimates the probability of the balancing event for (j0, J0) = (0, {1, ..., l - 1}).

    Each trial samples G, builds the test projection of A = G - zI and checks
    ||P A_j0|| >= alpha ||P A_J0|| and ||P A_j0|| >= kappa sqrt(l), with
    alpha = alpha_const / (l log^{3/2} n) and kappa from `constants` unless given explicitly.

    """
    _check_disc(n, l, z, constants.K1)
    alpha = balancing_alpha(n, l, constants.alpha_const) if alpha is None else alpha
    kappa = constants.kappa if kappa is None else kappa
    if alpha < 0 or kappa < 0:
        raise ValueError("alpha and kappa must be nonnegative")

    def trial_fn(trial: int, rng) -> TrialRecord:
        A = draw(dist, rng, (n, n)) - z * np.eye(n)
        try:
            tp = build_test_projection(TestProjectionInput(A, l), constants.c_window, rng)
        except StageError as exc:
            log.warning("trial %d: test projection failed: %s", trial, exc)
            return TrialRecord(trial, n, float("nan"), extras={"stage_error": 1.0})

        check = balancing_event_check(A, tp, alpha, kappa)
        return TrialRecord(
            trial,
            n,
            check.column_norm,
            max(alpha * check.block_norm, check.floor),
            not check.holds,
            {
                "block_norm": check.block_norm,
                "l_prime": float(tp.l_prime),
                "stage_error": 0.0,
            },
        )

    runner = TrialRunner(
        trial_fn, trials, seed, threads, post_processors=[LogProgress("balancing")]
    )
    records = runner.run()
    stage_errors = sum(int(record.extras["stage_error"]) for record in records)
    valid = len(records) - stage_errors
    successes = sum(
        not record.violated for record in records if not record.extras["stage_error"]
    )
    interval = wilson_interval(successes, valid) if valid else (0.0, 1.0)
    estimate = BalancingEstimate(
        n, l, complex(z), alpha, kappa, successes, valid, stage_errors, interval, records
    )
    log.info(
        "balancing n=%d l=%d |z|=%.3g: frequency %.4f (%d stage error(s))",
        n,
        l,
        abs(z),
        estimate.frequency,
        stage_errors,
    )
    return estimate


def calibrate_balancing(
    n: int,
    l: int,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 100,
    seed: int = 0,
    safety: float = 2.0,
    constants: CalibrationConstants = CalibrationConstants(),
    threads: int = 1,
) -> Tuple[float, float]:
    """Fixes (alpha_const, kappa) from a pilot run at z = 0 so that every pilot trial meets both
    clauses of the balancing event with a margin of `safety`."""
    pilot = balancing_event_mc(
        n, l, 0.0, dist, trials, constants, seed, threads, alpha=0.0, kappa=0.0
    )
    valid = [record for record in pilot.records if not record.extras["stage_error"]]
    if not valid:
        raise AcceptanceError("no test projection could be built in the pilot run")

    column = np.array([record.statistic for record in valid])
    block = np.array([record.extras["block_norm"] for record in valid])
    ratios = np.divide(column, block, out=np.full_like(column, np.inf), where=block > 0)
    alpha = float(ratios.min()) / safety
    alpha_const = alpha * l * math.log(n) ** 1.5 if math.isfinite(alpha) else 1.0
    kappa = float(column.min()) / (safety * math.sqrt(l))
    tiny = np.finfo(float).tiny
    log.info("calibrated balancing constants alpha_const=%.4g kappa=%.4g", alpha_const, kappa)
    return max(alpha_const, tiny), max(kappa, tiny)
