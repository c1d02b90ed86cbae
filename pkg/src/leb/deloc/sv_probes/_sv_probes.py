import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy import random

from leb.deloc import Matrix, ProbeConstants, TrialRecord, Validation, Vector, require_finite
from leb.deloc.ensembles import DistributionSpec, draw
from leb.deloc.linalg import (
    hs_norm,
    negative_second_moment,
    singular_values,
    spectral_norm,
    stable_rank,
)
from leb.deloc.trials import LogProgress, Summary, TrialRunner, summarize

__all__ = [
    "ProbeStats",
    "SvProbeSpec",
    "TailTable",
    "calibrate_constants",
    "coordinate_coisometry",
    "concentration_probe",
    "fat_matrix_probe",
    "intermediate_sv_probe",
    "product_norm_probe",
    "product_sv_probe",
    "small_ball_probe",
    "smallest_sv_probe",
    "tall_matrix_probe",
]

log = logging.getLogger(__name__)

COISOMETRY_TOLERANCE = 1e-10
IDENTITY_RTOL = 1e-8
PREFIX_RTOL = 1e-12
IDENTITY_EVERY = 10


@dataclass(frozen=True)
class SvProbeSpec(Validation):
    """A singular-value probe on random matrices D + G.

    Attributes
    ----------
    shape: Tuple[int, ...]
        (N, n) for the rectangular probes, (m, n, k) for the probes on P G.
    dist: DistributionSpec
    trials: int
    seed: int
    shift: Optional[numpy.ndarray]
        A fixed N x n matrix D added to G; the zero matrix when omitted.
    constants: ProbeConstants
        The calibrated (c, C) pair the statistics are compared against.

    """

    shape: Tuple[int, ...]
    dist: DistributionSpec = DistributionSpec()
    trials: int = 500
    seed: int = 0
    shift: Optional[Matrix] = None
    constants: ProbeConstants = ProbeConstants()

    def validate_shape(self, value: Sequence[int], **_) -> Tuple[int, ...]:
        value = tuple(int(v) for v in value)
        if len(value) not in (2, 3) or min(value) < 1:
            raise ValueError("shape must hold two or three positive integers")
        return value

    def validate_trials(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("trials must be greater than zero")
        return int(value)

    def validate_shift(self, value: Optional[Matrix], **_) -> Optional[Matrix]:
        if value is None:
            return None
        value = require_finite(value, "shift")
        if value.shape != self.shape[:2]:
            raise ValueError(f"shift must have shape {self.shape[:2]}")
        return value

    def matrix(self, rng: random.Generator) -> Matrix:
        """Samples D + G with G of shape shape[:2]."""
        G = draw(self.dist, rng, self.shape[:2])
        return G if self.shift is None else self.shift + G


@dataclass(frozen=True)
class ProbeStats:
    """Per-trial statistics of a probe against its threshold.

    A trial violates when its statistic falls on the wrong side of `threshold`: below it for the
    lower-bound probes, above it for the upper-bound ones.

    """

    family: str
    statistics: Vector
    threshold: float
    violations: int
    budget: float
    summary: Summary
    extras: Dict[str, float] = field(default_factory=dict)
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def trials(self) -> int:
        return int(self.statistics.size)

    @property
    def violation_frequency(self) -> float:
        return self.violations / self.trials


def _run(
    family: str,
    statistic: Callable[[int, random.Generator], Tuple[float, bool, Dict[str, float]]],
    n: int,
    threshold: float,
    trials: int,
    seed: int,
    threads: int,
    budget: float = float("nan"),
) -> ProbeStats:
    def trial_fn(trial: int, rng: random.Generator) -> TrialRecord:
        value, violated, extras = statistic(trial, rng)
        return TrialRecord(trial, n, value, threshold, violated, extras)

    runner = TrialRunner(trial_fn, trials, seed, threads, post_processors=[LogProgress(family)])
    records = runner.run()
    statistics = np.array([record.statistic for record in records])
    stats = ProbeStats(
        family,
        statistics,
        threshold,
        sum(record.violated for record in records),
        budget,
        summarize(statistics),
        records=records,
    )
    log.info(
        "%s: %d trials, median %.4g, %d violation(s) of %.4g",
        family,
        stats.trials,
        stats.summary.quantile(0.5),
        stats.violations,
        threshold,
    )
    return stats


def smallest_sv_probe(spec: SvProbeSpec, threads: int = 1) -> ProbeStats:
    """The normalized smallest singular value s_n(D + G) sqrt(n / (N - n)) of an N x n matrix.

    Every tenth trial also checks the negative second moment identity on the sampled matrix;
    the number of mismatches is reported as the `identity_failures` extra.

    """
    N, n = spec.shape[:2]
    if N <= n:
        raise ValueError("the smallest singular value probe requires N > n")
    c = spec.constants.lower
    scale = math.sqrt(n / (N - n))

    def statistic(trial: int, rng: random.Generator):
        A = spec.matrix(rng)
        value = float(singular_values(A)[n - 1]) * scale
        extras = {}
        if trial % IDENTITY_EVERY == 0:
            by_values, by_distances = negative_second_moment(A)
            gap = abs(by_values - by_distances) / by_values
            extras["identity_gap"] = gap
        return value, value < c, extras

    stats = _run("smallest_sv", statistic, n, c, spec.trials, spec.seed, threads)
    gaps = [r.extras["identity_gap"] for r in stats.records if "identity_gap" in r.extras]
    stats.extras["identity_checks"] = float(len(gaps))
    stats.extras["identity_failures"] = float(sum(gap > IDENTITY_RTOL for gap in gaps))
    return stats


def intermediate_sv_probe(spec: SvProbeSpec, n_index: int, threads: int = 1) -> ProbeStats:
    """s_{n_index}(A) of A = D + G, normalized by sqrt(n_index / (N - n_index)).

    Each trial also checks s_{n_index}(A) >= s_{n_index}(A_0), where A_0 holds the first n_index
    columns of A; a failure of this deterministic inequality counts as a violation and is
    tallied in the `prefix_failures` extra. The normalization uses N - n_index = 1 when A has
    exactly n_index rows.

    """
    N, M = spec.shape[:2]
    if not 1 <= n_index <= min(N, M):
        raise ValueError(f"n_index must lie in [1, {min(N, M)}]")
    c = spec.constants.lower
    scale = math.sqrt(n_index / max(N - n_index, 1))

    def statistic(_: int, rng: random.Generator):
        A = spec.matrix(rng)
        full = float(singular_values(A)[n_index - 1])
        prefix = float(singular_values(A[:, :n_index])[n_index - 1])
        prefix_ok = full >= prefix * (1 - PREFIX_RTOL)
        value = full * scale
        return value, value < c or not prefix_ok, {"prefix": prefix, "prefix_ok": float(prefix_ok)}

    stats = _run("intermediate_sv", statistic, n_index, c, spec.trials, spec.seed, threads)
    stats.extras["prefix_failures"] = float(
        sum(record.extras["prefix_ok"] == 0 for record in stats.records)
    )
    return stats


def coordinate_coisometry(m: int, n: int) -> Matrix:
    """The m x n coisometry [I_m | 0]."""
    if m > n:
        raise ValueError("a coisometry requires m <= n")
    return np.eye(m, n)


def _check_coisometry(P: Matrix) -> Matrix:
    P = require_finite(np.atleast_2d(P), "P")
    m = P.shape[0]
    if not np.allclose(P @ P.conj().T, np.eye(m), rtol=0, atol=COISOMETRY_TOLERANCE):
        raise ValueError("P must satisfy P P* = I")
    return P


def product_sv_probe(
    P_matrix: Matrix,
    k: int,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 500,
    seed: int = 0,
    constants: ProbeConstants = ProbeConstants(),
    threads: int = 1,
) -> ProbeStats:
    """s_m(P G) for an m x n coisometry P and an n x k random G against c (k - m) / k."""
    P = _check_coisometry(P_matrix)
    m, n = P.shape
    if not m <= min(k, n):
        raise ValueError("product probe requires m <= min(k, n)")
    threshold = constants.lower * (k - m) / k

    def statistic(_: int, rng: random.Generator):
        value = float(singular_values(P @ draw(dist, rng, (n, k)))[m - 1])
        return value, value < threshold, {}

    return _run("product_sv", statistic, m, threshold, trials, seed, threads)


def _pg_dimensions(spec: SvProbeSpec) -> Tuple[int, int]:
    m, n = spec.shape[:2]
    if m > n:
        raise ValueError("P G probes require m <= n")
    return m, n


def fat_matrix_probe(m: int, m0: int, spec: SvProbeSpec, threads: int = 1) -> ProbeStats:
    """s_{m0}(T_0) for the m x m0 matrix T_0 of the first m0 columns of P G, P = [I_m | 0].

    The threshold is c sqrt((m - m0) / m0); it vanishes when m0 = m.

    """
    if not 1 <= m0 <= m:
        raise ValueError("fat probe requires 1 <= m0 <= m")
    n = max(spec.shape[1], m)
    P = coordinate_coisometry(m, n)
    threshold = spec.constants.lower * math.sqrt((m - m0) / m0)
    budget = min(1.0, 2 * m0 * math.exp(-spec.constants.lower * (m - m0)))

    def statistic(_: int, rng: random.Generator):
        value = float(singular_values(P @ draw(spec.dist, rng, (n, m0)))[m0 - 1])
        return value, value < threshold, {}

    return _run("fat", statistic, m, threshold, spec.trials, spec.seed, threads, budget)


def tall_matrix_probe(m: int, k: int, spec: SvProbeSpec, threads: int = 1) -> ProbeStats:
    """s_m(P G) / sqrt(k) for P = [I_m | 0] and an n x k random G with k >= C m."""
    if k < spec.constants.upper * m:
        raise ValueError(f"tall probe requires k >= C m = {spec.constants.upper * m:g}")
    n = max(spec.shape[1], m)
    P = coordinate_coisometry(m, n)
    c = spec.constants.lower
    budget = min(1.0, math.exp(-c * k))

    def statistic(_: int, rng: random.Generator):
        value = float(singular_values(P @ draw(spec.dist, rng, (n, k)))[m - 1]) / math.sqrt(k)
        return value, value < c, {}

    return _run("tall", statistic, m, c, spec.trials, spec.seed, threads, budget)


@dataclass(frozen=True)
class TailTable:
    """The concentration of ||AX||_2 around M = (E ||AX||_2^2)^{1/2}.

    Attributes
    ----------
    M_hat: float
        The empirical root mean square of ||AX||_2.
    hs_norm: float
    K_hat: float
        M_hat / ||A||_HS.
    t_grid, empirical, bound: numpy.ndarray
        Empirical P(| ||AX|| - M_hat | > t) next to 2 exp(-c t^2 / ||A||^2).

    """

    M_hat: float
    hs_norm: float
    K_hat: float
    t_grid: Vector
    empirical: Vector
    bound: Vector
    samples: Vector = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def exceedances(self) -> int:
        return int(np.sum(self.empirical > self.bound))


def _norm_samples(
    family: str,
    map_sample: Callable[[Vector], float],
    n: int,
    dist: DistributionSpec,
    trials: int,
    seed: int,
    threads: int,
) -> Vector:
    def statistic(_: int, rng: random.Generator):
        return map_sample(draw(dist, rng, n)), False, {}

    return _run(family, statistic, n, float("nan"), trials, seed, threads).statistics


def concentration_probe(
    A: Matrix,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 10_000,
    seed: int = 0,
    t_grid: Optional[Sequence[float]] = None,
    constants: ProbeConstants = ProbeConstants(),
    threads: int = 1,
) -> TailTable:
    A = require_finite(A, "A")
    norms = _norm_samples(
        "concentration",
        lambda x: float(np.linalg.norm(A @ x)),
        A.shape[1],
        dist,
        trials,
        seed,
        threads,
    )
    M_hat = float(np.sqrt(np.mean(norms**2)))
    hs = hs_norm(A)
    op = spectral_norm(A)

    if t_grid is None:
        t_grid = op * np.linspace(0.5, 4.0, 8)
    t = np.asarray(t_grid, dtype=float)
    empirical = np.array([np.mean(np.abs(norms - M_hat) > ti) for ti in t])
    bound = 2 * np.exp(-constants.lower * t**2 / op**2) if op > 0 else np.zeros_like(t)
    return TailTable(M_hat, hs, M_hat / hs if hs > 0 else float("nan"), t, empirical, bound, norms)


def small_ball_probe(
    A: Matrix,
    y: Vector,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 10_000,
    seed: int = 0,
    constants: ProbeConstants = ProbeConstants(),
    threads: int = 1,
) -> ProbeStats:
    """The frequency of ||AX - y||_2 < (||A||_HS + ||y||_2) / 6 against 2 exp(-c r(A))."""
    A = require_finite(A, "A")
    y = require_finite(y, "y")
    radius = (hs_norm(A) + float(np.linalg.norm(y))) / 6
    budget = min(1.0, 2 * math.exp(-constants.lower * stable_rank(A)))

    def statistic(_: int, rng: random.Generator):
        distance = float(np.linalg.norm(A @ draw(dist, rng, A.shape[1]) - y))
        return distance, distance < radius, {}

    stats = _run("small_ball", statistic, A.shape[1], radius, trials, seed, threads, budget)
    stats.extras["stable_rank"] = stable_rank(A)
    return stats


def product_norm_probe(
    B: Matrix,
    dist: DistributionSpec = DistributionSpec(),
    n: int = 100,
    s: float = 1.0,
    t: float = 1.0,
    trials: int = 200,
    seed: int = 0,
    constants: ProbeConstants = ProbeConstants(),
    threads: int = 1,
) -> ProbeStats:
    """The frequency of ||B G|| > C (s ||B||_HS + t sqrt(n) ||B||) for an N x n random G."""
    B = require_finite(np.atleast_2d(B), "B")
    threshold = constants.upper * (s * hs_norm(B) + t * math.sqrt(n) * spectral_norm(B))
    budget = min(1.0, 2 * math.exp(-(s**2) * stable_rank(B) - t**2 * n))

    def statistic(_: int, rng: random.Generator):
        value = spectral_norm(B @ draw(dist, rng, (B.shape[1], n)))
        return value, value > threshold, {}

    return _run("product_norm", statistic, n, threshold, trials, seed, threads, budget)


def calibrate_constants(values: Any, side: str, safety: float = 2.0) -> float:
    """Turns pilot statistics into a frozen constant.

    A lower constant is min(values) / safety and an upper constant is safety * max(values), so
    every pilot value clears the constant by the factor `safety`.

    """
    if safety < 1:
        raise ValueError("safety must be at least 1")
    data = np.asarray(
        [r.statistic if isinstance(r, TrialRecord) else r for r in values], dtype=float
    )
    data = data[np.isfinite(data)]
    if data.size == 0:
        raise ValueError("no finite pilot statistics to calibrate from")
    if side == "lower":
        return max(float(data.min()) / safety, np.finfo(float).tiny)
    if side == "upper":
        return max(safety * float(data.max()), np.finfo(float).tiny)
    raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
