import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from numpy import random

from leb.deloc import Matrix, TrialRecord, Validation, Vector, require_finite
from leb.deloc.ensembles import DistributionSpec, draw, perturb
from leb.deloc.ensembles.factories import ShiftType, shift_factory
from leb.deloc.linalg import Subspace, distance_to_subspace, singular_values, svd
from leb.deloc.spectral_window import tail_sums
from leb.deloc.trials import LogProgress, TrialRunner

__all__ = [
    "Bounds",
    "DistanceExperimentSpec",
    "DistanceStats",
    "anisotropic_distance_trial",
    "calibrate_distance_constants",
    "constrained_distance",
    "isotropic_distance_trial",
    "tail_probability_estimate",
    "theoretical_bounds",
]

log = logging.getLogger(__name__)

PERTURBATION_SCALE = 1e-8
BISECTION_RTOL = 1e-10


def _check_chain(n: int, k: int, k0: int, k1: int) -> None:
    if not (k / 2 <= k0 < k < k1 <= n):
        raise ValueError(f"indices must satisfy k/2 <= k0 < k < k1 <= n, got {(n, k, k0, k1)}")


@dataclass(frozen=True)
class DistanceExperimentSpec(Validation):
    """A Monte Carlo experiment on d(DX, span(DX_1, ..., DX_k)).

    Attributes
    ----------
    n, k, k0, k1: int
        Dimensions with k/2 <= k0 < k < k1 <= n.
    ratio: float
        The decay ratio used by the named decay constructions of D.
    D: numpy.ndarray or ShiftType or str
        A square n x n matrix or the name of a construction from `shift_factory`.
    dist: DistributionSpec
    trials: int
    seed: int

    """

    n: int
    k: int
    k0: int
    k1: int
    ratio: float = 0.97
    D: Any = ShiftType.IDENTITY
    dist: DistributionSpec = DistributionSpec()
    trials: int = 1000
    seed: int = 0

    def validate_k1(self, value: int, **_) -> int:
        _check_chain(self.n, self.k, self.k0, value)
        return int(value)

    def validate_D(self, value: Union[Matrix, ShiftType, str], **_) -> Matrix:
        if isinstance(value, (ShiftType, str)):
            return shift_factory(value, self.n, ratio=self.ratio)
        value = require_finite(value, "D")
        if value.shape != (self.n, self.n):
            raise ValueError(f"D must be {self.n} x {self.n}")
        return value

    def validate_trials(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("trials must be greater than zero")
        return int(value)


class Bounds(NamedTuple):
    lower: float
    upper: float
    M: float


@dataclass(frozen=True)
class DistanceStats:
    """Distances from a Monte Carlo run together with both sides of the anisotropic estimate.

    The budgets are the exponential probability bounds 2 exp(-c (k1 - k)) for the lower side and
    2 k exp(-c (k - k0)) for the upper side.

    """

    samples: Vector
    lower_bound: float
    upper_bound: float
    M: float
    lower_violations: int
    upper_violations: int
    lower_budget: float
    upper_budget: float
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def trials(self) -> int:
        return int(self.samples.size)

    @property
    def lower_frequency(self) -> float:
        return self.lower_violations / self.trials

    @property
    def upper_frequency(self) -> float:
        return self.upper_violations / self.trials


def _sample_frame(n: int, k: int, dist: DistributionSpec, rng: random.Generator):
    X = draw(dist, rng, n)
    frame = draw(dist, rng, (n, k))
    if k and Subspace.span(frame).dim < k:
        log.debug("degenerate frame of %d vectors in dimension %d; perturbing", k, n)
        frame = perturb(frame, PERTURBATION_SCALE, rng)
    return X, frame


def isotropic_distance_trial(
    n: int, k: int, dist: DistributionSpec, rng: random.Generator
) -> float:
    """d(X, span(X_1, ..., X_k)) for independent random vectors with i.i.d. entries."""
    if not 0 <= k < n:
        raise ValueError("k must lie in [0, n)")
    X, frame = _sample_frame(n, k, dist, rng)
    return distance_to_subspace(X, Subspace.span(frame))


def anisotropic_distance_trial(
    D: Matrix, k: int, dist: DistributionSpec, rng: random.Generator
) -> float:
    """d(DX, span(DX_1, ..., DX_k)); the span drops directions D annihilates.

    With D = I this consumes the stream exactly as `isotropic_distance_trial` does.

    """
    D = require_finite(D, "D")
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("D must be square")
    if not 0 <= k < n:
        raise ValueError("k must lie in [0, n)")
    X, frame = _sample_frame(n, k, dist, rng)
    return distance_to_subspace(D @ X, Subspace.span(D @ frame))


def theoretical_bounds(
    D: Matrix, k: int, k0: int, k1: int, c: float = 1.0, C: float = 1.0
) -> Bounds:
    """Evaluates lower = c S_{k1} and upper = C M (S_{k0} + sqrt(k) s_{k0+1}) with
    M = C k sqrt(k0) / (k - k0), from the singular values of D."""
    n = D.shape[0]
    _check_chain(n, k, k0, k1)
    seq = tail_sums(singular_values(D))
    M = C * k * math.sqrt(k0) / (k - k0)
    lower = c * seq.tail(k1)
    upper = C * M * (seq.tail(k0) + math.sqrt(k) * seq.s(k0 + 1))
    return Bounds(lower, upper, M)


def constrained_distance(
    D: Matrix, X: Vector, X_list: Union[Matrix, Sequence[Vector]], M_cap: float
) -> float:
    """inf over ||a||_2 <= M_cap of ||DX - sum_i a_i DX_i||_2.

    When the minimum-norm least-squares coefficients violate the cap, the constrained minimizer
    lies on the ridge path a(lam) = (B*B + lam I)^{-1} B* y, and lam is found by bisection on
    ||a(lam)|| = M_cap to a relative width of 1e-10.

    """
    if M_cap < 0:
        raise ValueError("M_cap must be nonnegative")
    D = require_finite(D, "D")
    y = D @ np.asanyarray(X)
    frame = np.column_stack(list(X_list)) if not isinstance(X_list, np.ndarray) else X_list
    if M_cap == 0 or frame.size == 0:
        return float(np.linalg.norm(y))

    B = D @ frame
    result = svd(B)
    s = result.singular_values
    keep = s > 1e-12 * s[0] if s.size and s[0] > 0 else np.zeros(s.size, dtype=bool)
    s, U, V = s[keep], result.left_vectors[:, keep], result.right_vectors[:, keep]
    b = U.conj().T @ y

    def coefficients(lam: float) -> Vector:
        return V @ (s / (s**2 + lam) * b)

    def residual(a: Vector) -> float:
        return float(np.linalg.norm(y - B @ a))

    unconstrained = coefficients(0.0)
    if np.linalg.norm(unconstrained) <= M_cap:
        return residual(unconstrained)

    low, high = 0.0, float(np.linalg.norm(s * b)) / M_cap
    while high - low > BISECTION_RTOL * high:
        middle = 0.5 * (low + high)
        if np.linalg.norm(coefficients(middle)) > M_cap:
            low = middle
        else:
            high = middle
    return residual(coefficients(high))


def tail_probability_estimate(
    spec: DistanceExperimentSpec, c: float = 1.0, C: float = 1.0, threads: int = 1
) -> DistanceStats:
    """Counts violations of both sides of the anisotropic distance estimate over spec.trials."""
    bounds = theoretical_bounds(spec.D, spec.k, spec.k0, spec.k1, c, C)

    def trial_fn(trial: int, rng: random.Generator) -> TrialRecord:
        distance = anisotropic_distance_trial(spec.D, spec.k, spec.dist, rng)
        below, above = distance < bounds.lower, distance > bounds.upper
        return TrialRecord(
            trial,
            spec.n,
            distance,
            bounds.upper,
            bool(below or above),
            {"lower": bounds.lower, "below": float(below), "above": float(above)},
        )

    runner = TrialRunner(
        trial_fn, spec.trials, spec.seed, threads, post_processors=[LogProgress("distances")]
    )
    records = runner.run()
    samples = np.array([record.statistic for record in records])
    return DistanceStats(
        samples,
        bounds.lower,
        bounds.upper,
        bounds.M,
        int(np.sum(samples < bounds.lower)),
        int(np.sum(samples > bounds.upper)),
        min(1.0, 2 * math.exp(-c * (spec.k1 - spec.k))),
        min(1.0, 2 * spec.k * math.exp(-c * (spec.k - spec.k0))),
        records,
    )


def calibrate_distance_constants(
    spec: DistanceExperimentSpec, safety: float = 2.0, threads: int = 1
) -> Tuple[float, float]:
    """Fixes (c, C) from a pilot run so that every pilot distance lies within the bounds with a
    margin of `safety`.

    c = min d / (safety S_{k1}) and C solves C^2 m (S_{k0} + sqrt(k) s_{k0+1}) = safety max d
    with m = k sqrt(k0) / (k - k0), since M itself carries a factor C.

    """
    unit = theoretical_bounds(spec.D, spec.k, spec.k0, spec.k1, 1.0, 1.0)
    samples = tail_probability_estimate(spec, 1.0, 1.0, threads).samples
    c = float(samples.min()) / (safety * unit.lower) if unit.lower > 0 else 1.0
    C = math.sqrt(safety * float(samples.max()) / unit.upper) if unit.upper > 0 else 1.0
    log.info("calibrated distance constants c=%.4g C=%.4g from %d trials", c, C, samples.size)
    return max(c, np.finfo(float).tiny), max(C, np.finfo(float).tiny)
