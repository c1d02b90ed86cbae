import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy import random

from leb.deloc import (
    CalibrationConstants,
    ConfigurationError,
    Matrix,
    TrialRecord,
    Validation,
    Vector,
)
from leb.deloc.ensembles import (
    DistributionSpec,
    Kind,
    derive_seed,
    draw,
    stream,
    truncate_and_center,
    truncation_level,
)
from leb.deloc.linalg import eigenpairs, spectral_norm
from leb.deloc.trials import LogProgress, Summary, TrialRunner, summarize

from ._localization import LocalizationSearchResult, OptimizerParams, localization_search

__all__ = [
    "MAX_CUT",
    "DelocalizationReport",
    "PipelineResult",
    "PipelineSpec",
    "approximate_bound",
    "calibrate_envelope",
    "calibrate_threshold",
    "choose_l",
    "delocalization_statistic",
    "disc_net",
    "eigenvector_deloc_scan",
    "envelope",
    "fit_log_exponent",
    "full_pipeline",
    "is_vacuous",
    "localization_threshold",
    "main_threshold",
    "norm_event_check",
    "psi_alpha_scan",
]

log = logging.getLogger(__name__)

# Largest calibrated cut W sqrt(l / n).
MAX_CUT = 0.9


def delocalization_statistic(G: Matrix) -> Tuple[float, float, int]:
    """max over the eigenvectors v of G of sqrt(n) ||v||_inf / ||v||_2.

    Returns the statistic, the inverse participation ratio sum |v_i|^4 of the maximizing unit
    eigenvector and the number of eigenpairs that failed the residual check.

    """
    n = G.shape[0]
    pairs = eigenpairs(G)
    peaks = np.max(np.abs(pairs.vectors), axis=0)
    worst = int(np.argmax(peaks))
    ipr = float(np.sum(np.abs(pairs.vectors[:, worst]) ** 4))
    return math.sqrt(n) * float(peaks[worst]), ipr, len(pairs.failed)


def envelope(n: int, t: float, constants: CalibrationConstants) -> float:
    """C t^{3/2} log^{9/2} n with the exponents and C taken from `constants`."""
    return constants.C_main * t**constants.exponent_t * math.log(n) ** constants.exponent_log


def approximate_bound(n: int, t: float, s: float, constants: CalibrationConstants) -> float:
    """The infinity-norm bound C t^{3/2} (s + 1)^{3/2} log^{9/2} n / sqrt(n) of a unit
    approximate eigenvector with residual at most s / sqrt(n)."""
    return envelope(n, t * (s + 1), constants) / math.sqrt(n)


def localization_threshold(l: int, w: float, alpha: float, kappa: float) -> float:
    """W = w / (kappa l) + sqrt(2) / alpha, the threshold reached through a test projection."""
    if l < 1 or alpha <= 0 or kappa <= 0:
        raise ValueError("l, alpha and kappa must be greater than zero")
    return w / (kappa * l) + math.sqrt(2) / alpha


def main_threshold(n: int, l: int, C_W: float) -> float:
    """W = C l log^{3/2} n."""
    return C_W * l * math.log(n) ** 1.5


def norm_event_check(G: Matrix, C1: float) -> bool:
    """||G|| <= C1 sqrt(n)."""
    return spectral_norm(G) <= C1 * math.sqrt(G.shape[0])


def disc_net(radius: float, spacing: float) -> List[complex]:
    """A square grid of pitch spacing / sqrt(2) restricted to the closed disc of `radius`.

    Every point of the disc lies within `spacing` of a net point: rounding both coordinates of
    a point towards zero lands on a grid point inside the disc at distance below
    sqrt(2) * pitch. The net has at most (2 radius / pitch + 1)^2 points.

    """
    if radius <= 0 or spacing <= 0:
        raise ValueError("radius and spacing must be greater than zero")
    if radius < spacing:
        return [0j]

    pitch = spacing / math.sqrt(2)
    m = int(math.floor(radius / pitch))
    axis = pitch * np.arange(-m, m + 1)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    keep = X**2 + Y**2 <= radius**2 * (1 + 1e-12)
    return [complex(x, y) for x, y in zip(X[keep], Y[keep])]


def choose_l(n: int, t: float, s: int, C_l: float = 1.0) -> int:
    """l = ceil(C t (s + 1) log^2 n) clipped to [s + 2, n / 4]."""
    low, high = s + 2, n // 4
    if low > high:
        raise ConfigurationError(f"no admissible l: s + 2 = {low} exceeds n / 4 = {n / 4:g}")
    raw = math.ceil(C_l * t * (s + 1) * math.log(n) ** 2)
    return min(max(raw, low), high)


def is_vacuous(n: int, t: float, s: int, constants: CalibrationConstants) -> bool:
    """Whether t (s + 1) > c n / log^2 n, where the bound exceeds the trivial ||v||_inf <= 1."""
    return t * (s + 1) > constants.c_vacuous * n / math.log(n) ** 2


@dataclass(frozen=True)
class DelocalizationReport:
    """Per-trial delocalization statistics of a scan over dimensions.

    Every record carries the statistic sqrt(n) max_v ||v||_inf of one sampled matrix, the
    envelope as its bound and the inverse participation ratio and eigenpair failures as extras.

    """

    family: str
    t: float
    n_list: Tuple[int, ...]
    envelope: Dict[int, float]
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    def statistics(self, n: int) -> Vector:
        return np.array([r.statistic for r in self.records if r.n == n])

    @property
    def summaries(self) -> Dict[int, Summary]:
        return {n: summarize(self.statistics(n)) for n in self.n_list}

    @property
    def violations(self) -> int:
        return sum(r.violated for r in self.records)

    @property
    def failures(self) -> int:
        return int(sum(r.extras.get("failures", 0) for r in self.records))

    @staticmethod
    def gaussian_reference(n: int) -> float:
        return math.sqrt(math.log(n))

    def scaling_spread(self) -> float:
        """max / min over n of median statistic / sqrt(log n)."""
        ratios = [
            self.summaries[n].quantile(0.5) / self.gaussian_reference(n) for n in self.n_list
        ]
        return max(ratios) / min(ratios)


def _scan(
    label: str,
    n_list: Sequence[int],
    sample: Any,
    trials: int,
    t: float,
    seed: int,
    constants: CalibrationConstants,
    threads: int,
) -> Tuple[Dict[int, float], List[TrialRecord]]:
    bounds: Dict[int, float] = {}
    records: List[TrialRecord] = []
    for n in n_list:
        bound = envelope(n, t, constants)
        bounds[n] = bound

        def trial_fn(trial: int, rng: random.Generator, n=n, bound=bound) -> TrialRecord:
            G, extras = sample(n, rng)
            statistic, ipr, failures = delocalization_statistic(G)
            if failures:
                log.warning("n=%d trial %d: %d eigenpair(s) failed refinement", n, trial, failures)
            extras = {**extras, "ipr": ipr, "failures": float(failures)}
            return TrialRecord(trial, n, statistic, bound, statistic > bound, extras)

        runner = TrialRunner(
            trial_fn,
            trials,
            derive_seed(seed, n),
            threads,
            post_processors=[LogProgress(f"{label} n={n}")],
        )
        records.extend(runner.run())
    return bounds, records


def eigenvector_deloc_scan(
    n_list: Sequence[int],
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 100,
    t: float = 2.0,
    seed: int = 0,
    constants: CalibrationConstants = CalibrationConstants(),
    threads: int = 1,
) -> DelocalizationReport:
    """Samples `trials` matrices per dimension and records sqrt(n) max_v ||v||_inf for each.

    The trials of dimension n run under the seed derive_seed(seed, n), so adding a dimension
    leaves the other dimensions' records unchanged.

    """
    if trials < 1:
        raise ValueError("trials must be greater than zero")
    bounds, records = _scan(
        "deloc",
        n_list,
        lambda n, rng: (draw(dist, rng, (n, n)), {}),
        trials,
        t,
        seed,
        constants,
        threads,
    )
    return DelocalizationReport(dist.kind.value, t, tuple(n_list), bounds, records)


def psi_alpha_scan(
    n_list: Sequence[int],
    alpha: float,
    trials: int = 100,
    t: float = 2.0,
    seed: int = 0,
    constants: CalibrationConstants = CalibrationConstants(),
    threads: int = 1,
) -> DelocalizationReport:
    """A delocalization scan of stretched-exponential entries with shape `alpha`.

    Each record also reports whether truncation at (c t log n)^{1/alpha} leaves the matrix
    unchanged (`inactive`) and the Hilbert-Schmidt norm of the mean matrix the truncation
    subtracts.

    """
    if trials < 1:
        raise ValueError("trials must be greater than zero")
    dist = DistributionSpec(Kind.STRETCHED_EXPONENTIAL, alpha=alpha)

    def sample(n: int, rng: random.Generator):
        G = draw(dist, rng, (n, n))
        level = truncation_level(n, t, alpha, constants.c_truncation)
        _, mean = truncate_and_center(G, level, dist)
        inactive = float(np.max(np.abs(G)) <= level)
        return G, {"level": level, "inactive": inactive, "mean_hs": float(np.linalg.norm(mean))}

    bounds, records = _scan("psi-alpha", n_list, sample, trials, t, seed, constants, threads)
    return DelocalizationReport(dist.kind.value, t, tuple(n_list), bounds, records)


def fit_log_exponent(n_list: Sequence[int], values: Sequence[float]) -> float:
    """The least-squares slope gamma of log(value) against log(log n)."""
    n = np.asarray(n_list, dtype=float)
    y = np.asarray(values, dtype=float)
    if n.size < 2 or n.size != y.size:
        raise ValueError("need at least two (n, value) pairs of equal length")
    if np.any(n <= math.e) or np.any(y <= 0):
        raise ValueError("need n > e and positive values")
    slope, _ = np.polyfit(np.log(np.log(n)), np.log(y), 1)
    return float(slope)


def calibrate_envelope(
    dist: DistributionSpec = DistributionSpec(),
    n_list: Sequence[int] = (32, 64),
    trials: int = 50,
    t: float = 2.0,
    seed: int = 0,
    safety: float = 2.0,
    constants: CalibrationConstants = CalibrationConstants(),
    threads: int = 1,
) -> float:
    """C_main such that every pilot statistic lies below the envelope by a factor `safety`."""
    unit = replace(constants, C_main=1.0)
    report = eigenvector_deloc_scan(n_list, dist, trials, t, seed, unit, threads)
    C_main = safety * max(r.statistic / report.envelope[r.n] for r in report.records)
    log.info("calibrated envelope constant C_main=%.4g", C_main)
    return C_main


def calibrate_threshold(
    n: int,
    l: int,
    dist: DistributionSpec = DistributionSpec(),
    trials: int = 50,
    t: float = 2.0,
    seed: int = 0,
    safety: float = 2.0,
    constants: CalibrationConstants = CalibrationConstants(),
    threads: int = 1,
) -> float:
    """C_W for the localization threshold W = C_W l log^{3/2} n at dimension n.

    The cut W sqrt(l / n) is `safety` times the largest eigenvector entry of the pilot matrices,
    capped at MAX_CUT.

    """
    if not 1 <= l <= n:
        raise ValueError(f"l must lie in [1, {n}]")
    report = eigenvector_deloc_scan([n], dist, trials, t, seed, constants, threads)
    largest = float(report.statistics(n).max()) / math.sqrt(n)
    cut = min(safety * largest, MAX_CUT)
    C_W = cut * math.sqrt(n / l) / main_threshold(n, l, 1.0)
    log.info("calibrated localization constant C_W=%.4g (cut %.4g)", C_W, cut)
    return C_W


@dataclass(frozen=True)
class PipelineSpec(Validation):
    """The end-to-end run behind the approximate-eigenvector bound at one dimension.

    Attributes
    ----------
    n: int
    t, s: float, int
        The bound covers unit v with ||(G - zI) v|| <= s / sqrt(n), with probability
        1 - n^{-t}.
    dist: DistributionSpec
    trials: int
        Matrices sampled for the scan and for the localization search.
    seed: int
    w: float
        The residual scale of the localization event.
    net_samples: int
        The number of net points each localization search visits.
    optimizer: OptimizerParams
    constants: CalibrationConstants

    """

    n: int
    t: float = 2.0
    s: int = 0
    dist: DistributionSpec = DistributionSpec()
    trials: int = 10
    seed: int = 0
    w: float = 1.0
    net_samples: int = 8
    optimizer: OptimizerParams = OptimizerParams()
    constants: CalibrationConstants = CalibrationConstants()

    def validate_n(self, value: int, **_) -> int:
        if value < 8:
            raise ValueError("n must be at least 8")
        return int(value)

    def validate_t(self, value: float, **_) -> float:
        if value <= 0:
            raise ValueError("t must be greater than zero")
        return float(value)

    def validate_s(self, value: int, **_) -> int:
        if value < 0:
            raise ValueError("s must be nonnegative")
        return int(value)

    def validate_trials(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("trials must be greater than zero")
        return int(value)

    def validate_net_samples(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("net_samples must be greater than zero")
        return int(value)


@dataclass(frozen=True)
class PipelineResult:
    manifest: Dict[str, Any]
    report: Optional[DelocalizationReport] = None
    searches: List[LocalizationSearchResult] = field(default_factory=list, repr=False)
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def vacuous(self) -> bool:
        return bool(self.manifest["vacuous"])


def full_pipeline(spec: PipelineSpec, threads: int = 1) -> PipelineResult:
    """Runs the delocalization scan, builds the (1/sqrt(n))-net of the disc of radius
    2 C1 sqrt(n) and runs the localization search at a subsample of the net.

    A vacuous regime short-circuits before any sampling. Sub-experiments draw from seeds derived
    from spec.seed: key 0 for the scan, 1 for the net subsample and 2 for the search.

    """
    n, constants = spec.n, spec.constants
    manifest: Dict[str, Any] = {
        "n": n,
        "t": spec.t,
        "s": spec.s,
        "seed": spec.seed,
        "trials": spec.trials,
        "w": spec.w,
        "dist": spec.dist.to_dict(),
        "constants": constants.to_dict(),
        "approximate_bound": approximate_bound(n, spec.t, spec.s, constants),
    }
    if is_vacuous(n, spec.t, spec.s, constants):
        log.info("pipeline n=%d t=%g s=%d is vacuous; skipping sampling", n, spec.t, spec.s)
        manifest.update(vacuous=True, l=None)
        return PipelineResult(manifest)

    l = choose_l(n, spec.t, spec.s, constants.C_l)
    W = main_threshold(n, l, constants.C_W)
    manifest.update(vacuous=False, l=l, W=W, threshold=W * math.sqrt(l / n))

    report = eigenvector_deloc_scan(
        [n], spec.dist, spec.trials, spec.t, derive_seed(spec.seed, 0), constants, threads
    )

    net = disc_net(2 * constants.C1 * math.sqrt(n), 1 / math.sqrt(n))
    picks = stream(derive_seed(spec.seed, 1)).choice(
        len(net), size=min(spec.net_samples, len(net)), replace=False
    )
    points = [net[i] for i in sorted(picks)]
    manifest.update(net_size=len(net), net_points=[[z.real, z.imag] for z in points])

    searches: List[LocalizationSearchResult] = []
    search_seed = derive_seed(spec.seed, 2)

    def trial_fn(trial: int, rng: random.Generator) -> TrialRecord:
        G = draw(spec.dist, rng, (n, n))
        params = OptimizerParams(
            spec.optimizer.rounds,
            spec.optimizer.iterations,
            spec.optimizer.starts,
            spec.optimizer.mu0,
            derive_seed(search_seed, trial),
        )
        result = localization_search(G, W, l, points, params, threads)
        searches.append(result)
        return TrialRecord(
            trial,
            n,
            result.residual,
            spec.w / math.sqrt(n),
            result.is_witness(spec.w),
            {
                "inf_norm": result.inf_norm,
                "feasible": float(result.feasible),
                "norm_event": float(norm_event_check(G, constants.C1)),
            },
        )

    records = TrialRunner(
        trial_fn, spec.trials, search_seed, post_processors=[LogProgress("localize")]
    ).run()
    witnesses = sum(r.violated for r in records)
    manifest.update(
        deloc={
            "median": report.summaries[n].quantile(0.5),
            "maximum": report.summaries[n].maximum,
            "violations": report.violations,
            "failures": report.failures,
        },
        localization={"trials": len(records), "witnesses": witnesses},
    )
    log.info("pipeline n=%d l=%d: %d localization witness(es)", n, l, witnesses)
    return PipelineResult(manifest, report, searches, records)
