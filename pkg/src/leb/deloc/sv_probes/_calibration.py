import logging
import math
import os
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from numpy import random

from leb.deloc import (
    CalibrationConstants,
    CalibrationMissingError,
    ProbeConstants,
    StageError,
    TrialRecord,
)
from leb.deloc.distances import (
    DistanceExperimentSpec,
    calibrate_distance_constants,
    isotropic_distance_trial,
)
from leb.deloc.ensembles import DistributionSpec, derive_seed, draw
from leb.deloc.ensembles.factories import ShiftType
from leb.deloc.experiments import calibrate_balancing, calibrate_envelope, calibrate_threshold
from leb.deloc.test_projection import (
    TestProjectionInput,
    build_test_projection,
    column_norm_ratio,
)
from leb.deloc.trials import TrialRunner

from ._sv_probes import (
    SvProbeSpec,
    calibrate_constants,
    concentration_probe,
    coordinate_coisometry,
    fat_matrix_probe,
    intermediate_sv_probe,
    product_norm_probe,
    product_sv_probe,
    small_ball_probe,
    smallest_sv_probe,
    tall_matrix_probe,
)

__all__ = [
    "CALIBRATION_DIR",
    "calibrate",
    "calibration_path",
    "load_calibration",
]

log = logging.getLogger(__name__)

CALIBRATION_DIR: str = os.environ.get("DELOC_CALIBRATION_DIR", "calibration")

TALL_ASPECT = 4


def calibration_path(
    dist: Union[DistributionSpec, str], directory: Optional[Union[str, Path]] = None
) -> Path:
    """<directory>/<kind>.json, with the directory defaulting to DELOC_CALIBRATION_DIR."""
    family = dist.kind.value if isinstance(dist, DistributionSpec) else dist
    return Path(CALIBRATION_DIR if directory is None else directory) / f"{family}.json"


def load_calibration(
    dist: Union[DistributionSpec, str], directory: Optional[Union[str, Path]] = None
) -> CalibrationConstants:
    path = calibration_path(dist, directory)
    if not path.is_file():
        raise CalibrationMissingError(f"no calibration file at {path}; run `deloc calibrate`")
    return CalibrationConstants.load(path)


def _isotropic(dist: DistributionSpec, n: int, trials: int, seed: int, safety: float):
    k = 2 * n // 5

    def trial_fn(trial: int, rng: random.Generator):
        return TrialRecord(trial, n, isotropic_distance_trial(n, k, dist, rng))

    samples = np.array([r.statistic for r in TrialRunner(trial_fn, trials, seed).run()])
    scale = math.sqrt(n - k)
    rms = float(np.sqrt(np.mean(samples**2)))
    return ProbeConstants(float(samples.min()) / (safety * scale), safety * rms / scale)


def _anisotropic(dist: DistributionSpec, n: int, trials: int, seed: int, safety: float):
    k = max(4, n // 5)
    k0, k1 = math.ceil(3 * k / 4), min(n, k + k // 2)
    pairs = [
        calibrate_distance_constants(
            DistanceExperimentSpec(n, k, k0, k1, D=shift, dist=dist, trials=trials, seed=seed),
            safety,
        )
        for shift in (ShiftType.IDENTITY, ShiftType.GEOMETRIC_DECAY, ShiftType.ROTATED_DECAY)
    ]
    return ProbeConstants(min(c for c, _ in pairs), max(C for _, C in pairs))


def _column_ratio(dist: DistributionSpec, n: int, trials: int, seed: int, safety: float):
    l = max(2, n // 8)

    def trial_fn(trial: int, rng: random.Generator):
        try:
            tp = build_test_projection(TestProjectionInput(draw(dist, rng, (n, n)), l), rng=rng)
        except StageError:
            return TrialRecord(trial, n, float("nan"))
        return TrialRecord(trial, n, column_norm_ratio(tp)[0])

    records = TrialRunner(trial_fn, trials, seed).run()
    return ProbeConstants(1.0, calibrate_constants(records, "upper", safety))


def calibrate(
    dist: DistributionSpec = DistributionSpec(),
    n: int = 100,
    trials: int = 500,
    seed: int = 0,
    threads: int = 1,
    safety: float = 2.0,
) -> CalibrationConstants:
    """Fixes every unspecified constant from pilot runs at dimension n.

    Each family runs under its own seed derived from `seed`; lower constants clear the smallest
    pilot statistic and upper constants the largest by the factor `safety`. The expensive
    families (distance bounds, test projections, balancing, the envelope and the localization
    threshold) use a tenth of the trials.

    """
    if n < 16:
        raise ValueError("calibration requires n >= 16")
    few = max(10, trials // 10)
    constants = CalibrationConstants(dist.kind.value)
    probes: Dict[str, ProbeConstants] = {}

    def pilot(key: int) -> int:
        return derive_seed(seed, key)

    probes["isotropic"] = _isotropic(dist, n // 2, trials, pilot(1), safety)
    probes["anisotropic"] = _anisotropic(dist, n, few, pilot(2), safety)

    stats = smallest_sv_probe(SvProbeSpec((2 * n, n), dist, trials, pilot(3)), threads)
    probes["smallest_sv"] = ProbeConstants(calibrate_constants(stats.records, "lower", safety))

    stats = intermediate_sv_probe(SvProbeSpec((n, n), dist, trials, pilot(4)), n // 2, threads)
    probes["intermediate_sv"] = ProbeConstants(calibrate_constants(stats.records, "lower", safety))

    m = n // 4
    stats = product_sv_probe(coordinate_coisometry(m, n), n, dist, trials, pilot(5))
    scaled = stats.statistics * n / (n - m)
    probes["product_sv"] = ProbeConstants(calibrate_constants(scaled, "lower", safety))

    m0 = m // 2
    stats = fat_matrix_probe(m, m0, SvProbeSpec((m, n), dist, trials, pilot(6)), threads)
    scaled = stats.statistics / math.sqrt((m - m0) / m0)
    probes["fat"] = ProbeConstants(calibrate_constants(scaled, "lower", safety))

    tall_m = max(1, n // 16)
    tall_spec = SvProbeSpec((tall_m, n), dist, trials, pilot(7))
    stats = tall_matrix_probe(tall_m, TALL_ASPECT * tall_m, tall_spec, threads)
    probes["tall"] = ProbeConstants(calibrate_constants(stats.records, "lower", safety))

    table = concentration_probe(np.eye(n), dist, trials, pilot(8), threads=threads)
    hit = table.empirical > 0
    c = 1.0
    if np.any(hit):
        # ||I|| = 1, so the bound reads 2 exp(-c t^2).
        c = float(np.min(-np.log(table.empirical[hit] / 2) / table.t_grid[hit] ** 2))
        c = max(c / safety, np.finfo(float).tiny)
    probes["concentration"] = ProbeConstants(c, safety * table.K_hat)

    stats = small_ball_probe(np.eye(n), np.zeros(n), dist, trials, pilot(9), threads=threads)
    c = 1.0
    if stats.violations:
        c = -math.log(stats.violation_frequency / 2) / (safety * stats.extras["stable_rank"])
    probes["small_ball"] = ProbeConstants(max(c, np.finfo(float).tiny), 1.0)

    B = np.eye(n // 2, n)
    stats = product_norm_probe(B, dist, n, trials=few, seed=pilot(10), threads=threads)
    scaled = stats.statistics / stats.threshold
    probes["product_norm"] = ProbeConstants(1.0, calibrate_constants(scaled, "upper", safety))

    probes["column_ratio"] = _column_ratio(dist, n, few, pilot(11), safety)

    l = min(n // 4, max(2, math.ceil(math.log(n) ** 2)))
    alpha_const, kappa = calibrate_balancing(
        n, l, dist, few, pilot(12), safety, constants, threads
    )
    C_main = calibrate_envelope(
        dist, (n // 2, n), few, 2.0, pilot(13), safety, constants, threads
    )
    C_W = calibrate_threshold(n, l, dist, few, 2.0, pilot(14), safety, constants, threads)

    constants = replace(
        constants,
        alpha_const=alpha_const,
        kappa=kappa,
        C_main=C_main,
        C_W=C_W,
        probes=probes,
    )
    log.info("calibrated %d probe families for %s", len(probes), constants.family)
    return constants
