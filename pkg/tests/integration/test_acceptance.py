"""End-to-end checks of the delocalization experiments.

Every test runs at reduced sizes by default; `pytest --acceptance` runs the full sizes.

"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pytest

from leb.deloc import CalibrationConstants, ProbeConstants
from leb.deloc.cli import EXIT_OK, replay, run
from leb.deloc.distances import (
    DistanceExperimentSpec,
    calibrate_distance_constants,
    isotropic_distance_trial,
    tail_probability_estimate,
)
from leb.deloc.ensembles import DistributionSpec, Kind, derive_seed, draw, stream, trial_rng
from leb.deloc.ensembles.factories import ShiftType
from leb.deloc.experiments import (
    OptimizerParams,
    approx_eigen_residual,
    balancing_alpha,
    balancing_event_mc,
    calibrate_balancing,
    calibrate_envelope,
    calibrate_threshold,
    coefficient_balancing_oracle,
    eigenvector_deloc_scan,
    localization_search,
    main_threshold,
)
from leb.deloc.linalg import negative_second_moment
from leb.deloc.spectral_window import select_window, tail_sums, verify_window
from leb.deloc.sv_probes import (
    SvProbeSpec,
    calibrate_constants,
    coordinate_coisometry,
    intermediate_sv_probe,
    product_sv_probe,
    smallest_sv_probe,
)
from leb.deloc.test_projection import (
    TestProjectionInput,
    build_test_projection,
    coisometry_error,
    column_norm_ratio,
    column_norm_via_distance,
    kernel_residual,
)

pytestmark = pytest.mark.acceptance


@dataclass(frozen=True)
class Sizes:
    identities: int = 20
    projection: Tuple[int, int, int] = (64, 8, 10)
    isotropic_trials: int = 300
    anisotropic: Tuple[int, int, int, int, int] = (60, 12, 9, 15, 100)
    balancing: Tuple[int, int, int] = (64, 8, 40)
    scan: Tuple[Tuple[int, ...], int] = ((16, 32, 64), 10)
    probes: Tuple[int, int, int] = (20, 5, 50)
    localization: Tuple[int, int] = (32, 5)


FULL = Sizes(
    identities=100,
    projection=(256, 31, 200),
    isotropic_trials=2000,
    anisotropic=(200, 40, 30, 50, 1000),
    balancing=(256, 31, 500),
    scan=((64, 128, 256, 512), 100),
    probes=(100, 25, 300),
    localization=(256, 50),
)


@pytest.fixture(scope="module")
def sizes(acceptance):
    return FULL if acceptance else Sizes()


def test_exact_identities(sizes):
    rng = stream(1)
    for trial in range(sizes.identities):
        n = int(rng.integers(2, 51))
        lhs, rhs = negative_second_moment(rng.standard_normal((n, n)))
        assert lhs == pytest.approx(rhs, rel=1e-8), trial

        m = int(rng.integers(2, 8))
        Q = np.hstack([np.eye(m), rng.standard_normal((m, int(rng.integers(1, 20))))])
        P = np.linalg.qr(Q.T)[0].T
        for i in range(m):
            direct = np.linalg.norm(P[:, i])
            assert column_norm_via_distance(Q, i) == pytest.approx(direct, rel=1e-8)


@pytest.mark.parametrize("kind", [Kind.GAUSSIAN, Kind.RADEMACHER])
@pytest.mark.parametrize("shifted", [False, True])
def test_test_projection_contract(sizes, kind, shifted):
    n, l, trials = sizes.projection
    dist = DistributionSpec(kind)
    z = math.sqrt(n) / 2 if shifted else 0.0

    for trial in range(trials):
        rng = trial_rng(7, trial)
        A = draw(dist, rng, (n, n)) - z * np.eye(n)
        tp = build_test_projection(TestProjectionInput(A, l))
        B = A.copy()
        B[:, :l] = draw(dist, rng, (n, l))
        other = build_test_projection(TestProjectionInput(B, l))

        assert coisometry_error(tp) <= 1e-10
        assert kernel_residual(tp) <= 1e-6
        assert column_norm_ratio(tp)[1]
        np.testing.assert_allclose(tp.P, other.P, rtol=0, atol=1e-10)


def decay_profile(family: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if family == "power":
        return np.sort(rng.exponential(size=n) ** rng.uniform(0.1, 10))[::-1]
    if family == "geometric":
        return rng.uniform(0.5, 1.0) ** np.arange(n)
    if family == "plateau":
        levels = rng.uniform(size=int(rng.integers(1, 6)))
        return np.sort(rng.choice(levels, size=n))[::-1]
    values = np.ones(n)
    values[int(rng.integers(1, n + 1)) :] *= 10.0 ** -rng.uniform(1, 12)
    return values


@pytest.mark.parametrize(
    "seed, family", [(3, "power"), (4, "geometric"), (5, "plateau"), (6, "cliff")]
)
def test_window_lemma(seed, family):
    rng = stream(seed)
    for _ in range(250):
        n = int(rng.integers(2, 200))
        seq = tail_sums(decay_profile(family, n, rng))
        l = int(rng.integers(1, n + 1))
        if seq.s(l) <= 0:
            continue
        result = select_window(seq, l)
        assert math.ceil(l / 2) <= result.l_prime <= l
        assert verify_window(seq, result.l_prime, result.delta)


def test_coefficient_balancing_lemma(sizes):
    rng = stream(4)
    for _ in range(2 * sizes.identities):
        n = int(rng.integers(4, 13))
        l = int(rng.integers(1, 5))
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        assert coefficient_balancing_oracle(v, l) >= 1 / (2 * n)


@pytest.mark.parametrize("kind", [Kind.GAUSSIAN, Kind.RADEMACHER])
def test_isotropic_distance(sizes, kind):
    n, k, trials = 50, 20, sizes.isotropic_trials
    dist = DistributionSpec(kind)

    squares = np.array(
        [isotropic_distance_trial(n, k, dist, trial_rng(5, t)) ** 2 for t in range(trials)]
    )

    standard_error = squares.std(ddof=1) / math.sqrt(trials)
    assert abs(squares.mean() - (n - k)) <= 4 * standard_error


@pytest.mark.parametrize(
    "shift", [ShiftType.IDENTITY, ShiftType.GEOMETRIC_DECAY, ShiftType.ROTATED_DECAY]
)
def test_anisotropic_distance(sizes, shift):
    n, k, k0, k1, trials = sizes.anisotropic
    pilot = DistanceExperimentSpec(n, k, k0, k1, D=shift, trials=trials // 2, seed=1)
    c, C = calibrate_distance_constants(pilot)

    spec = DistanceExperimentSpec(n, k, k0, k1, D=shift, trials=trials, seed=2)
    stats = tail_probability_estimate(spec, c, C)

    assert stats.lower_frequency <= 0.01
    assert stats.upper_frequency <= 0.01


@pytest.mark.parametrize("on_boundary", [False, True])
def test_balancing_event(sizes, on_boundary):
    n, l, trials = sizes.balancing
    constants = CalibrationConstants()
    alpha_const, kappa = calibrate_balancing(n, l, trials=trials // 2, seed=1)
    z = constants.K1 * math.sqrt(n) if on_boundary else 0.0

    estimate = balancing_event_mc(
        n,
        l,
        z,
        trials=trials,
        seed=2,
        alpha=balancing_alpha(n, l, alpha_const),
        kappa=kappa,
    )

    assert estimate.frequency >= estimate.target - 3 * estimate.half_width


@pytest.mark.parametrize("kind", [Kind.GAUSSIAN, Kind.RADEMACHER])
def test_delocalization_scan(sizes, kind):
    n_list, trials = sizes.scan
    dist = DistributionSpec(kind)
    C_main = calibrate_envelope(dist, n_list[:2], trials, seed=1)

    report = eigenvector_deloc_scan(
        n_list, dist, trials, seed=2, constants=CalibrationConstants(kind.value, C_main=C_main)
    )

    assert report.violations == 0
    assert report.scaling_spread() <= 2.0


def test_singular_value_probes(sizes):
    n, m, trials = sizes.probes

    stats = intermediate_sv_probe(SvProbeSpec((n, n), trials=trials), n // 2)
    assert stats.extras["prefix_failures"] == 0

    pilot = smallest_sv_probe(SvProbeSpec((2 * n, n), trials=trials, seed=1))
    c = calibrate_constants(pilot.records, "lower")
    spec = SvProbeSpec((2 * n, n), trials=trials, seed=2, constants=ProbeConstants(c))
    stats = smallest_sv_probe(spec)
    assert stats.violation_frequency <= 0.01

    P = coordinate_coisometry(m, 4 * m)
    pilot = product_sv_probe(P, 4 * m, trials=trials, seed=1)
    c = calibrate_constants(pilot.statistics * 4 / 3, "lower")
    stats = product_sv_probe(P, 4 * m, trials=trials, seed=2, constants=ProbeConstants(c))
    assert stats.violation_frequency <= 0.01


def test_localization_search(sizes):
    n, trials = sizes.localization
    l = math.ceil(math.log(n) ** 2) if n >= 256 else 2
    C_W = calibrate_threshold(n, l, trials=max(5, trials // 2), seed=1)
    W = main_threshold(n, l, C_W)
    witnesses = 0

    for trial in range(trials):
        G = draw(DistributionSpec(), trial_rng(9, trial), (n, n))
        params = OptimizerParams(rounds=2, iterations=50, starts=8, seed=derive_seed(9, trial))
        result = localization_search(G, W, l, [0, 1j], params)
        assert not result.trace.get("short_circuit")
        assert result.threshold < 1
        witnesses += result.is_witness(1.0)
        assert approx_eigen_residual(G, result.vector)[1] == pytest.approx(result.residual)

    assert witnesses <= 0.05 * trials


@pytest.mark.parametrize(
    "argv",
    [
        ("deloc-scan", ["run.n=16", "run.trials=4"]),
        ("test-projection", ["run.n=32", "run.l=4", "run.trials=3"]),
    ],
)
def test_replay_is_byte_identical(tmp_path, argv):
    command, overrides = argv
    calibration = CalibrationConstants().save(tmp_path / "gaussian.json")
    first = tmp_path / "first"
    assert run(command, None, overrides, str(first), str(calibration)) == EXIT_OK

    for threads in (1, 8):
        again = tmp_path / f"threads-{threads}"
        assert replay(str(first / "manifest.json"), str(again), threads) == EXIT_OK
        for report in first.glob("*.csv"):
            assert report.read_bytes() == (again / report.name).read_bytes()
