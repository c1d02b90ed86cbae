import math

import pytest

from leb.deloc import PROBE_FAMILIES, CalibrationConstants, CalibrationMissingError
from leb.deloc.ensembles import DistributionSpec, Kind
from leb.deloc.experiments import MAX_CUT, main_threshold
from leb.deloc.sv_probes import calibrate, calibration_path, load_calibration


@pytest.fixture(scope="module")
def constants():
    return calibrate(DistributionSpec(Kind.RADEMACHER), n=16, trials=20, seed=3)


def test_every_probe_family_is_calibrated(constants):
    assert constants.family == "rademacher"
    assert set(constants.probes) == set(PROBE_FAMILIES)
    assert all(c.lower > 0 and c.upper > 0 for c in constants.probes.values())


def test_balancing_and_envelope_are_calibrated(constants):
    assert constants.alpha_const > 0
    assert constants.kappa > 0
    assert constants.C_main > 0


def test_localization_cut_is_below_one(constants):
    n, l = 16, 4

    cut = main_threshold(n, l, constants.C_W) * math.sqrt(l / n)

    assert 0 < cut < MAX_CUT + 1e-12


def test_calibration_is_deterministic(constants):
    again = calibrate(DistributionSpec(Kind.RADEMACHER), n=16, trials=20, seed=3)

    assert again.to_dict() == constants.to_dict()


def test_round_trip_through_the_calibration_directory(constants, tmp_path):
    constants.save(calibration_path("rademacher", tmp_path))

    loaded = load_calibration(DistributionSpec(Kind.RADEMACHER), tmp_path)

    assert loaded == constants


def test_missing_calibration(tmp_path):
    with pytest.raises(CalibrationMissingError):
        load_calibration("gaussian", tmp_path)


def test_requires_n_of_at_least_16():
    with pytest.raises(ValueError):
        calibrate(n=8, trials=10)


def test_calibration_path_uses_the_family_name(tmp_path):
    assert calibration_path(DistributionSpec(), tmp_path) == tmp_path / "gaussian.json"


class TestCalibrationConstants:
    def test_unknown_keys(self):
        with pytest.raises(ValueError):
            CalibrationConstants.from_dict({"C_main": 1.0, "C_mian": 2.0})

    def test_unknown_probe_family(self):
        with pytest.raises(ValueError):
            CalibrationConstants(probes={"largest_sv": {"lower": 1.0, "upper": 1.0}})

    @pytest.mark.parametrize("name", ["kappa", "C_main", "c_window"])
    def test_constants_must_be_positive(self, name):
        with pytest.raises(ValueError):
            CalibrationConstants(**{name: 0.0})

    def test_missing_probe_reads_as_unit_constants(self):
        probe = CalibrationConstants().probe("tall")

        assert (probe.lower, probe.upper) == (1.0, 1.0)
