import pytest

from leb.deloc import CalibrationConstants, ProbeConstants


@pytest.fixture
def calibration(tmp_path):
    """A calibration file whose probe constants leave a wide margin at small n."""
    constants = (
        CalibrationConstants()
        .with_probe("smallest_sv", ProbeConstants(0.01, 1.0))
        .with_probe("anisotropic", ProbeConstants(0.05, 1.0))
    )
    return str(constants.save(tmp_path / "calibration" / "gaussian.json"))


@pytest.fixture
def out(tmp_path):
    return tmp_path / "results"
