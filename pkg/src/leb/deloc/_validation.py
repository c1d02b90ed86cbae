from typing import Sequence

import numpy as np

__all__ = [
    "AcceptanceError",
    "CalibrationMissingError",
    "ConfigurationError",
    "DelocError",
    "NonMonotoneError",
    "RankDeficientError",
    "ResidualError",
    "SingularMinorError",
    "StageError",
    "Validation",
    "require_finite",
]


class Validation:
    def __post_init__(self):
        """Run validation methods if declared.

        The validation method can be a simple check that raises ValueError or a transformation to
        the field value.

        The validation is performed by calling a function named:
            `validate_<field_name>(self, value, field) -> field.type`

        Fields are validated in declaration order, so a validator may rely on the fields declared
        before it having been validated already.

        """
        for name, field in self.__dataclass_fields__.items():
            if method := getattr(self, f"validate_{name}", None):
                object.__setattr__(self, name, method(getattr(self, name), field=field))


class DelocError(Exception):
    """Base class of all errors raised by leb.deloc."""


class ConfigurationError(DelocError, ValueError):
    """An experiment or CLI configuration is inconsistent or contains unknown keys."""


class CalibrationMissingError(ConfigurationError):
    """A probe that asserts against calibrated constants was run without a calibration file."""


class NonMonotoneError(DelocError, ValueError):
    """A sequence that must be nonincreasing increases at `index`."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"sequence increases at index {index}")


class RankDeficientError(DelocError, np.linalg.LinAlgError):
    """A matrix that must have full (row) rank does not; `index` names the offending row."""

    def __init__(self, message: str, index: int = -1):
        self.index = index
        super().__init__(message)


class SingularMinorError(RankDeficientError):
    """The minor obtained by removing the first l rows and columns is numerically singular."""


class ResidualError(DelocError, ArithmeticError):
    """Eigenpairs whose refined residual exceeds the requested tolerance."""

    def __init__(self, indices: Sequence[int], worst: float):
        self.indices = list(indices)
        self.worst = worst
        super().__init__(
            f"{len(self.indices)} eigenpair(s) exceed the residual tolerance "
            f"(worst relative residual {worst:.3e})"
        )


class StageError(DelocError):
    """Wraps an error raised by one stage of a multi-stage construction."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"[{stage}] {cause}")


class AcceptanceError(DelocError):
    """An empirical check failed its acceptance threshold."""


def require_finite(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Returns `matrix` as an array, raising ValueError if it holds NaN or infinite entries."""
    array = np.asanyarray(matrix)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must have finite entries")
    return array
