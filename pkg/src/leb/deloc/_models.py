import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Protocol, Union

import numpy as np

from ._validation import ConfigurationError, Validation

__all__ = [
    "CalibrationConstants",
    "Matrix",
    "PROBE_FAMILIES",
    "ProbeConstants",
    "TrialFunction",
    "TrialRecord",
    "Vector",
]

Matrix = np.ndarray
Vector = np.ndarray

PROBE_FAMILIES = (
    "isotropic",
    "anisotropic",
    "smallest_sv",
    "intermediate_sv",
    "product_sv",
    "fat",
    "tall",
    "concentration",
    "small_ball",
    "product_norm",
    "column_ratio",
)


@dataclass(frozen=True)
class TrialRecord:
    """The outcome of a single Monte Carlo trial.

    Attributes
    ----------
    trial: int
        The trial index. Together with the master seed it determines the random stream.
    n: int
        The dimension the trial was run at.
    statistic: float
        The measured quantity.
    bound: float
        The bound the statistic is compared against (NaN when the trial is report-only).
    violated: bool
        Whether the statistic falls on the wrong side of the bound.
    extras: Mapping[str, float]
        Additional named per-trial quantities.

    """

    trial: int
    n: int
    statistic: float
    bound: float = float("nan")
    violated: bool = False
    extras: Mapping[str, float] = field(default_factory=dict)


class TrialFunction(Protocol):
    """Computes one Monte Carlo trial from its index and its private random stream."""

    def __call__(self, trial: int, rng: np.random.Generator) -> TrialRecord:
        ...


@dataclass(frozen=True)
class ProbeConstants(Validation):
    """The (c, C) pair of a probe family, fixed by a calibration run."""

    lower: float = 1.0
    upper: float = 1.0

    def validate_lower(self, value: float, **_) -> float:
        if value <= 0:
            raise ValueError("lower must be greater than zero")
        return float(value)

    def validate_upper(self, value: float, **_) -> float:
        if value <= 0:
            raise ValueError("upper must be greater than zero")
        return float(value)


@dataclass(frozen=True)
class CalibrationConstants(Validation):
    """Every constant the theory leaves unspecified, in one serializable record.

    Attributes
    ----------
    family: str
        The distribution family the constants were calibrated for.
    c_window: float
        The constant c in delta = c / log R of the spectral window selection.
    alpha_const: float
        The constant c in alpha = c / (l log^{3/2} n) of the balancing event.
    kappa: float
        The constant kappa of the balancing event.
    K1: float
        The shift z is confined to the disc |z| <= K1 sqrt(n).
    C_main, exponent_t, exponent_log: float
        The envelope C t^{exponent_t} log^{exponent_log} n of the delocalization bound.
    C_l: float
        The constant in l = C_l t (s + 1) log^2 n.
    c_vacuous: float
        The regime t (s + 1) > c_vacuous n / log^2 n is reported as vacuous.
    C_W: float
        The constant in the localization threshold W = C_W l log^{3/2} n.
    C1: float
        The spectral norm event ||G|| <= C1 sqrt(n).
    c_truncation: float
        The constant in the truncation level K = (c t log n)^{1 / alpha}.
    probes: Mapping[str, ProbeConstants]
        Calibrated (c, C) per probe family.

    """

    family: str = "gaussian"
    c_window: float = 0.125
    alpha_const: float = 1.0
    kappa: float = 0.1
    K1: float = 0.5
    C_main: float = 1.0
    exponent_t: float = 1.5
    exponent_log: float = 4.5
    C_l: float = 1.0
    c_vacuous: float = 1.0
    C_W: float = 1.0
    C1: float = 2.0
    c_truncation: float = 1.0
    probes: Mapping[str, ProbeConstants] = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        for name in (
            "c_window",
            "alpha_const",
            "kappa",
            "K1",
            "C_main",
            "exponent_t",
            "exponent_log",
            "C_l",
            "c_vacuous",
            "C_W",
            "C1",
            "c_truncation",
        ):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be greater than zero")

    def validate_probes(self, value: Mapping[str, Any], **_) -> Dict[str, ProbeConstants]:
        probes = {}
        for name, constants in value.items():
            if name not in PROBE_FAMILIES:
                raise ConfigurationError(f"unknown probe family: {name}")
            if not isinstance(constants, ProbeConstants):
                constants = ProbeConstants(**constants)
            probes[name] = constants
        return probes

    def probe(self, name: str) -> ProbeConstants:
        if name not in PROBE_FAMILIES:
            raise ConfigurationError(f"unknown probe family: {name}")
        return self.probes.get(name, ProbeConstants())

    def with_probe(self, name: str, constants: ProbeConstants) -> "CalibrationConstants":
        return replace(self, probes={**self.probes, name: constants})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["probes"] = {name: asdict(c) for name, c in sorted(self.probes.items())}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CalibrationConstants":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown calibration keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CalibrationConstants":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))
