import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from numpy import random
from scipy import special  # type: ignore

from leb.deloc import Matrix, Validation, require_finite

__all__ = [
    "DistributionSpec",
    "Field",
    "Kind",
    "MatrixSampleSpec",
    "derive_seed",
    "draw",
    "perturb",
    "psi_norm_estimate",
    "sample_matrix",
    "stream",
    "trial_rng",
    "truncate_and_center",
    "truncation_level",
]

log = logging.getLogger(__name__)

MAX_SEED = 2**64

# Zero mean, unit variance two-point law: sqrt(3) with probability 1/4, -1/sqrt(3) otherwise.
TWO_POINT_P = 0.25
TWO_POINT_HIGH = float(np.sqrt((1 - TWO_POINT_P) / TWO_POINT_P))
TWO_POINT_LOW = -float(np.sqrt(TWO_POINT_P / (1 - TWO_POINT_P)))

UNIFORM_HALF_WIDTH = float(np.sqrt(3.0))


class Kind(Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM_SYMMETRIC = "uniform-symmetric"
    TWO_POINT_ASYMMETRIC = "two-point-asymmetric"
    STRETCHED_EXPONENTIAL = "stretched-exponential"


class Field(Enum):
    REAL = "real"
    COMPLEX_SPLIT = "complex-split"


@dataclass(frozen=True)
class DistributionSpec(Validation):
    """The law of a single matrix entry.

    Every kind is drawn with zero mean and unit variance and then scaled by sqrt(variance). For
    the complex-split field the real and imaginary parts are independent draws of the same real
    law.

    Attributes
    ----------
    kind: Kind
    variance: float
        Second moment of each real entry (or of each part for complex-split). Must be >= 1.
    field: Field
    alpha: float
        Weibull shape of the stretched-exponential kind; ignored by the other kinds.

    """

    kind: Kind = Kind.GAUSSIAN
    variance: float = 1.0
    field: Field = Field.REAL
    alpha: float = 2.0

    def validate_kind(self, value: Union[Kind, str], **_) -> Kind:
        return Kind(value)

    def validate_variance(self, value: float, **_) -> float:
        if not value >= 1:
            raise ValueError("variance must be greater than or equal to 1")
        return float(value)

    def validate_field(self, value: Union[Field, str], **_) -> Field:
        return Field(value)

    def validate_alpha(self, value: float, **_) -> float:
        if value <= 0:
            raise ValueError("alpha must be greater than zero")
        return float(value)

    @property
    def is_complex(self) -> bool:
        return self.field is Field.COMPLEX_SPLIT

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.variance))

    def truncated_mean(self, level: float) -> Union[float, complex]:
        """Returns the exact mean of an entry after zeroing it whenever its modulus exceeds level.

        Symmetric kinds have zero truncated mean. The two-point kind is evaluated over its atoms.

        """
        if self.kind is not Kind.TWO_POINT_ASYMMETRIC:
            return 0.0

        atoms = [
            (self.scale * TWO_POINT_HIGH, TWO_POINT_P),
            (self.scale * TWO_POINT_LOW, 1 - TWO_POINT_P),
        ]
        if not self.is_complex:
            return float(sum(value * p for value, p in atoms if abs(value) <= level))

        mean = 0j
        for re, p_re in atoms:
            for im, p_im in atoms:
                if abs(complex(re, im)) <= level:
                    mean += complex(re, im) * p_re * p_im
        return mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "variance": self.variance,
            "field": self.field.value,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DistributionSpec":
        return cls(**data)


@dataclass(frozen=True)
class MatrixSampleSpec(Validation):
    rows: int
    cols: int
    dist: DistributionSpec = DistributionSpec()
    seed: int = 0

    def validate_rows(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("rows must be greater than zero")
        return int(value)

    def validate_cols(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("cols must be greater than zero")
        return int(value)

    def validate_seed(self, value: int, **_) -> int:
        if not 0 <= value < MAX_SEED:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return int(value)


def stream(seed: int) -> random.Generator:
    """The master random stream of a seed."""
    return random.Generator(random.Philox(random.SeedSequence(seed)))


def trial_rng(seed: int, trial: int) -> random.Generator:
    """The private random stream of trial `trial` under master seed `seed`.

    Streams are derived with SeedSequence spawn keys, so trial t always receives the same stream
    no matter which worker evaluates it or in which order.

    """
    return random.Generator(random.Philox(random.SeedSequence(seed, spawn_key=(trial,))))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed for the sub-experiment `keys` of master seed `seed`."""
    state = random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)).generate_state(
        1, np.uint64
    )
    return int(state[0])


def _draw_real(kind: Kind, alpha: float, rng: random.Generator, size) -> np.ndarray:
    if kind is Kind.GAUSSIAN:
        return rng.standard_normal(size)
    if kind is Kind.RADEMACHER:
        return 2.0 * rng.integers(0, 2, size=size) - 1.0
    if kind is Kind.UNIFORM_SYMMETRIC:
        return rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=size)
    if kind is Kind.TWO_POINT_ASYMMETRIC:
        return np.where(rng.random(size) < TWO_POINT_P, TWO_POINT_HIGH, TWO_POINT_LOW)
    if kind is Kind.STRETCHED_EXPONENTIAL:
        # sign * |W| with W ~ Weibull(alpha); E W^2 = Gamma(1 + 2 / alpha)
        sign = 2.0 * rng.integers(0, 2, size=size) - 1.0
        magnitude = rng.weibull(alpha, size=size)
        return sign * magnitude / np.sqrt(special.gamma(1 + 2 / alpha))
    raise ValueError(f"unsupported distribution kind: {kind}")


def draw(dist: DistributionSpec, rng: random.Generator, size) -> np.ndarray:
    """Draws an array of independent entries with law `dist`."""
    values = dist.scale * _draw_real(dist.kind, dist.alpha, rng, size)
    if dist.is_complex:
        values = values + 1j * dist.scale * _draw_real(dist.kind, dist.alpha, rng, size)
    return values


def sample_matrix(spec: MatrixSampleSpec) -> Matrix:
    """Returns a rows x cols matrix of i.i.d. entries; a pure function of the spec."""
    return draw(spec.dist, stream(spec.seed), (spec.rows, spec.cols))


def psi_norm_estimate(
    dist: DistributionSpec, alpha: float, p_max: int, samples: int, seed: int = 0
) -> float:
    """Estimates the psi_alpha norm sup_p p^{-1/alpha} (E|xi|^p)^{1/p} over p = 1, ..., p_max."""
    if alpha <= 0:
        raise ValueError("alpha must be greater than zero")
    if p_max < 1:
        raise ValueError("p_max must be at least 1")
    if samples < 1000:
        raise ValueError("samples must be at least 1000")

    magnitudes = np.abs(draw(dist, stream(seed), samples))
    orders = np.arange(1, p_max + 1)
    moments = np.array([np.mean(magnitudes**p) for p in orders])
    norms = orders ** (-1.0 / alpha) * moments ** (1.0 / orders)
    return float(np.max(norms))


def truncation_level(n: int, t: float, alpha: float, c_truncation: float = 1.0) -> float:
    """The truncation level K = (c t log n)^{1/alpha}."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return float((c_truncation * t * np.log(n)) ** (1.0 / alpha))


def truncate_and_center(
    G: Matrix, level: float, dist: Optional[DistributionSpec] = None
) -> Tuple[Matrix, Matrix]:
    """Zeroes the entries of G exceeding `level` in modulus and removes their mean.

    Returns
    -------
    centered: numpy.ndarray
        The truncated matrix minus its mean matrix; every entry is bounded by 2 * level.
    mean_matrix: numpy.ndarray
        The mean of the truncated entries, exact when `dist` is given and empirical otherwise.

    """
    if not level > 0:
        raise ValueError("level must be greater than zero")
    G = require_finite(G, "G")

    truncated = np.where(np.abs(G) <= level, G, 0)
    mean = dist.truncated_mean(level) if dist is not None else truncated.mean()
    mean_matrix = np.full(G.shape, mean, dtype=np.result_type(truncated, mean))

    if np.any(mean_matrix):
        log.debug("truncation at level %.3g leaves mean %s", level, mean)

    return truncated - mean_matrix, mean_matrix


def perturb(A: Matrix, scale: float, rng: random.Generator) -> Matrix:
    """Adds an independent Gaussian matrix with entries of standard deviation `scale`."""
    A = np.asanyarray(A)
    noise = rng.standard_normal(A.shape)
    if np.iscomplexobj(A):
        noise = noise + 1j * rng.standard_normal(A.shape)
    return A + scale * noise
