import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Tuple

import numpy as np
import numpy.typing as npt

from leb.deloc import NonMonotoneError, Validation, Vector

__all__ = [
    "DecaySequence",
    "WindowResult",
    "select_window",
    "tail_sums",
    "verify_window",
    "window_indices",
]

log = logging.getLogger(__name__)

MAX_DELTA = 1 / 16
MAX_HALVINGS = 64


@dataclass(frozen=True)
class DecaySequence(Validation):
    """A nonincreasing sequence s_1 >= ... >= s_n >= 0 with its squared tail sums.

    Indexing follows the mathematical convention: `s(i)` is the i-th value for 1 <= i <= n and
    `tail(k)` is S_k = (sum_{j > k} s_j^2)^{1/2} for 0 <= k <= n. Indices beyond n read as zero.

    """

    values: Vector
    tail_sums_sq: Vector = field(init=False, repr=False)

    def validate_values(self, value: npt.ArrayLike, **_) -> Vector:
        value = np.asarray(value, dtype=float)
        if value.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ValueError("values must be finite and nonnegative")
        if increases := np.flatnonzero(np.diff(value) > 0).tolist():
            raise NonMonotoneError(increases[0] + 1)
        return value

    def __post_init__(self):
        super().__post_init__()
        # S_k^2 by backward accumulation; the trailing zero is S_n^2.
        tails = np.append(np.cumsum(self.values[::-1] ** 2)[::-1], 0.0)
        object.__setattr__(self, "tail_sums_sq", tails)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def s(self, i: int) -> float:
        if i < 1:
            raise IndexError("singular values are indexed from 1")
        return float(self.values[i - 1]) if i <= self.n else 0.0

    def tail_sq(self, k: int) -> float:
        if k < 0:
            raise IndexError("tail sums are indexed from 0")
        return float(self.tail_sums_sq[k]) if k <= self.n else 0.0

    def tail(self, k: int) -> float:
        return math.sqrt(self.tail_sq(k))


def tail_sums(values: npt.ArrayLike) -> DecaySequence:
    return DecaySequence(values)


@dataclass(frozen=True)
class WindowResult:
    """A spectral window l' in [l/2, l] over which the sequence is regular at scale delta.

    Attributes
    ----------
    l_prime: int
    delta: float
        The scale actually used; it may be smaller than c_window / log R when the first scale
        admits no verified window.
    R: float
        The ratio s_{ceil(l/2)} / s_l, clamped to be at least 2.
    l: int
        The upper end of the search range.

    """

    l_prime: int
    delta: float
    R: float
    l: int

    @property
    def bounds(self) -> Tuple[int, int]:
        return window_indices(self.l_prime, self.delta)


def window_indices(l_prime: int, delta: float) -> Tuple[int, int]:
    """The rounded window (ceil((1 - delta) l'), floor((1 + delta) l'))."""
    lower = max(1, math.ceil((1 - delta) * l_prime - 1e-12))
    upper = max(lower, math.floor((1 + delta) * l_prime + 1e-12))
    return lower, upper


def verify_window(seq: DecaySequence, l_prime: int, delta: float) -> bool:
    """True iff s_lo^2 <= 2 s_hi^2 and S_lo^2 <= 5 S_hi^2 for (lo, hi) = window_indices."""
    lower, upper = window_indices(l_prime, delta)
    if lower > seq.n:
        return False
    return (
        seq.s(lower) ** 2 <= 2 * seq.s(upper) ** 2
        and seq.tail_sq(lower) <= 5 * seq.tail_sq(upper)
    )


def _block_candidates(l: int, delta: float):
    """Yields (first index, last index, midpoint) of the blocks dividing [l/2, l]."""
    num_blocks = max(2, min(l, math.floor(1 / (8 * delta))))
    for block in range(num_blocks):
        start = Fraction(l * (num_blocks + block), 2 * num_blocks)
        end = Fraction(l * (num_blocks + block + 1), 2 * num_blocks)
        midpoint = math.floor((start + end) / 2 + Fraction(1, 2))
        yield max(1, math.floor(start)), math.ceil(end), midpoint


def select_window(seq: DecaySequence, l: int, c_window: float = 0.125) -> WindowResult:
    """Selects l' in [l/2, l] where the sequence and its tail sums are locally flat.

    The range [l/2, l] is cut into max(2, floor(1 / (8 delta))) blocks with
    delta = min(1/16, c_window / log R). Blocks are scanned left to right and the midpoint of the
    first block over which s_i^2 drops by a factor of at most 2 is returned, provided it passes
    `verify_window`. If no block qualifies, every l' in the range is tried at the same delta; if
    that fails too, delta is halved. Once delta * l < 1 every window is a single index and the
    scan succeeds, so the search always terminates.

    """
    if not 1 <= l <= seq.n:
        raise ValueError(f"l must lie in [1, {seq.n}]")
    if c_window <= 0:
        raise ValueError("c_window must be greater than zero")
    if seq.s(l) <= 0:
        raise ValueError(f"the sequence vanishes at l={l}")

    R = max(2.0, seq.s(math.ceil(l / 2)) / seq.s(l))
    delta = min(MAX_DELTA, c_window / math.log(R))
    low = max(1, math.ceil(l / 2))

    for _ in range(MAX_HALVINGS):
        for first, last, midpoint in _block_candidates(l, delta):
            if seq.s(first) ** 2 > 2 * seq.s(min(last, seq.n)) ** 2:
                continue
            l_prime = min(max(midpoint, low), l)
            if verify_window(seq, l_prime, delta):
                return WindowResult(l_prime, delta, R, l)

        for l_prime in range(low, l + 1):
            if verify_window(seq, l_prime, delta):
                log.debug("no block at delta=%.3g; direct scan chose l'=%d", delta, l_prime)
                return WindowResult(l_prime, delta, R, l)

        log.debug("no window at delta=%.3g; halving", delta)
        delta /= 2

    raise NonMonotoneError(l, f"no spectral window found in [{low}, {l}]")
