from enum import Enum
from typing import Optional, Union

import numpy as np
from numpy import random

from leb.deloc import Matrix
from leb.deloc.ensembles import stream

__all__ = [
    "ShiftType",
    "geometric_decay",
    "haar_orthogonal",
    "identity",
    "padded_identity",
    "rotated_decay",
    "shift_factory",
    "zero",
]


class ShiftType(Enum):
    ZERO = "zero"
    IDENTITY = "identity"
    GEOMETRIC_DECAY = "geometric-decay"
    ROTATED_DECAY = "rotated-decay"
    PADDED_IDENTITY = "padded-identity"


def shift_factory(shift_type: Union[ShiftType, str], *args, **kwargs) -> Matrix:
    """Builds one of the named deterministic matrices used as shifts D in the probes."""
    shift_type = ShiftType(shift_type)

    if shift_type == ShiftType.IDENTITY:
        return identity(*args, **kwargs)
    if shift_type == ShiftType.GEOMETRIC_DECAY:
        return geometric_decay(*args, **kwargs)
    if shift_type == ShiftType.ROTATED_DECAY:
        return rotated_decay(*args, **kwargs)
    if shift_type == ShiftType.PADDED_IDENTITY:
        return padded_identity(*args, **kwargs)

    return zero(*args, **kwargs)


def zero(rows: int, cols: Optional[int] = None, *_, **__) -> Matrix:
    return np.zeros((rows, rows if cols is None else cols))


def identity(n: int, *_, **__) -> Matrix:
    return np.eye(n)


def geometric_decay(n: int, *_, ratio: float = 0.97, **__) -> Matrix:
    """The diagonal matrix with entries s_i = ratio^{i-1}."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    return np.diag(ratio ** np.arange(n))


def haar_orthogonal(n: int, rng: random.Generator) -> Matrix:
    """Draws an orthogonal matrix from the Haar measure.

    The Q factor of a Gaussian matrix is Haar distributed once the signs of diag(R) are absorbed
    into its columns.

    """
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    L = np.diag(R).copy()
    L[L == 0] = 1
    Q *= L / np.abs(L)
    return Q


def rotated_decay(
    n: int,
    *_,
    ratio: float = 0.97,
    rng: Optional[random.Generator] = None,
    **__,
) -> Matrix:
    """A Haar orthogonal rotation of the geometric decay diagonal.

    The singular values equal those of `geometric_decay(n, ratio=ratio)`. Without `rng` the rotation
    is drawn from the fixed stream of seed 0, so the matrix is a deterministic function of n.

    """
    if rng is None:
        rng = stream(0)
    return haar_orthogonal(n, rng) @ geometric_decay(n, ratio=ratio)


def padded_identity(rows: int, cols: Optional[int] = None, *_, scale: Optional[float] = None, **__):
    """The rows x cols matrix scale * [I_cols; 0]; scale defaults to sqrt(cols)."""
    if cols is None:
        cols = rows
    if rows < cols:
        raise ValueError("padded_identity requires rows >= cols")
    if scale is None:
        scale = np.sqrt(cols)
    return scale * np.eye(rows, cols)
