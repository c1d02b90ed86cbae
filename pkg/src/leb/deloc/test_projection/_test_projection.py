import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg  # type: ignore
from numpy import random

from leb.deloc import (
    Matrix,
    RankDeficientError,
    SingularMinorError,
    StageError,
    Validation,
    Vector,
    require_finite,
)
from leb.deloc.ensembles import perturb, stream
from leb.deloc.linalg import (
    Subspace,
    distance_to_subspace,
    orthonormalize_rows,
    singular_values,
    spectral_norm,
)
from leb.deloc.spectral_window import DecaySequence, WindowResult, select_window, window_indices

__all__ = [
    "BalancingCheck",
    "DMatrixContext",
    "DistanceBounds",
    "TestProjection",
    "TestProjectionInput",
    "balancing_event_check",
    "build_Q",
    "build_minor_context",
    "build_test_projection",
    "canonicalize",
    "coisometry_error",
    "column_norm_ratio",
    "column_norm_via_distance",
    "distance_bounds",
    "kernel_residual",
]

log = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-12
PERTURBATION_SCALE = 1e-8
ZERO_BLOCK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class TestProjectionInput(Validation):
    """A square matrix A = G - zI with the designated column indices j0 and J0 (0-based).

    J0 defaults to the first l - 1 indices other than j0.

    """

    __test__ = False

    A: Matrix
    l: int
    j0: int = 0
    J0: Optional[Sequence[int]] = None

    def validate_A(self, value: Matrix, **_) -> Matrix:
        value = require_finite(value, "A")
        if value.ndim != 2 or value.shape[0] != value.shape[1]:
            raise ValueError("A must be square")
        return value

    def validate_l(self, value: int, **_) -> int:
        if not 1 <= value < self.n:
            raise ValueError(f"l must lie in [1, {self.n - 1}]")
        return int(value)

    def validate_j0(self, value: int, **_) -> int:
        if not 0 <= value < self.n:
            raise ValueError(f"j0 must lie in [0, {self.n - 1}]")
        return int(value)

    def validate_J0(self, value: Optional[Sequence[int]], **_) -> Tuple[int, ...]:
        if value is None:
            value = [j for j in range(self.n) if j != self.j0][: self.l - 1]
        indices = tuple(sorted(int(j) for j in value))
        if len(indices) != self.l - 1:
            raise ValueError(f"J0 must hold l - 1 = {self.l - 1} indices")
        if len(set(indices)) != len(indices) or self.j0 in indices:
            raise ValueError("j0 and J0 must be distinct indices")
        if indices and not (0 <= indices[0] and indices[-1] < self.n):
            raise ValueError(f"J0 must lie in [0, {self.n - 1}]")
        return indices

    @property
    def n(self) -> int:
        return int(self.A.shape[0])


@dataclass(frozen=True)
class DMatrixContext:
    """The minor data of a canonical matrix A.

    Attributes
    ----------
    A_bar: numpy.ndarray
        The (n - l) x (n - l) minor left after removing the first l rows and columns.
    D: numpy.ndarray
        (A_bar^{-1})^T, transposed without conjugation.
    B: numpy.ndarray
        The first l rows of A with the first l columns removed; row i is B_i.
    sv_of_D: DecaySequence
        The singular values s_j(A_bar^{-1}) = 1 / s_{n-l+1-j}(A_bar).
    perturbed: bool
        Whether A_bar was perturbed to make it invertible.

    """

    A_bar: Matrix
    D: Matrix
    B: Matrix
    sv_of_D: DecaySequence
    perturbed: bool = False

    @property
    def l(self) -> int:
        return int(self.B.shape[0])


@dataclass(frozen=True)
class TestProjection:
    """An l' x n coisometry P whose kernel holds the columns of A outside {j0} and J0.

    P acts in canonical coordinates, where j0 is column 0 and J0 are columns 1, ..., l - 1.
    `original_P` expresses it in the coordinates of the input matrix.

    """

    __test__ = False

    P: Matrix
    l_prime: int
    window: WindowResult
    Q: Matrix
    permutation: np.ndarray
    A: Matrix
    context: DMatrixContext

    @property
    def l(self) -> int:
        return self.context.l

    @property
    def n(self) -> int:
        return int(self.P.shape[1])

    @property
    def j0(self) -> int:
        return int(self.permutation[0])

    @property
    def J0(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in self.permutation[1 : self.l])

    @property
    def original_P(self) -> Matrix:
        original = np.zeros_like(self.P)
        original[:, self.permutation] = self.P
        return original

    def column_norms(self) -> Vector:
        """||P e_i||_2 for the canonical columns i < l."""
        return np.linalg.norm(self.P[:, : self.l], axis=0)


def canonicalize(inp: TestProjectionInput) -> Tuple[Matrix, np.ndarray]:
    """Permutes rows and columns of A so that j0 comes first, followed by J0 in ascending order.

    Returns the permuted matrix and the permutation `perm`; canonical index p corresponds to
    original index perm[p], so that `A_canonical = A[perm][:, perm]`.

    """
    designated = {inp.j0, *inp.J0}
    rest = [j for j in range(inp.n) if j not in designated]
    perm = np.array([inp.j0, *inp.J0, *rest], dtype=int)
    return inp.A[np.ix_(perm, perm)], perm


def build_minor_context(
    A_canonical: Matrix, l: int, rng: Optional[random.Generator] = None
) -> DMatrixContext:
    """Extracts the minor A_bar and the rows B_i, and computes D = (A_bar^{-1})^T.

    A numerically singular minor is perturbed once by an independent Gaussian matrix of scale
    1e-8 ||A||; `rng` defaults to the fixed stream of seed 0 so the result stays a function of A.

    """
    A_canonical = require_finite(A_canonical, "A")
    n = A_canonical.shape[0]
    if not 1 <= n - l:
        raise ValueError("the minor must be at least 1 x 1")

    A_bar = A_canonical[l:, l:]
    B = A_canonical[:l, l:]

    s = singular_values(A_bar)
    perturbed = False
    if s[0] == 0 or s[-1] <= SINGULAR_RTOL * s[0]:
        scale = PERTURBATION_SCALE * (spectral_norm(A_canonical) or 1.0)
        log.warning("singular minor (s_min=%.3e); perturbing at scale %.1e", s[-1], scale)
        A_bar = perturb(A_bar, scale, rng if rng is not None else stream(0))
        s = singular_values(A_bar)
        perturbed = True
        if s[0] == 0 or s[-1] <= SINGULAR_RTOL * s[0]:
            raise SingularMinorError("the minor stays singular after perturbation")

    D = scipy.linalg.inv(A_bar).T
    return DMatrixContext(A_bar, D, B, DecaySequence(1 / s[::-1]), perturbed)


def build_Q(ctx: DMatrixContext, l_prime: int) -> Matrix:
    """Assembles the l' x n matrix [I_{l'} | 0 | -(D B_i)^T rows] with q_ii = 1.

    Every row is orthogonal to the columns l, ..., n - 1 of the canonical matrix.

    """
    if not 1 <= l_prime <= ctx.l:
        raise ValueError(f"l_prime must lie in [1, {ctx.l}]")
    m = ctx.A_bar.shape[0]
    Q = np.zeros((l_prime, ctx.l + m), dtype=np.result_type(ctx.D, ctx.B, float))
    Q[:, :l_prime] = np.eye(l_prime)
    Q[:, ctx.l :] = -ctx.B[:l_prime] @ ctx.D.T
    return Q


def build_test_projection(
    inp: TestProjectionInput, c_window: float = 0.125, rng: Optional[random.Generator] = None
) -> TestProjection:
    """Builds the test projection of A for the index pair (j0, J0).

    The construction runs canonicalize, build_minor_context, select_window on the singular
    values of D, build_Q and orthonormalize_rows (rows in the order l' - 1, ..., 0). An error in
    any stage is raised as a StageError naming the stage.

    """
    if inp.l > inp.n / 4:
        raise ValueError(f"l must not exceed n / 4 = {inp.n / 4}")

    stage = "canonicalize"
    try:
        A_canonical, perm = canonicalize(inp)
        stage = "minor"
        ctx = build_minor_context(A_canonical, inp.l, rng)
        stage = "window"
        window = select_window(ctx.sv_of_D, inp.l, c_window)
        stage = "Q"
        Q = build_Q(ctx, window.l_prime)
        stage = "orthonormalize"
        P = orthonormalize_rows(Q, order=range(window.l_prime - 1, -1, -1))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(stage, exc) from exc

    log.debug(
        "test projection n=%d l=%d l'=%d delta=%.3g", inp.n, inp.l, window.l_prime, window.delta
    )
    return TestProjection(P, window.l_prime, window, Q, perm, A_canonical, ctx)


def coisometry_error(tp: TestProjection) -> float:
    """||P P* - I||."""
    return float(np.linalg.norm(tp.P @ tp.P.conj().T - np.eye(tp.l_prime), 2))


def kernel_residual(tp: TestProjection) -> float:
    """max over canonical j >= l of ||P A_j||_2 / ||A_j||_2 (zero columns are skipped)."""
    columns = tp.A[:, tp.l :]
    norms = np.linalg.norm(columns, axis=0)
    images = np.linalg.norm(tp.P @ columns, axis=0)
    mask = norms > 0
    return float(np.max(images[mask] / norms[mask])) if np.any(mask) else 0.0


def column_norm_ratio(tp: TestProjection) -> Tuple[float, bool]:
    """The largest ratio ||P e_i|| / ||P e_j|| over i, j < l', and whether ||P e_i|| vanishes for
    l' <= i < l."""
    norms = tp.column_norms()
    head = norms[: tp.l_prime]
    zero_block_ok = bool(np.all(norms[tp.l_prime :] <= ZERO_BLOCK_TOLERANCE))
    return float(head.max() / head.min()), zero_block_ok


def column_norm_via_distance(Q: Matrix, i: int) -> float:
    """Computes ||P e_i|| as |q_ii| / d(q_i, E_i), where E_i spans the rows of Q other than q_i.

    The identity holds for any P with the row span of Q as long as column i of every other row
    vanishes, which is the block structure of the test projection.

    """
    Q = require_finite(np.atleast_2d(Q), "Q")
    if not 0 <= i < Q.shape[0]:
        raise ValueError(f"i must lie in [0, {Q.shape[0] - 1}]")

    others = np.delete(Q, i, axis=0)
    if np.any(np.abs(others[:, i]) > 1e-12 * np.abs(Q).max()):
        raise ValueError(f"column {i} of the rows other than {i} must vanish")

    E = Subspace.span(others.T)
    if E.dim != others.shape[0]:
        raise RankDeficientError("the rows of Q other than q_i are linearly dependent", index=i)
    distance = distance_to_subspace(Q[i], E)
    if distance == 0:
        raise RankDeficientError(f"row {i} lies in the span of the other rows", index=i)
    return float(abs(Q[i, i]) / distance)


@dataclass(frozen=True)
class DistanceBounds:
    """The distances d_i = 1 / ||P e_i|| next to their two-sided estimate from the spectrum of D.

    lower = (1 + c S_{k1}) / 2 and upper = 2 M (1 + C S_{k1} / sqrt(delta)) with k = l' - 1,
    (k0, k1) the rounded window and M = C k sqrt(k0) / (k - k0); M is infinite when k0 >= k.

    """

    distances: Vector
    lower: float
    upper: float
    M: float
    k: int
    k0: int
    k1: int

    @property
    def lower_violations(self) -> int:
        return int(np.sum(self.distances < self.lower))

    @property
    def upper_violations(self) -> int:
        return int(np.sum(self.distances > self.upper))


def distance_bounds(tp: TestProjection, c: float = 1.0, C: float = 1.0) -> DistanceBounds:
    seq = tp.context.sv_of_D
    k = tp.l_prime - 1
    k0, k1 = window_indices(tp.l_prime, tp.window.delta)
    M = C * k * math.sqrt(k0) / (k - k0) if k > k0 else math.inf
    tail = seq.tail(k1)

    distances = 1 / tp.column_norms()[: tp.l_prime]
    lower = 0.5 * (1 + c * tail)
    upper = 2 * M * (1 + C / math.sqrt(tp.window.delta) * tail)
    return DistanceBounds(distances, lower, upper, M, k, k0, k1)


@dataclass(frozen=True)
class BalancingCheck:
    """The balancing event ||P A_j0|| >= alpha ||P A_J0|| and ||P A_j0|| >= kappa sqrt(l)."""

    holds: bool
    dominates_block: bool
    exceeds_floor: bool
    column_norm: float
    block_norm: float
    floor: float


def balancing_event_check(
    A: Matrix, tp: TestProjection, alpha: float, kappa: float
) -> BalancingCheck:
    """Evaluates the balancing event for the test projection built from (A, j0, J0).

    ||P A_J0|| is the operator norm of the l' x (l - 1) matrix P A_J0.

    """
    A = require_finite(A, "A")
    P = tp.original_P
    column_norm = float(np.linalg.norm(P @ A[:, tp.j0]))
    block_norm = spectral_norm(P @ A[:, list(tp.J0)]) if tp.J0 else 0.0
    floor = kappa * math.sqrt(tp.l)

    dominates_block = column_norm >= alpha * block_norm
    exceeds_floor = column_norm >= floor
    return BalancingCheck(
        dominates_block and exceeds_floor,
        dominates_block,
        exceeds_floor,
        column_norm,
        block_norm,
        floor,
    )
