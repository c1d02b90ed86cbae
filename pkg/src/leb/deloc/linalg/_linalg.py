import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg  # type: ignore

from leb.deloc import (
    Matrix,
    RankDeficientError,
    ResidualError,
    Validation,
    Vector,
    require_finite,
)

__all__ = [
    "Eigenpairs",
    "SvdResult",
    "Subspace",
    "distance_to_subspace",
    "eigenpairs",
    "hs_norm",
    "negative_second_moment",
    "orthonormalize_rows",
    "pseudoinverse_apply",
    "singular_values",
    "spectral_norm",
    "split_svd",
    "stable_rank",
    "svd",
    "truncate_singular_values",
]

log = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8
ORTHONORMAL_TOLERANCE = 1e-10
SPAN_RTOL = 1e-10

# Reorthogonalize when a Gram-Schmidt pass removes more than this fraction of the norm.
DGKS_ETA = np.sqrt(0.5)


@dataclass(frozen=True)
class SvdResult:
    """A thin singular value decomposition A = U diag(s) V*.

    Attributes
    ----------
    singular_values: numpy.ndarray
        s_1 >= s_2 >= ... >= s_r >= 0 with r = min(rows, cols).
    left_vectors: numpy.ndarray
        U with orthonormal columns, rows x r.
    right_vectors: numpy.ndarray
        V with orthonormal columns, cols x r.

    """

    singular_values: Vector
    left_vectors: Matrix
    right_vectors: Matrix

    @property
    def norm(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    @property
    def hs_norm(self) -> float:
        return float(np.sqrt(np.sum(self.singular_values**2)))

    def s(self, i: int) -> float:
        """The i-th singular value, 1-based."""
        return float(self.singular_values[i - 1])

    def reconstruct(self, values: Optional[Vector] = None) -> Matrix:
        """Returns U diag(values) V*, using the stored singular values by default."""
        if values is None:
            values = self.singular_values
        return (self.left_vectors * values) @ self.right_vectors.conj().T


def svd(A: Matrix) -> SvdResult:
    """Computes the thin SVD, falling back from the gesdd to the gesvd driver when it fails."""
    A = require_finite(A, "A")
    try:
        U, s, Vh = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        log.warning("gesdd did not converge on a %s matrix; retrying with gesvd", A.shape)
        U, s, Vh = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd")
    return SvdResult(s, U, Vh.conj().T)


def singular_values(A: Matrix) -> Vector:
    """The nonincreasing singular values of A."""
    A = require_finite(A, "A")
    try:
        return scipy.linalg.svdvals(A)
    except np.linalg.LinAlgError:
        return svd(A).singular_values


def spectral_norm(A: Matrix) -> float:
    values = singular_values(A)
    return float(values[0]) if values.size else 0.0


def hs_norm(A: Matrix) -> float:
    return float(np.linalg.norm(A))


def stable_rank(B: Matrix) -> float:
    """The stable rank ||B||_HS^2 / ||B||^2; zero for the zero matrix."""
    norm = spectral_norm(B)
    if norm == 0:
        return 0.0
    return hs_norm(B) ** 2 / norm**2


@dataclass(frozen=True)
class Subspace(Validation):
    """A subspace E of C^n represented by an orthonormal basis of column vectors."""

    basis: Matrix

    def validate_basis(self, value: Matrix, **_) -> Matrix:
        value = np.atleast_2d(np.asanyarray(value))
        gram = value.conj().T @ value
        if not np.allclose(gram, np.eye(gram.shape[0]), rtol=0, atol=ORTHONORMAL_TOLERANCE):
            raise ValueError("basis columns must be orthonormal")
        return value

    @property
    def dim(self) -> int:
        return int(self.basis.shape[1])

    @property
    def ambient_dim(self) -> int:
        return int(self.basis.shape[0])

    @classmethod
    def empty(cls, n: int) -> "Subspace":
        return cls(np.zeros((n, 0)))

    @classmethod
    def span(cls, vectors: Matrix, rtol: float = SPAN_RTOL) -> "Subspace":
        """The span of the columns of `vectors`, with numerically dependent directions dropped."""
        vectors = require_finite(vectors, "vectors")
        if vectors.ndim == 1:
            vectors = vectors[:, np.newaxis]
        if vectors.shape[1] == 0:
            return cls.empty(vectors.shape[0])

        result = svd(vectors)
        s = result.singular_values
        rank = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
        return cls(result.left_vectors[:, :rank])

    def project(self, x: Vector) -> Vector:
        """The orthogonal projection P_E x."""
        return self.basis @ (self.basis.conj().T @ x)


def distance_to_subspace(x: Vector, E: Subspace) -> float:
    """Returns d(x, E) = ||x - P_E x||_2."""
    x = require_finite(x, "x")
    if x.shape[0] != E.ambient_dim:
        raise ValueError(
            f"dimension mismatch: vector has {x.shape[0]} entries, subspace lives in "
            f"dimension {E.ambient_dim}"
        )
    residual = x - E.project(x)
    # A second pass removes the component reintroduced by rounding.
    residual = residual - E.project(residual)
    return float(np.linalg.norm(residual))


@dataclass(frozen=True)
class Eigenpairs:
    """Eigenvalues and unit eigenvectors (as columns) with their relative residuals.

    The residual of pair i is ||A v_i - lambda_i v_i||_2 / ||A||.

    """

    values: Vector
    vectors: Matrix
    residuals: Vector
    tolerance: float = EIGEN_TOLERANCE

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def failed(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~(self.residuals <= self.tolerance))]

    def pairs(self) -> List[Tuple[complex, Vector]]:
        return [(complex(self.values[i]), self.vectors[:, i]) for i in range(len(self))]

    def check(self) -> "Eigenpairs":
        """Raises ResidualError when any pair misses the residual tolerance."""
        if failed := self.failed:
            raise ResidualError(failed, float(np.max(self.residuals[failed])))
        return self


def _relative_residuals(A: Matrix, values: Vector, vectors: Matrix, scale: float) -> Vector:
    residuals = np.linalg.norm(A @ vectors - vectors * values, axis=0)
    return residuals / scale if scale > 0 else residuals


def _inverse_iteration(A: Matrix, value: complex, vector: Vector, scale: float) -> Vector:
    n = A.shape[0]
    # The shift is nudged off the eigenvalue so that A - mu I stays invertible.
    mu = value + np.finfo(float).eps * max(scale, 1.0) * 16
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        lu = scipy.linalg.lu_factor(A - mu * np.eye(n))
        refined = scipy.linalg.lu_solve(lu, vector)
    return refined / np.linalg.norm(refined)


def eigenpairs(A: Matrix, tol: float = EIGEN_TOLERANCE) -> Eigenpairs:
    """All eigenpairs of a square matrix with unit eigenvectors.

    Pairs returned by the dense eigensolver whose relative residual exceeds `tol` are refined by
    one step of inverse iteration; a refinement is kept only when it lowers the residual. Pairs
    still above the tolerance are listed in `Eigenpairs.failed`.

    """
    A = require_finite(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("eigenpairs requires a square matrix")

    values, vectors = scipy.linalg.eig(A)
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    scale = spectral_norm(A)
    residuals = _relative_residuals(A, values, vectors, scale)

    for i in np.flatnonzero(residuals > tol):
        refined = _inverse_iteration(A, values[i], vectors[:, i], scale)
        if not np.all(np.isfinite(refined)):
            continue
        residual = _relative_residuals(A, values[i : i + 1], refined[:, np.newaxis], scale)[0]
        if residual < residuals[i]:
            vectors[:, i] = refined
            residuals[i] = residual

    result = Eigenpairs(values, vectors, residuals, tol)
    if result.failed:
        log.warning(
            "%d of %d eigenpairs exceed the residual tolerance %.1e",
            len(result.failed),
            len(result),
            tol,
        )
    return result


def _fix_phase(row: Vector) -> Vector:
    magnitudes = np.abs(row)
    pivot = int(np.argmax(magnitudes > 1e-12 * magnitudes.max()))
    return row * (np.conj(row[pivot]) / magnitudes[pivot])


def orthonormalize_rows(
    Q: Matrix, order: Optional[Sequence[int]] = None, rtol: float = 1e-12
) -> Matrix:
    """Orthonormalizes the rows of Q by Gram-Schmidt with DGKS reorthogonalization.

    Parameters
    ----------
    Q: numpy.ndarray
        An m x n matrix of full row rank.
    order: Optional[Sequence[int]]
        The order in which the rows are processed; row `order[j]` is orthogonalized against the
        rows `order[:j]`. Defaults to the natural order.
    rtol: float
        A row whose norm after orthogonalization falls below rtol times its original norm is
        declared linearly dependent.

    Returns
    -------
    numpy.ndarray
        P with P P* = I whose row `order[:j+1]` spans equal those of Q. The first nonzero entry
        of every row of P is real and positive.

    Raises
    ------
    RankDeficientError
        With the index of the first row found to be dependent on the previously processed ones.

    """
    Q = require_finite(np.atleast_2d(Q), "Q")
    m = Q.shape[0]
    if order is None:
        order = range(m)
    order = list(order)
    if sorted(order) != list(range(m)):
        raise ValueError("order must be a permutation of the row indices")

    P = np.zeros(Q.shape, dtype=np.result_type(Q, float))
    done: List[int] = []
    for index in order:
        row = Q[index].astype(P.dtype)
        original = np.linalg.norm(row)
        if done:
            basis = P[done]
            before = original
            for _ in range(2):
                row = row - basis.T @ (basis.conj() @ row)
                after = np.linalg.norm(row)
                if after >= DGKS_ETA * before:
                    break
                before = after

        norm = np.linalg.norm(row)
        if original == 0 or norm <= rtol * original:
            raise RankDeficientError(
                f"row {index} lies in the span of the rows processed before it", index=index
            )
        P[index] = _fix_phase(row / norm)
        done.append(index)

    return P


def pseudoinverse_apply(A: Matrix, y: Vector, rtol: float = 1e-12) -> Vector:
    """Returns x = A^dagger y for a matrix A of full row rank."""
    result = svd(A)
    m = A.shape[0]
    s = result.singular_values
    if s.size < m or s[0] == 0 or s[m - 1] <= rtol * s[0]:
        raise RankDeficientError("A must have full row rank", index=m - 1)
    y = np.asanyarray(y)
    return result.right_vectors @ ((result.left_vectors.conj().T @ y) / s)


def truncate_singular_values(B: Matrix, cap_index: int) -> Matrix:
    """Caps the singular values of B at s_{cap_index}(B), keeping the singular vectors.

    The result B_bar satisfies B_bar B_bar* <= B B* in the positive semidefinite order.

    """
    result = svd(B)
    if not 1 <= cap_index <= result.singular_values.size:
        raise ValueError(f"cap_index must lie in [1, {result.singular_values.size}]")
    capped = np.minimum(result.singular_values, result.s(cap_index))
    return result.reconstruct(capped)


def split_svd(D: Matrix, k0: int) -> Tuple[Matrix, Matrix]:
    """Splits D = D_0 + D_bar into the parts carried by the first k0 and by the remaining
    singular values."""
    result = svd(D)
    if not 0 <= k0 <= min(D.shape):
        raise ValueError(f"k0 must lie in [0, {min(D.shape)}]")
    head = np.where(np.arange(result.singular_values.size) < k0, result.singular_values, 0)
    tail = result.singular_values - head
    return result.reconstruct(head), result.reconstruct(tail)


def negative_second_moment(A: Matrix, rtol: float = 1e-12) -> Tuple[float, float]:
    """Evaluates both sides of sum_i s_i(A)^{-2} = sum_i d(A_i, E_i)^{-2}.

    E_i is the span of the columns of A other than the i-th one. The two sides are computed
    independently: from the singular values and from one QR factorization per column. Tall
    matrices of full column rank satisfy the same identity.

    """
    A = require_finite(A, "A")
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise ValueError("negative_second_moment requires a square or tall matrix")
    n = A.shape[1]

    s = singular_values(A)
    if s[0] == 0 or s[-1] < rtol * s[0]:
        raise RankDeficientError("A is numerically singular", index=int(np.argmin(s)))

    distances = np.empty(n)
    for i in range(n):
        others = np.delete(A, i, axis=1)
        if n > 1:
            basis = scipy.linalg.qr(others, mode="economic")[0]
        else:
            basis = np.zeros((A.shape[0], 0))
        distances[i] = distance_to_subspace(A[:, i], Subspace(basis))

    return float(np.sum(s**-2.0)), float(np.sum(distances**-2.0))
