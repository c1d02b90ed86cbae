import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg  # type: ignore
from numpy import random

from leb.deloc import Matrix, Validation, Vector, require_finite
from leb.deloc.ensembles import trial_rng
from leb.deloc.linalg import spectral_norm

__all__ = [
    "LocalizationSearchResult",
    "OptimizerParams",
    "approx_eigen_residual",
    "localization_event_check",
    "localization_search",
]

log = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-8


def approx_eigen_residual(G: Matrix, v: Vector) -> Tuple[complex, float]:
    """The approximate eigenvalue of v and its relative residual.

    Returns z = <Gv, v> / <v, v>, the minimizer of ||Gv - zv||_2 over complex z, together with
    ||Gv - zv||_2 / ||v||_2.

    """
    v = require_finite(v, "v")
    norm_sq = float(np.vdot(v, v).real)
    if norm_sq == 0:
        raise ValueError("v must be nonzero")
    Gv = G @ v
    z = complex(np.vdot(v, Gv) / norm_sq)
    return z, float(np.linalg.norm(Gv - z * v) / math.sqrt(norm_sq))


def localization_event_check(
    G: Matrix, z: complex, W: float, w: float, l: int, v: Vector
) -> bool:
    """Whether the unit vector v witnesses the localization event:
    ||v||_inf > W sqrt(l / n) and ||(G - zI) v||_2 <= w / sqrt(n)."""
    v = require_finite(v, "v")
    n = v.size
    if abs(np.linalg.norm(v) - 1) > UNIT_TOLERANCE:
        raise ValueError("v must be a unit vector")
    localized = float(np.max(np.abs(v))) > W * math.sqrt(l / n)
    residual = float(np.linalg.norm(G @ v - z * v))
    return localized and residual <= w / math.sqrt(n)


@dataclass(frozen=True)
class OptimizerParams(Validation):
    """Continuation schedule of the localized-vector search.

    The hinge penalty weight starts at `mu0` and doubles after each of the `rounds` rounds of
    `iterations` projected gradient steps, run from `starts` initial vectors per net point.

    """

    rounds: int = 8
    iterations: int = 200
    starts: int = 16
    mu0: float = 1.0
    seed: int = 0

    def validate_rounds(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("rounds must be greater than zero")
        return int(value)

    def validate_iterations(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("iterations must be greater than zero")
        return int(value)

    def validate_starts(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("starts must be greater than zero")
        return int(value)

    def validate_mu0(self, value: float, **_) -> float:
        if value <= 0:
            raise ValueError("mu0 must be greater than zero")
        return float(value)


@dataclass(frozen=True)
class LocalizationSearchResult:
    """The best candidate of a localized-vector search.

    `residual` is min_z ||(G - zI) v||_2 at z = `z` and is recomputed from (G, vector) after the
    search. `feasible` reports whether ||vector||_inf exceeds `threshold` = W sqrt(l / n); it is
    False when no start could be pushed above the threshold.

    """

    vector: Vector
    inf_norm: float
    residual: float
    z: complex
    feasible: bool
    threshold: float
    trace: Dict[str, Any] = field(default_factory=dict)

    def is_witness(self, w: float) -> bool:
        """Whether the candidate lies in the localization event with parameter w."""
        return self.feasible and self.residual <= w / math.sqrt(self.vector.size)


def _unit_columns(V: Matrix) -> Matrix:
    return V / np.linalg.norm(V, axis=0, keepdims=True)


def _starts(G: Matrix, z: complex, cut: float, count: int, rng: random.Generator) -> Matrix:
    """Initial vectors: coordinate vectors of the smallest columns of G - zI, sparse bumps and
    eigenvectors of leading principal minors, in that order of priority."""
    n = G.shape[0]
    columns: List[Vector] = []

    n_coordinate = max(1, count // 2)
    column_norms = np.linalg.norm(G - z * np.eye(n), axis=0)
    for i in np.argsort(column_norms, kind="stable")[:n_coordinate]:
        columns.append(np.eye(n, dtype=complex)[:, i])

    # Largest support on which one entry can still carry the mass cut^2.
    support = max(1, min(n, int(1 / max(cut, 1e-12) ** 2)))
    for _ in range(max(0, (count - len(columns)) // 2)):
        bump = np.zeros(n, dtype=complex)
        idx = rng.choice(n, size=support, replace=False)
        bump[idx] = rng.standard_normal(support) * 0.5 / math.sqrt(support)
        bump[idx[0]] = 1.0
        columns.append(bump)

    size = 1
    while len(columns) < count:
        size = min(n, 2 * size)
        values, vectors = scipy.linalg.eig(G[:size, :size])
        padded = np.zeros(n, dtype=complex)
        padded[:size] = vectors[:, int(np.argmin(np.abs(values - z)))]
        columns.append(padded)
        if size == n and len(columns) < count:
            columns.extend(columns[: count - len(columns)])

    return _unit_columns(np.column_stack(columns[:count]))


def _descend(G: Matrix, V: Matrix, cut: float, params: OptimizerParams) -> Matrix:
    """Projected gradient descent on the sphere for every column of V at once.

    The objective of a column v is ||(G - z(v) I) v||^2 + mu max(0, cut - |v_i*|)^2, where z(v)
    is the Rayleigh quotient and i* the current largest coordinate of v.

    """
    norm = spectral_norm(G)
    cols = np.arange(V.shape[1])
    mu = params.mu0
    for _ in range(params.rounds):
        step = 1 / (2 * (2 * norm) ** 2 + 2 * mu)
        for _ in range(params.iterations):
            GV = G @ V
            z = np.einsum("ij,ij->j", V.conj(), GV)
            R = GV - V * z
            grad = 2 * (G.conj().T @ R - R * z.conj())

            top = np.argmax(np.abs(V), axis=0)
            peak = V[top, cols]
            gap = cut - np.abs(peak)
            active = gap > 0
            phase = peak / np.abs(peak)
            grad[top[active], cols[active]] -= 2 * mu * gap[active] * phase[active]

            V = _unit_columns(V - step * grad)
        mu *= 2
    return V


def _search_at(
    G: Matrix, z: complex, cut: float, params: OptimizerParams, rng: random.Generator
) -> List[Tuple[Vector, complex, float, float]]:
    V = _descend(G, _starts(G, z, cut, params.starts, rng), cut, params)
    candidates = []
    for j in range(V.shape[1]):
        v = V[:, j] / np.linalg.norm(V[:, j])
        z_opt, residual = approx_eigen_residual(G, v)
        candidates.append((v, z_opt, residual, float(np.max(np.abs(v)))))
    return candidates


def localization_search(
    G: Matrix,
    W: float,
    l: int,
    net: Optional[Sequence[complex]] = None,
    optimizer_params: OptimizerParams = OptimizerParams(),
    threads: int = 1,
) -> LocalizationSearchResult:
    """Searches for a unit vector v with ||v||_inf > W sqrt(l / n) and a small residual
    min_z ||(G - zI) v||_2.

    The search runs from `optimizer_params.starts` initial vectors at every point of `net` (the
    origin when omitted), alternating the closed-form z with projected gradient steps. It is a
    heuristic probe: failing to find a candidate is not a certificate that none exists.

    Every candidate is re-checked after the search; the lowest-residual feasible one is
    reported, or the lowest-residual candidate overall when none is feasible.

    """
    G = require_finite(np.atleast_2d(G), "G")
    n = G.shape[0]
    if G.shape != (n, n):
        raise ValueError("G must be square")
    if not 1 <= l <= n:
        raise ValueError(f"l must lie in [1, {n}]")
    cut = W * math.sqrt(l / n)
    points = [complex(z) for z in (net if net is not None else [0.0])]
    trace: Dict[str, Any] = {
        "net_points": len(points),
        "starts": optimizer_params.starts,
        "rounds": optimizer_params.rounds,
        "iterations": optimizer_params.iterations,
    }

    if cut >= 1:
        # No unit vector has an entry above 1.
        v = np.zeros(n, dtype=complex)
        v[0] = 1.0
        z, residual = approx_eigen_residual(G, v)
        trace["short_circuit"] = True
        return LocalizationSearchResult(v, 1.0, residual, z, False, cut, trace)

    def search(index: int):
        rng = trial_rng(optimizer_params.seed, index)
        return _search_at(G, points[index], cut, optimizer_params, rng)

    if threads == 1:
        batches = [search(i) for i in range(len(points))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(search, range(len(points))))

    candidates = [candidate for batch in batches for candidate in batch]
    feasible = [c for c in candidates if c[3] > cut]
    v, z, residual, inf_norm = min(feasible or candidates, key=lambda c: c[2])

    trace["candidates"] = len(candidates)
    trace["feasible_candidates"] = len(feasible)
    log.debug(
        "localization search n=%d cut=%.4g: %d/%d feasible, best residual %.4g",
        n,
        cut,
        len(feasible),
        len(candidates),
        residual,
    )
    return LocalizationSearchResult(v, inf_norm, residual, z, bool(feasible), cut, trace)
