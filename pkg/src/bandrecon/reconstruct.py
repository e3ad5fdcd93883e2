"""Regularized kernel regression and minimum-norm interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import IllConditionedError
from .kernel import BandSpec, check_distinct, cross_matrix, gram_matrix

DEFAULT_EPSILON_SCALE = 1e-8


@dataclass(frozen=True)
class SampleSet:
    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if loc.shape != val.shape:
            raise ValueError(f"{loc.size} locations but {val.size} values")
        if not np.all(np.isfinite(val)):
            raise ValueError("sample values must be finite")
        check_distinct(loc)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.locations.size


@dataclass(frozen=True)
class KernelFit:
    band: BandSpec
    nodes: np.ndarray
    coefficients: np.ndarray
    epsilon: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if nodes.shape != coef.shape:
            raise ValueError("nodes and coefficients differ in length")
        if not np.all(np.isfinite(coef)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "coefficients", coef)

    def __call__(self, queries):
        return interpolate(self, queries)


def default_epsilon(R: np.ndarray) -> float:
    n = R.shape[0]
    return DEFAULT_EPSILON_SCALE * float(np.trace(R)) / n if n else 0.0


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``.

    Raises IllConditionedError carrying the zero-based index of the first
    pivot that is not strictly positive and finite.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        row = int(np.flatnonzero(~np.isfinite(A).all(axis=1))[0])
        raise IllConditionedError(row, f"row {row} has non-finite entries")
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise IllConditionedError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    if not np.all(np.isfinite(c)):
        raise IllConditionedError(int(np.flatnonzero(~np.isfinite(np.diag(c)))[0]))
    return c


def cho_solve_lower(c: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    x, info = lapack.dpotrs(c, rhs, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def condition_estimate(A: np.ndarray, c: np.ndarray) -> float:
    """1-norm condition number estimate of SPD ``A`` from its Cholesky factor."""
    anorm = float(np.abs(A).sum(axis=0).max())
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or rcond <= 0:
        return float("inf")
    return 1.0 / rcond


def regularized_inverse(R: np.ndarray, epsilon: float) -> np.ndarray:
    """``(R + eps I)^-1`` through a Cholesky factorization."""
    A = R + epsilon * np.eye(R.shape[0])
    c = cholesky(A)
    return cho_solve_lower(c, np.eye(R.shape[0]))


def regress(samples: SampleSet, band: BandSpec, epsilon: float | None = None) -> KernelFit:
    """Solve ``(R + eps I) alpha = y`` for the expansion coefficients.

    ``epsilon=None`` selects ``1e-8 * trace(R) / N``; pass ``0`` for exact
    interpolation.
    """
    R = gram_matrix(band, samples.locations)
    if epsilon is None:
        epsilon = default_epsilon(R)
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if len(samples) == 0:
        return KernelFit(band, samples.locations, samples.values, float(epsilon))
    A = R + epsilon * np.eye(R.shape[0])
    c = cholesky(A)
    alpha = cho_solve_lower(c, samples.values)
    return KernelFit(band, samples.locations, alpha, float(epsilon))


def interpolate(fit: KernelFit, queries) -> np.ndarray:
    """``f_int(q) = sum_n alpha_n phi(q - t_n)`` at each query."""
    E = cross_matrix(fit.band, queries, fit.nodes)
    return E @ fit.coefficients


def fit_norm(fit: KernelFit) -> float:
    """Squared L2 norm of the interpolant, ``alpha^T R alpha``."""
    if fit.coefficients.size == 0:
        return 0.0
    R = gram_matrix(fit.band, fit.nodes)
    a = fit.coefficients
    return max(float(a @ R @ a), 0.0)
