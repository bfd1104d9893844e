"""Projection and Cholesky primitives.

The hat matrix ``P = X (X'X)^{-1} X'`` is never formed on the hot path; its
action is applied through the thin QR factor of ``X`` as ``Q (Q' v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla

from .errors import DimensionError, NotPositiveDefinite, RankDeficient

RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-10


def _fix_column_signs(A: NDArray, tol: float = 1e-12) -> NDArray:
    """Flip columns so the first entry with magnitude above ``tol`` is positive."""
    A = np.array(A, dtype=float, copy=True)
    for j in range(A.shape[1]):
        col = A[:, j]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            A[:, j] = -col
    return A


@dataclass(frozen=True)
class ProjectionCache:
    """QR-based representation of the column space of a design matrix.

    Attributes
    ----------
    X : ndarray, shape (n, p)
    Q : ndarray, shape (n, p)
        Orthonormal basis of ``col(X)``.
    R : ndarray, shape (p, p)
        Upper-triangular factor, ``X = Q R``.
    L : ndarray, shape (n, n - p)
        Orthonormal basis of the orthogonal complement, so ``I - P = L L'``.
    xtx_inv : ndarray, shape (p, p)
    """

    X: NDArray
    Q: NDArray
    R: NDArray
    L: NDArray
    xtx_inv: NDArray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def project(self, v: NDArray) -> NDArray:
        """Apply ``P`` to a vector or to the columns of a matrix."""
        v = np.asarray(v, dtype=float)
        return self.Q @ (self.Q.T @ v)

    def residualize(self, v: NDArray) -> NDArray:
        """Apply ``I - P``."""
        v = np.asarray(v, dtype=float)
        return v - self.Q @ (self.Q.T @ v)

    def ols(self, v: NDArray) -> NDArray:
        """Return ``(X'X)^{-1} X' v`` via the triangular factor."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError(f"expected leading dimension {self.n}, got {v.shape[0]}")
        return sla.solve_triangular(self.R, self.Q.T @ v, lower=False)

    def r_inv_apply(self, z: NDArray) -> NDArray:
        """Return ``R^{-1} z``; if ``z ~ N(0, I)`` the result has covariance ``(X'X)^{-1}``."""
        return sla.solve_triangular(self.R, z, lower=False)


def build_projection_cache(X: NDArray) -> ProjectionCache:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError("X must be a 2-D matrix")
    n, p = X.shape
    if p < 1 or n <= p:
        raise DimensionError(f"need n > p >= 1, got n={n}, p={p}")
    if not np.all(np.isfinite(X)):
        raise RankDeficient("X contains non-finite entries")

    Q_full, R_full = np.linalg.qr(X, mode="complete")
    R = R_full[:p]
    diag = np.abs(np.diag(R))
    if diag.min() <= RANK_TOL * diag.max():
        raise RankDeficient(
            f"design matrix is numerically rank deficient "
            f"(min |R_ii| = {diag.min():.3e}, max |R_ii| = {diag.max():.3e})"
        )
    Q = Q_full[:, :p]
    L = _fix_column_signs(Q_full[:, p:])
    R_inv = sla.solve_triangular(R, np.eye(p), lower=False)
    xtx_inv = R_inv @ R_inv.T
    return ProjectionCache(X=X, Q=Q, R=R, L=L, xtx_inv=xtx_inv)


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``C`` of ``M + jitter I`` with its log-determinant."""

    lower: NDArray
    logdet: float
    jitter: float = 0.0
    jittered: bool = field(default=False)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> NDArray:
        return self.lower @ self.lower.T


def chol_spd(M: NDArray, jitter: float = 0.0) -> SpdFactor:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if M.size and np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    A = M + jitter * np.eye(M.shape[0]) if jitter > 0 else M
    try:
        C = sla.cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky failed (jitter={jitter}): {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(C))))
    return SpdFactor(lower=C, logdet=logdet, jitter=float(jitter), jittered=jitter > 0)


def solve_spd(F: SpdFactor, b: NDArray) -> NDArray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, factor is {F.n}x{F.n}")
    return sla.cho_solve((F.lower, True), b)
