"""Spatial covariance families and kriging blocks.

Every builder returns the unscaled correlation-type matrix ``Sigma_g``; the
``tau2 * sigma2`` scale is applied by the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

from .errors import (
    DegenerateOperator,
    DimensionError,
    FamilyMismatch,
    InvalidHyperparameter,
    InvalidRank,
    RankTooLarge,
    SingularCovariance,
)
from .linalg import ProjectionCache, _fix_column_signs

EXPONENTIAL = "exponential"
CAR = "car"
BSPLINE = "bspline"
MORAN = "moran"
FAMILIES = (EXPONENTIAL, CAR, BSPLINE, MORAN)


def bspline_basis(sites: NDArray, r: int) -> NDArray:
    """Cubic B-spline design matrix on ``[0, 1]`` with clamped knots.

    The ``r - 4`` interior knots split ``[0, 1]`` into ``r - 3`` equal
    intervals, giving ``r`` basis functions whose values sum to one at every
    site.
    """
    if r < 4:
        raise InvalidRank(f"cubic B-splines need r >= 4, got {r}")
    x = np.asarray(sites, dtype=float).ravel()
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("B-spline sites must lie in [0, 1]")
    k = 3
    interior = np.linspace(0.0, 1.0, r - k + 1)[1:-1]
    t = np.concatenate([np.zeros(k + 1), interior, np.ones(k + 1)])
    if x.size == 0:
        return np.zeros((0, r))
    return BSpline.design_matrix(x, t, k).toarray()


def moran_basis(adjacency: NDArray, proj: ProjectionCache, r: int) -> NDArray:
    """Leading ``r`` eigenvectors of the Moran operator ``(I-P) A (I-P)``.

    The eigenproblem is solved on the complement coordinates ``L' A L`` so
    that every returned column is exactly orthogonal to ``col(X)``, even when
    ``r`` reaches into the null spectrum.
    """
    A = np.asarray(adjacency, dtype=float)
    n = proj.n
    if A.shape != (n, n):
        raise DimensionError(f"adjacency must be {n}x{n}, got {A.shape}")
    if not np.allclose(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if r < 1 or r > n - proj.p:
        raise RankTooLarge(f"rank must be in [1, {n - proj.p}], got {r}")
    L = proj.L
    K = L.T @ A @ L
    K = 0.5 * (K + K.T)
    evals, evecs = np.linalg.eigh(K)
    if np.max(np.abs(evals)) <= 1e-12 * max(1.0, float(np.abs(A).max())):
        raise DegenerateOperator("Moran operator is zero; eigenvector ordering undefined")
    order = np.argsort(evals)[::-1][:r]
    return _fix_column_signs(L @ evecs[:, order])


def car_covariance(adjacency: NDArray, gamma: float) -> NDArray:
    """Proper CAR covariance ``(D - gamma A)^{-1}``."""
    A = np.asarray(adjacency, dtype=float)
    if gamma == 1.0:
        raise SingularCovariance("CAR covariance is singular at gamma = 1")
    if not 0.0 < gamma < 1.0:
        raise InvalidHyperparameter(f"CAR propriety parameter must be in (0, 1), got {gamma}")
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise SingularCovariance("CAR covariance needs every site to have a neighbor")
    prec = np.diag(deg) - gamma * A
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    return 0.5 * (cov + cov.T)


def chain_adjacency(n: int) -> NDArray:
    """Adjacency of a 1-D chain graph (each site linked to its grid neighbors)."""
    return np.eye(n, k=1) + np.eye(n, k=-1)


def complement_covariance(sigma: NDArray, proj: ProjectionCache) -> NDArray:
    """``L L' Sigma L L'``: the covariance implied by the traditional RSR basis ``B = L``."""
    L = proj.L
    inner = L.T @ np.asarray(sigma, dtype=float) @ L
    out = L @ inner @ L.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class CovarianceModel:
    """A spatial covariance family.

    ``kind`` selects the family; the remaining fields are family specific:

    * exponential: ``gamma`` is the range; ``rho`` is an optional nugget jitter.
    * bspline: ``Sigma_g = S S' + rho I`` with ``S`` either evaluated from
      ``n_basis`` cubic B-splines at the requested sites, or the fixed
      ``basis`` matrix.
    * car: ``(D - gamma A)^{-1}`` on ``lattice`` with ``adjacency``.
    * moran: ``Phi Phi' Sigma_CAR(gamma) Phi Phi' + rho I`` on ``lattice``
      with the fixed Moran basis ``basis``.
    """

    kind: str
    rho: float = 0.0
    n_basis: Optional[int] = None
    basis: Optional[NDArray] = None
    lattice: Optional[NDArray] = None
    adjacency: Optional[NDArray] = None

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown covariance family {self.kind!r}")
        if self.rho < 0:
            raise InvalidHyperparameter("jitter rho must be nonnegative")

    @classmethod
    def exponential(cls, rho: float = 0.0) -> "CovarianceModel":
        return cls(EXPONENTIAL, rho=rho)

    @classmethod
    def bspline(cls, n_basis: int = 10, rho: float = 0.01) -> "CovarianceModel":
        if n_basis < 4:
            raise InvalidRank(f"cubic B-splines need r >= 4, got {n_basis}")
        return cls(BSPLINE, rho=rho, n_basis=n_basis)

    @classmethod
    def lowrank(cls, S: NDArray, rho: float = 0.01) -> "CovarianceModel":
        return cls(BSPLINE, rho=rho, basis=np.asarray(S, dtype=float))

    @classmethod
    def car(cls, lattice: NDArray, adjacency: NDArray, rho: float = 0.0) -> "CovarianceModel":
        return cls(CAR, rho=rho, lattice=np.asarray(lattice, dtype=float),
                   adjacency=np.asarray(adjacency, dtype=float))

    @classmethod
    def moran(cls, lattice: NDArray, adjacency: NDArray, X: NDArray, r: int,
              rho: float = 0.01) -> "CovarianceModel":
        from .linalg import build_projection_cache

        phi = moran_basis(adjacency, build_projection_cache(X), r)
        return cls(MORAN, rho=rho, basis=phi, lattice=np.asarray(lattice, dtype=float),
                   adjacency=np.asarray(adjacency, dtype=float))

    @property
    def has_gamma(self) -> bool:
        return self.kind in (EXPONENTIAL, CAR, MORAN)

    def check_gamma(self, gamma) -> None:
        if not self.has_gamma:
            if gamma is not None and not (isinstance(gamma, float) and np.isnan(gamma)):
                raise InvalidHyperparameter(f"{self.kind} family takes no gamma")
            return
        if gamma is None:
            raise InvalidHyperparameter(f"{self.kind} family requires gamma")
        g = float(gamma)
        if self.kind == EXPONENTIAL and not g > 0:
            raise InvalidHyperparameter(f"exponential range must be > 0, got {g}")
        if self.kind in (CAR, MORAN):
            if g == 1.0:
                raise SingularCovariance("CAR covariance is singular at gamma = 1")
            if not 0.0 < g < 1.0:
                raise InvalidHyperparameter(f"CAR propriety parameter must be in (0, 1), got {g}")

    def lattice_index(self, sites: Optional[NDArray]) -> NDArray:
        if self.lattice is None:
            raise FamilyMismatch(f"{self.kind} model has no lattice")
        if sites is None:
            return np.arange(self.lattice.size)
        s = np.asarray(sites, dtype=float).ravel()
        dist = np.abs(s[:, None] - self.lattice[None, :])
        pick = dist.argmin(axis=1)
        if np.any(dist[np.arange(s.size), pick] > 1e-9):
            raise FamilyMismatch("requested sites are not on the model lattice")
        return pick

    def basis_at(self, sites: Optional[NDArray]) -> NDArray:
        if self.kind != BSPLINE:
            raise FamilyMismatch("basis evaluation is only defined for the B-spline family")
        if self.basis is not None:
            if sites is not None and len(np.atleast_1d(sites)) != self.basis.shape[0]:
                raise FamilyMismatch("fixed basis matrix cannot be evaluated at new sites")
            return self.basis
        return bspline_basis(sites, self.n_basis)

    def _lattice_full(self, gamma: float) -> NDArray:
        cov = car_covariance(self.adjacency, float(gamma))
        if self.kind == MORAN:
            proj = self.basis @ self.basis.T
            cov = proj @ cov @ proj
            cov = 0.5 * (cov + cov.T)
        return cov


def build_sigma_g(model: CovarianceModel, gamma=None, sites: Optional[NDArray] = None) -> NDArray:
    """Build ``Sigma_g(gamma)`` at ``sites`` including the model's jitter ``rho``."""
    model.check_gamma(gamma)
    if model.kind == EXPONENTIAL:
        if sites is None:
            raise DimensionError("exponential family needs site coordinates")
        s = np.asarray(sites, dtype=float).reshape(-1, 1)
        sigma = np.exp(-cdist(s, s) / float(gamma))
    elif model.kind == BSPLINE:
        S = model.basis_at(sites)
        sigma = S @ S.T
    else:
        idx = model.lattice_index(sites)
        sigma = model._lattice_full(gamma)[np.ix_(idx, idx)]
    sigma = 0.5 * (sigma + sigma.T)
    if model.rho > 0:
        sigma = sigma + model.rho * np.eye(sigma.shape[0])
    return sigma


@dataclass(frozen=True)
class KrigingBlocks:
    """Unscaled ``cov(g_m, g)`` and ``cov(g_m)`` for prediction sites."""

    sigma_cross: NDArray
    sigma_m: NDArray

    @property
    def n_miss(self) -> int:
        return self.sigma_m.shape[0]


def kriging_blocks(model: CovarianceModel, gamma, obs_sites: NDArray,
                   miss_sites: NDArray) -> KrigingBlocks:
    obs = np.asarray(obs_sites, dtype=float).ravel()
    miss = np.asarray(miss_sites, dtype=float).ravel()
    n_o, n_m = obs.size, miss.size
    if n_m == 0:
        return KrigingBlocks(np.zeros((0, n_o)), np.zeros((0, 0)))
    model.check_gamma(gamma)
    if model.kind == EXPONENTIAL:
        cross = np.exp(-cdist(miss[:, None], obs[:, None]) / float(gamma))
        sm = np.exp(-cdist(miss[:, None], miss[:, None]) / float(gamma))
    elif model.kind == BSPLINE:
        if model.basis is not None:
            raise FamilyMismatch("fixed basis matrix cannot be evaluated at prediction sites")
        S_o = bspline_basis(obs, model.n_basis)
        S_m = bspline_basis(miss, model.n_basis)
        cross = S_m @ S_o.T
        sm = S_m @ S_m.T
    else:
        full = model._lattice_full(gamma)
        io, im = model.lattice_index(obs), model.lattice_index(miss)
        cross = full[np.ix_(im, io)]
        sm = full[np.ix_(im, im)]
    sm = 0.5 * (sm + sm.T)
    if model.rho > 0:
        sm = sm + model.rho * np.eye(n_m)
    return KrigingBlocks(sigma_cross=cross, sigma_m=sm)
