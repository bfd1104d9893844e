"""Datasets, hyperparameters, priors, posterior draws, and the LRAM map."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionError, InvalidHyperparameter, NonFinite, ShapeMismatch
from .linalg import ProjectionCache, build_projection_cache


@dataclass(frozen=True)
class SpatialDataset:
    """Observed responses plus the covariates/coordinates of sites to predict."""

    y_obs: NDArray
    X_obs: NDArray
    obs_sites: NDArray
    miss_sites: NDArray
    X_miss: NDArray
    proj: ProjectionCache = field(repr=False, compare=False)

    @property
    def n_obs(self) -> int:
        return self.y_obs.size

    @property
    def n_miss(self) -> int:
        return self.miss_sites.size

    @property
    def p(self) -> int:
        return self.X_obs.shape[1]

    @classmethod
    def from_full(cls, y: NDArray, X: NDArray, sites: NDArray) -> "SpatialDataset":
        """Split a full-length response (NaN marks missing sites) into observed and missing parts."""
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        sites = np.asarray(sites, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size or sites.size != y.size:
            raise ShapeMismatch("y, X and sites must have matching lengths")
        miss = np.isnan(y)
        return validate_dataset(y[~miss], X[~miss], sites[~miss], sites[miss], X[miss])


def validate_dataset(y_obs, X_obs, obs_sites, miss_sites=None, X_miss=None) -> SpatialDataset:
    y = np.asarray(y_obs, dtype=float).ravel()
    X = np.asarray(X_obs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    s = np.asarray(obs_sites, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeMismatch(f"X_obs has shape {X.shape}, expected ({y.size}, p)")
    if s.size != y.size:
        raise ShapeMismatch(f"{s.size} observed sites for {y.size} responses")
    p = X.shape[1]
    sm = np.zeros(0) if miss_sites is None else np.asarray(miss_sites, dtype=float).ravel()
    Xm = np.zeros((sm.size, p)) if X_miss is None else np.asarray(X_miss, dtype=float)
    if Xm.ndim == 1:
        Xm = Xm.reshape(sm.size, p)
    if Xm.shape != (sm.size, p):
        raise ShapeMismatch(f"X_miss has shape {Xm.shape}, expected ({sm.size}, {p})")
    for name, arr in (("y_obs", y), ("X_obs", X), ("obs_sites", s),
                      ("miss_sites", sm), ("X_miss", Xm)):
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"{name} contains non-finite values")
    proj = build_projection_cache(X)
    return SpatialDataset(y_obs=y, X_obs=X, obs_sites=s, miss_sites=sm, X_miss=Xm, proj=proj)


@dataclass(frozen=True)
class HyperParams:
    sigma2: float
    tau2: float
    gamma: Optional[float] = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidHyperparameter(f"sigma2 must be positive, got {self.sigma2}")
        if not self.tau2 > 0:
            raise InvalidHyperparameter(f"tau2 must be positive, got {self.tau2}")


@dataclass(frozen=True)
class HyperGrid:
    """Discrete support of the uniform prior on ``(tau2, gamma)``.

    ``gamma`` entries are ``None`` for covariance families without a
    hyperparameter.
    """

    tau2: NDArray
    gamma: tuple

    def __post_init__(self):
        tau2 = np.asarray(self.tau2, dtype=float).ravel()
        object.__setattr__(self, "tau2", tau2)
        object.__setattr__(self, "gamma", tuple(self.gamma))
        if tau2.size == 0:
            raise InvalidHyperparameter("hyperparameter grid is empty")
        if len(self.gamma) != tau2.size:
            raise ShapeMismatch("tau2 and gamma grids must have the same length")
        if np.any(~(tau2 > 0)):
            raise InvalidHyperparameter("tau2 grid values must be positive")

    def __len__(self) -> int:
        return self.tau2.size

    @classmethod
    def from_axes(cls, tau2_values: Sequence[float], gammas: Sequence = (None,)) -> "HyperGrid":
        pts = list(product(gammas, tau2_values))
        return cls(tau2=[t for _, t in pts], gamma=[g for g, _ in pts])

    @classmethod
    def uniform(cls, tau2_min: float = 0.01, tau2_max: float = 3.0, K: int = 1000,
                gammas: Sequence = (None,)) -> "HyperGrid":
        return cls.from_axes(np.linspace(tau2_min, tau2_max, K), gammas)

    def unique_gammas(self) -> list:
        seen = []
        for g in self.gamma:
            if g not in seen:
                seen.append(g)
        return seen


@dataclass(frozen=True)
class PriorSpec:
    """``sigma2 ~ IG(alpha, kappa)`` and a discrete uniform prior over ``grid``."""

    grid: HyperGrid
    alpha: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.kappa > 0):
            raise InvalidHyperparameter("inverse-gamma shape and rate must be positive")


def lram_forward(beta: NDArray, g: NDArray, proj: ProjectionCache) -> NDArray:
    """Deconfound: ``delta = beta + (X'X)^{-1} X' g``."""
    beta = np.asarray(beta, dtype=float)
    g = np.asarray(g, dtype=float)
    if beta.shape[0] != proj.p or g.shape[0] != proj.n:
        raise DimensionError(f"expected beta of length {proj.p} and g of length {proj.n}")
    return beta + proj.ols(g)


def lram_inverse(delta: NDArray, g: NDArray, proj: ProjectionCache) -> NDArray:
    """Reconfound: ``beta = delta - (X'X)^{-1} X' g``."""
    delta = np.asarray(delta, dtype=float)
    g = np.asarray(g, dtype=float)
    if delta.shape[0] != proj.p or g.shape[0] != proj.n:
        raise DimensionError(f"expected delta of length {proj.p} and g of length {proj.n}")
    return delta - proj.ols(g)


def lram_jacobian_matrix(proj: ProjectionCache) -> NDArray:
    """Block matrix of the map ``(delta, g) -> (beta, g)``; its determinant is one."""
    p, n = proj.p, proj.n
    top = np.hstack([np.eye(p), -proj.xtx_inv @ proj.X.T])
    bottom = np.hstack([np.zeros((n, p)), np.eye(n)])
    return np.vstack([top, bottom])


@dataclass(frozen=True)
class PosteriorDraw:
    delta: NDArray
    g: NDArray
    beta: NDArray
    sigma2: float
    tau2: float
    gamma: Optional[float]
    y_miss: NDArray

    @classmethod
    def build(cls, delta, g, proj: ProjectionCache, sigma2, tau2, gamma=None,
              y_miss=None) -> "PosteriorDraw":
        beta = lram_inverse(delta, g, proj)
        draw = cls(np.asarray(delta, float), np.asarray(g, float), beta, float(sigma2),
                   float(tau2), gamma, np.zeros(0) if y_miss is None else np.asarray(y_miss, float))
        draw.check(proj)
        return draw

    def check(self, proj: ProjectionCache, tol: float = 1e-12) -> None:
        recon = self.beta + proj.ols(self.g)
        scale = max(1.0, float(np.max(np.abs(self.delta))))
        if np.max(np.abs(recon - self.delta)) > tol * scale * 10:
            raise AssertionError("posterior draw violates beta + (X'X)^-1 X' g = delta")


@dataclass
class DrawSet:
    """Column-stacked posterior draws; indexing yields :class:`PosteriorDraw`."""

    delta: NDArray
    beta: NDArray
    g: NDArray
    sigma2: NDArray
    tau2: NDArray
    gamma: list
    y_miss: NDArray

    def __len__(self) -> int:
        return self.sigma2.size

    def __getitem__(self, b: int) -> PosteriorDraw:
        return PosteriorDraw(self.delta[b], self.g[b], self.beta[b], float(self.sigma2[b]),
                             float(self.tau2[b]), self.gamma[b], self.y_miss[b])

    def __iter__(self) -> Iterator[PosteriorDraw]:
        for b in range(len(self)):
            yield self[b]

    @classmethod
    def from_draws(cls, draws: Sequence[PosteriorDraw]) -> "DrawSet":
        return cls(
            delta=np.array([d.delta for d in draws]),
            beta=np.array([d.beta for d in draws]),
            g=np.array([d.g for d in draws]),
            sigma2=np.array([d.sigma2 for d in draws]),
            tau2=np.array([d.tau2 for d in draws]),
            gamma=[d.gamma for d in draws],
            y_miss=np.array([d.y_miss for d in draws]).reshape(len(draws), -1),
        )
