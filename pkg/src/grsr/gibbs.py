"""Reference Gibbs sampler for the confounded spatial linear mixed model.

Each sweep updates ``beta``, ``g``, ``sigma2`` and ``(tau2, gamma)`` in that
order from their full conditionals.  The ``g`` update refactorises its
``n_o x n_o`` precision every sweep, which is the cost the direct sampler
avoids.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla
from scipy.special import logsumexp

from .covariance import CovarianceModel, build_sigma_g, kriging_blocks
from .errors import NotPositiveDefinite, SingularCovariance
from .linalg import chol_spd
from .model import DrawSet, HyperParams, PriorSpec, SpatialDataset, lram_forward
from .sampler import (
    SeedLike,
    _mvn_draw,
    kriging_factor,
    kriging_moments,
    sample_inverse_gamma,
    seed_sequence,
)


@dataclass
class GibbsState:
    beta: NDArray
    g: NDArray
    sigma2: float
    tau2: float
    gamma: Optional[float] = None
    k: int = 0            # index into the hyper grid
    iteration: int = 0


@dataclass
class _GammaBlock:
    sigma_inv: NDArray
    logdet: float


class GibbsCache:
    """Per-``gamma`` inverse covariances and log-determinants, built lazily."""

    def __init__(self, data: SpatialDataset, model: CovarianceModel):
        self.data = data
        self.model = model
        self._blocks: dict = {}
        self._kriging: dict = {}

    def block(self, gamma) -> Optional[_GammaBlock]:
        if gamma not in self._blocks:
            try:
                F = chol_spd(build_sigma_g(self.model, gamma, self.data.obs_sites))
            except (NotPositiveDefinite, SingularCovariance):
                self._blocks[gamma] = None
            else:
                inv = sla.cho_solve((F.lower, True), np.eye(F.n))
                self._blocks[gamma] = _GammaBlock(0.5 * (inv + inv.T), F.logdet)
        return self._blocks[gamma]

    def kriging(self, gamma):
        if gamma not in self._kriging:
            d = self.data
            sigma_g = build_sigma_g(self.model, gamma, d.obs_sites)
            blocks = kriging_blocks(self.model, gamma, d.obs_sites, d.miss_sites)
            self._kriging[gamma] = kriging_factor(sigma_g, blocks)
        return self._kriging[gamma]


def init_state(data: SpatialDataset, prior: PriorSpec) -> GibbsState:
    """OLS coefficients, zero spatial term, residual variance, and the grid median."""
    beta = data.proj.ols(data.y_obs)
    resid = data.y_obs - data.X_obs @ beta
    grid = prior.grid
    order = np.argsort(grid.tau2, kind="stable")
    k = int(order[(len(grid) - 1) // 2])
    return GibbsState(beta=beta, g=np.zeros(data.n_obs), sigma2=float(np.var(resid, ddof=1)),
                      tau2=float(grid.tau2[k]), gamma=grid.gamma[k], k=k)


def cond_beta_moments(state: GibbsState, data: SpatialDataset):
    proj = data.proj
    return proj.ols(data.y_obs - state.g), state.sigma2 * proj.xtx_inv


def full_cond_beta(state: GibbsState, data: SpatialDataset, rng: np.random.Generator) -> NDArray:
    """``beta | rest ~ N((X'X)^{-1} X'(y - g), sigma2 (X'X)^{-1})``."""
    proj = data.proj
    z = rng.standard_normal(proj.p)
    return proj.ols(data.y_obs - state.g) + np.sqrt(state.sigma2) * proj.r_inv_apply(z)


def cond_g_moments(state: GibbsState, data: SpatialDataset, sigma_inv: NDArray):
    """Dense mean and covariance of ``g | rest``; used by tests and diagnostics."""
    Q = np.eye(data.n_obs) + sigma_inv / state.tau2
    cov = np.linalg.inv(Q)
    cov = 0.5 * (cov + cov.T)
    return cov @ (data.y_obs - data.X_obs @ state.beta), state.sigma2 * cov


def full_cond_g(state: GibbsState, data: SpatialDataset, model: CovarianceModel,
                rng: np.random.Generator, cache: Optional[GibbsCache] = None) -> NDArray:
    """``g | rest ~ N(Q^{-1}(y - X beta), sigma2 Q^{-1})`` with ``Q = I + Sigma_g^{-1}/tau2``."""
    cache = cache or GibbsCache(data, model)
    blk = cache.block(state.gamma)
    if blk is None:
        raise SingularCovariance(f"Sigma_g(gamma={state.gamma}) is singular")
    Q = np.eye(data.n_obs) + blk.sigma_inv / state.tau2
    C = chol_spd(0.5 * (Q + Q.T)).lower
    mean = sla.cho_solve((C, True), data.y_obs - data.X_obs @ state.beta)
    z = rng.standard_normal(data.n_obs)
    return mean + np.sqrt(state.sigma2) * sla.solve_triangular(C.T, z, lower=False)


def cond_sigma2_params(state: GibbsState, data: SpatialDataset, prior: PriorSpec,
                       sigma_inv: NDArray):
    g = state.g
    resid = data.y_obs - data.X_obs @ state.beta - g
    shape = prior.alpha + data.n_obs
    rate = prior.kappa + float(g @ sigma_inv @ g) / (2.0 * state.tau2) + float(resid @ resid) / 2.0
    return shape, rate


def full_cond_sigma2(state: GibbsState, data: SpatialDataset, model: CovarianceModel,
                     prior: PriorSpec, rng: np.random.Generator,
                     cache: Optional[GibbsCache] = None) -> float:
    cache = cache or GibbsCache(data, model)
    shape, rate = cond_sigma2_params(state, data, prior, cache.block(state.gamma).sigma_inv)
    return float(sample_inverse_gamma(shape, rate, rng))


def cond_tau2_logprobs(state: GibbsState, data: SpatialDataset, model: CovarianceModel,
                       prior: PriorSpec, cache: Optional[GibbsCache] = None) -> NDArray:
    """Normalised log weights of ``N(g; 0, tau2_k sigma2 Sigma_g(gamma_k))`` over the grid."""
    cache = cache or GibbsCache(data, model)
    grid = prior.grid
    n = state.g.size
    lw = np.full(len(grid), -np.inf)
    gammas = np.empty(len(grid), dtype=object)
    gammas[:] = list(grid.gamma)
    for gam in grid.unique_gammas():
        blk = cache.block(gam)
        if blk is None:
            continue
        idx = np.flatnonzero(gammas == gam) if gam is not None else np.flatnonzero(
            [x is None for x in grid.gamma])
        quad = float(state.g @ blk.sigma_inv @ state.g)
        s = grid.tau2[idx] * state.sigma2
        lw[idx] = -0.5 * (n * np.log(s) + blk.logdet + quad / s)
    return lw - logsumexp(lw)


def full_cond_tau2(state: GibbsState, data: SpatialDataset, model: CovarianceModel,
                   prior: PriorSpec, rng: np.random.Generator,
                   cache: Optional[GibbsCache] = None) -> int:
    """Categorical draw of the grid index; returns ``k``."""
    probs = np.exp(cond_tau2_logprobs(state, data, model, prior, cache))
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(k, cdf.size - 1)


def sweep(state: GibbsState, data: SpatialDataset, model: CovarianceModel, prior: PriorSpec,
          rng: np.random.Generator, cache: GibbsCache) -> GibbsState:
    state.beta = full_cond_beta(state, data, rng)
    state.g = full_cond_g(state, data, model, rng, cache)
    state.sigma2 = full_cond_sigma2(state, data, model, prior, rng, cache)
    k = full_cond_tau2(state, data, model, prior, rng, cache)
    state.k, state.tau2, state.gamma = k, float(prior.grid.tau2[k]), prior.grid.gamma[k]
    state.iteration += 1
    return state


@dataclass
class GibbsResult:
    draws: DrawSet
    seconds: float
    final_state: GibbsState


def run_gibbs(data: SpatialDataset, model: CovarianceModel, prior: PriorSpec,
              iters: int = 2000, burn_in: int = 1000, thin: int = 10,
              rng: SeedLike = None, include_noise: bool = True) -> GibbsResult:
    """Run one chain and keep ``(iters - burn_in) // thin`` draws.

    Each kept draw also records ``delta = beta + (X'X)^{-1} X' g`` and a
    kriged draw of the missing responses.
    """
    if not iters > burn_in >= 0:
        raise ValueError("need iters > burn_in >= 0")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    t0 = time.perf_counter()
    chain_ss, pred_ss = seed_sequence(rng).spawn(2)
    rng_chain = np.random.default_rng(chain_ss)
    rng_pred = np.random.default_rng(pred_ss)
    cache = GibbsCache(data, model)
    state = init_state(data, prior)
    kept = []
    for it in range(1, iters + 1):
        sweep(state, data, model, prior, rng_chain, cache)
        if it > burn_in and (it - burn_in) % thin == 0:
            delta = lram_forward(state.beta, state.g, data.proj)
            if data.n_miss:
                theta = HyperParams(state.sigma2, state.tau2, state.gamma)
                mean, cov = kriging_moments(data, cache.kriging(state.gamma), state.beta,
                                            theta, include_noise)
                y_miss = _mvn_draw(mean, cov, rng_pred)
            else:
                y_miss = np.zeros(0)
            kept.append((state.beta.copy(), state.g.copy(), state.sigma2, state.tau2,
                         state.gamma, delta, y_miss))
    B = len(kept)
    draws = DrawSet(
        delta=np.array([d[5] for d in kept]).reshape(B, data.p),
        beta=np.array([d[0] for d in kept]).reshape(B, data.p),
        g=np.array([d[1] for d in kept]).reshape(B, data.n_obs),
        sigma2=np.array([d[2] for d in kept]),
        tau2=np.array([d[3] for d in kept]),
        gamma=[d[4] for d in kept],
        y_miss=np.array([d[6] for d in kept]).reshape(B, data.n_miss),
    )
    return GibbsResult(draws=draws, seconds=time.perf_counter() - t0, final_state=state)
