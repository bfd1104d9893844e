"""Synthetic data from a general-quadratic-nonlinearity (GQN) space-time process.

The spatial term is

    g = Z eta + mu0 + zeta * (N nu) * (1 + N exp(1 - nu))

where ``N`` is the closed-neighbourhood 0/1 operator of the 1-D grid (self
plus the two adjacent sites).  This is the general recursion with
``a_ij = zeta`` on neighbours and ``c_{i,kl} = zeta`` when both ``k`` and
``l`` neighbour ``i``, because the double sum factorises into
``(N nu)_i (N exp(1 - nu))_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .errors import CalibrationError, NonFinite
from .model import SpatialDataset, lram_forward
from .linalg import build_projection_cache
from .sampler import SeedLike, seed_sequence

EQ17 = "eq17"
EQ18 = "eq18"
SCENARIOS = (EQ17, EQ18)


@dataclass(frozen=True)
class GqnConfig:
    """Simulation settings.

    ``time_steps`` counts applications of the GQN map: ``T = 1`` applies the
    map once to the initial Gaussian field; larger values first run ``T - 1``
    noisy recursion steps.  ``zeta`` and ``mu0`` are calibrated when left as
    ``None``.  ``omega`` scales ``g`` for the small-signal scenario; ``None``
    there means ``0.1 / max|g|``.
    """

    n: int = 200
    beta_true: Tuple[float, ...] = (-1.0, 2.0)
    eta: Optional[Tuple[float, ...]] = None
    confounder_noise_sd: float = 0.1
    time_steps: int = 1
    zeta: Optional[float] = None
    mu0: Optional[float] = None
    omega: Optional[float] = None
    snr: float = 2.0
    missing_frac: float = 0.10
    gp_range: float = 1.0 / 3.0
    scenario: str = EQ17
    omega_bound: float = 0.1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2 sites")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not 0.0 <= self.missing_frac < 1.0:
            raise ValueError("missing_frac must lie in [0, 1)")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if len(self.beta_true) != 2:
            raise ValueError("the design has an intercept and one slope, so beta_true has length 2")

    @property
    def sites(self) -> NDArray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def eta_vec(self) -> NDArray:
        return -np.asarray(self.beta_true, float) if self.eta is None else np.asarray(self.eta, float)

    @property
    def n_miss(self) -> int:
        return int(np.floor(self.missing_frac * self.n))


@dataclass
class SimTruth:
    beta_true: NDArray
    delta_true: NDArray
    g_true: NDArray
    sigma2_true: float
    y_full: NDArray
    missing_mask: NDArray
    zeta: float = np.nan
    mu0: float = np.nan
    omega: float = 1.0
    extras: dict = field(default_factory=dict)

    @property
    def y_miss(self) -> NDArray:
        return self.y_full[self.missing_mask]


def neighborhood_operator(n: int) -> NDArray:
    """Closed-neighbourhood 0/1 matrix of the 1-D grid."""
    return np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)


def init_gp(sites: NDArray, rng: np.random.Generator, range_: float = 1.0 / 3.0) -> NDArray:
    """One draw of a unit-variance Gaussian process with exponential covariogram."""
    s = np.asarray(sites, dtype=float).reshape(-1, 1)
    K = np.exp(-cdist(s, s) / range_)
    C = np.linalg.cholesky(K + 1e-12 * np.eye(s.shape[0]))
    return C @ rng.standard_normal(s.shape[0])


def gqn_map(nu: NDArray, zeta: float, mu0: float, N: Optional[NDArray] = None) -> NDArray:
    """Deterministic part of one GQN step."""
    nu = np.asarray(nu, dtype=float)
    if N is None:
        N = neighborhood_operator(nu.size)
    with np.errstate(over="ignore", invalid="ignore"):
        lin = N @ nu
        out = mu0 + zeta * lin + zeta * lin * (N @ np.exp(1.0 - nu))
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"GQN map overflowed (zeta={zeta}, max|nu|={np.max(np.abs(nu)):.3g})")
    return out


def gqn_step(nu_prev: NDArray, config: GqnConfig, noise: Optional[NDArray] = None,
             N: Optional[NDArray] = None) -> NDArray:
    """One recursion step ``nu_t = map(nu_{t-1}) + eps_t``."""
    zeta = 0.0 if config.zeta is None else config.zeta
    mu0 = 0.0 if config.mu0 is None else config.mu0
    out = gqn_map(nu_prev, zeta, mu0, N)
    return out if noise is None else out + noise


def _evolve(nu0: NDArray, zeta: float, mu0: float, noise: Optional[NDArray], N: NDArray) -> NDArray:
    """Apply the map ``T`` times (``noise`` has ``T - 1`` rows) and return ``g - Z eta``."""
    nu = nu0
    steps = 0 if noise is None else noise.shape[0]
    for t in range(steps):
        nu = gqn_map(nu, zeta, mu0, N) + noise[t]
    return gqn_map(nu, zeta, mu0, N)


def build_g_gqn(nu: NDArray, config: GqnConfig, Z: NDArray, N: Optional[NDArray] = None) -> NDArray:
    """``g = omega * (Z eta + map(nu))`` at the configured ``zeta`` and ``mu0``."""
    zeta = 0.0 if config.zeta is None else config.zeta
    mu0 = 0.0 if config.mu0 is None else config.mu0
    omega = 1.0 if config.omega is None else config.omega
    return omega * (np.asarray(Z, float) @ config.eta_vec + gqn_map(nu, zeta, mu0, N))


def calibrate(nu0: NDArray, noise: Optional[NDArray], N: NDArray, max_iter: int = 100,
              tol: float = 1e-8) -> Tuple[float, float]:
    """Choose ``zeta`` and ``mu0`` so that ``g - Z eta`` has unit sd and zero mean.

    Starts from ``zeta = 1, mu0 = 0`` and rescales along one shared ``nu``
    path.  With a single map application the problem is linear in
    ``(zeta, mu0)`` and the first pass is exact; otherwise the rescaling is
    repeated to a fixed point.
    """
    zeta, mu0 = 1.0, 0.0
    for _ in range(max_iter):
        try:
            d = _evolve(nu0, zeta, mu0, noise, N)
        except NonFinite as exc:
            raise CalibrationError(f"calibration diverged at zeta={zeta:.4g}: {exc}") from exc
        sd = float(np.std(d, ddof=1))
        if not sd > 0:
            raise CalibrationError("g - Z eta is constant; cannot scale to unit sd")
        m = float(np.mean(d))
        if abs(sd - 1.0) <= tol and abs(m) <= tol:
            return zeta, mu0
        zeta = zeta / sd
        try:
            mu0 -= float(np.mean(_evolve(nu0, zeta, mu0, noise, N)))
        except NonFinite as exc:
            raise CalibrationError(f"calibration diverged at zeta={zeta:.4g}: {exc}") from exc
    raise CalibrationError(f"calibration did not converge in {max_iter} passes")


def simulate_dataset(config: GqnConfig = GqnConfig(), rng: SeedLike = None):
    """Draw one replicate; returns ``(SpatialDataset, SimTruth)``.

    The response is ``y = X beta + g + eps`` with ``X`` rows ``(1, s_i)``
    and ``Z = X + E``.  Noise variance gives the requested signal-to-noise
    ratio for ``X beta + g``.  In the small-signal scenario ``g`` is scaled
    by ``omega`` after the noise variance is fixed.
    """
    ss = seed_sequence(rng)
    s_gp, s_conf, s_innov, s_eps, s_mask = (np.random.default_rng(c) for c in ss.spawn(5))
    n = config.n
    sites = config.sites
    X = np.column_stack([np.ones(n), sites])
    beta = np.asarray(config.beta_true, float)
    Z = X + config.confounder_noise_sd * s_conf.standard_normal(X.shape)
    N = neighborhood_operator(n)
    nu0 = init_gp(sites, s_gp, config.gp_range)

    T = config.time_steps
    zeta, mu0 = config.zeta, config.mu0
    auto = zeta is None or mu0 is None

    def signal_var(z, m, noise):
        g = Z @ config.eta_vec + _evolve(nu0, z, m, noise, N)
        return float(np.var(X @ beta + g, ddof=1)), g

    noise = np.zeros((T - 1, n)) if T > 1 else None
    if auto:
        zeta, mu0 = calibrate(nu0, noise, N)
    var_sig, g = signal_var(zeta, mu0, noise)
    sigma2 = var_sig / config.snr
    if T > 1:
        # one-pass fixed point: innovations use the noise-free sigma2
        noise = np.sqrt(sigma2) * s_innov.standard_normal((T - 1, n))
        if auto:
            zeta, mu0 = calibrate(nu0, noise, N)
        var_sig, g = signal_var(zeta, mu0, noise)
        sigma2 = var_sig / config.snr

    omega = 1.0
    if config.scenario == EQ18:
        omega = config.omega if config.omega is not None else config.omega_bound / float(np.max(np.abs(g)))
    elif config.omega is not None:
        omega = config.omega
    g_true = omega * g

    y_full = X @ beta + g_true + np.sqrt(sigma2) * s_eps.standard_normal(n)
    mask = np.zeros(n, dtype=bool)
    if config.n_miss:
        mask[s_mask.choice(n, size=config.n_miss, replace=False)] = True

    proj_full = build_projection_cache(X)
    delta_true = lram_forward(beta, g_true, proj_full)
    y_nan = np.where(mask, np.nan, y_full)
    data = SpatialDataset.from_full(y_nan, X, sites)
    truth = SimTruth(beta_true=beta, delta_true=delta_true, g_true=g_true, sigma2_true=sigma2,
                     y_full=y_full, missing_mask=mask, zeta=float(zeta), mu0=float(mu0),
                     omega=float(omega),
                     extras={"scenario": config.scenario, "time_steps": T,
                             "signal_var": var_sig})
    return data, truth


def scenario_config(scenario: str = EQ17, **overrides) -> GqnConfig:
    return replace(GqnConfig(scenario=scenario), **overrides)
