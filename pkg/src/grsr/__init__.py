"""Deconfounded spatial regression with an exact, MCMC-free posterior sampler.

The additive model ``y = X beta + g + eps`` is reparameterised as
``delta = beta + (X'X)^{-1} X' g`` so that ``delta`` and the spatial term are
conditionally independent.  Joint posterior draws are then produced directly,
without Markov chains, and ``beta`` is recovered by reconfounding.
"""

from .covariance import (
    CovarianceModel,
    KrigingBlocks,
    bspline_basis,
    build_sigma_g,
    car_covariance,
    chain_adjacency,
    complement_covariance,
    kriging_blocks,
    moran_basis,
)
from .errors import *  # noqa: F401,F403
from .gibbs import GibbsState, run_gibbs
from .linalg import ProjectionCache, SpdFactor, build_projection_cache, chol_spd, solve_spd
from .model import (
    DrawSet,
    HyperGrid,
    HyperParams,
    PosteriorDraw,
    PriorSpec,
    SpatialDataset,
    lram_forward,
    lram_inverse,
    validate_dataset,
)
from .sampler import (
    GridCache,
    TestResult,
    gls_closed_form,
    hypothesis_test,
    precompute_grid,
    run_grsr,
    sample_delta,
    sample_g,
    sample_hyper,
    sample_missing,
)
from .simulate import GqnConfig, SimTruth, simulate_dataset

__version__ = "0.1.0"
