import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grsr.covariance import (
    CovarianceModel,
    bspline_basis,
    build_sigma_g,
    car_covariance,
    chain_adjacency,
    complement_covariance,
    kriging_blocks,
    moran_basis,
)
from grsr.errors import (
    DegenerateOperator,
    FamilyMismatch,
    InvalidHyperparameter,
    InvalidRank,
    RankTooLarge,
    SingularCovariance,
)
from grsr.linalg import build_projection_cache


def cox_de_boor(x, t, i, k):
    """Textbook recursion; the right end point is assigned to the last non-empty span."""
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        last = np.max(np.flatnonzero(np.diff(t) > 0))
        return 1.0 if (x == t[-1] and i == last) else 0.0
    left = 0.0 if t[i + k] == t[i] else (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(x, t, i, k - 1)
    right = 0.0 if t[i + k + 1] == t[i + 1] else (
        (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(x, t, i + 1, k - 1))
    return left + right


def oracle_basis(x, r):
    t = np.concatenate([np.zeros(4), np.linspace(0, 1, r - 2)[1:-1], np.ones(4)])
    return np.array([[cox_de_boor(xi, t, i, 3) for i in range(r)] for xi in x])


@pytest.mark.parametrize("r", [4, 5, 10, 13])
def test_bspline_matches_cox_de_boor(r):
    x = np.concatenate([np.linspace(0, 1, 37), [0.123, 0.999, 1.0]])
    np.testing.assert_allclose(bspline_basis(x, r), oracle_basis(x, r), atol=1e-12)


def test_bspline_default_dimensions():
    S = bspline_basis(np.linspace(0, 1, 200), 10)
    assert S.shape == (200, 10)
    assert S.min() >= 0.0 and S.max() <= 1.0
    assert np.all((S > 0).sum(axis=1) >= 1)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.0, 1.0), r=st.integers(4, 20))
def test_bspline_partition_of_unity(x, r):
    assert abs(bspline_basis(np.array([x]), r).sum() - 1.0) <= 1e-12


def test_bspline_errors():
    with pytest.raises(InvalidRank):
        bspline_basis(np.linspace(0, 1, 5), 3)
    with pytest.raises(ValueError):
        bspline_basis(np.array([1.5]), 6)


def test_exponential_examples():
    m = CovarianceModel.exponential()
    np.testing.assert_allclose(build_sigma_g(m, 0.3, np.array([0.2, 0.2])), np.ones((2, 2)))
    S = build_sigma_g(m, 1.0, np.array([0.0, 1.0]))
    assert S[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-15)
    with pytest.raises(InvalidHyperparameter):
        build_sigma_g(m, -1.0, np.array([0.0, 1.0]))


def test_lowrank_identity_basis():
    m = CovarianceModel.lowrank(np.eye(2), rho=0.01)
    np.testing.assert_allclose(build_sigma_g(m, None, np.array([0.0, 1.0])), 1.01 * np.eye(2))


def test_bspline_model_is_sst_plus_rho():
    s = np.linspace(0, 1, 30)
    S = bspline_basis(s, 10)
    np.testing.assert_array_equal(build_sigma_g(CovarianceModel.bspline(10, 0.01), None, s),
                                  S @ S.T + 0.01 * np.eye(30))


def test_car_definition_and_errors():
    A = chain_adjacency(5)
    D = np.diag(A.sum(1))
    np.testing.assert_allclose(car_covariance(A, 0.5), np.linalg.inv(D - 0.5 * A), atol=1e-12)
    with pytest.raises(SingularCovariance):
        car_covariance(A, 1.0)
    with pytest.raises(InvalidHyperparameter):
        car_covariance(A, 1.5)
    with pytest.raises(SingularCovariance):
        car_covariance(np.zeros((3, 3)), 0.5)


@pytest.mark.parametrize("family", ["exponential", "bspline", "car", "moran"])
def test_sigma_g_symmetric_pd(family, rng):
    n = 25
    lattice = np.linspace(0, 1, n)
    A = chain_adjacency(n)
    X = np.column_stack([np.ones(n), lattice])
    for _ in range(5):
        if family == "exponential":
            m, g = CovarianceModel.exponential(), rng.uniform(0.05, 2)
        elif family == "bspline":
            m, g = CovarianceModel.bspline(int(rng.integers(4, 12)), 0.01), None
        elif family == "car":
            m, g = CovarianceModel.car(lattice, A, rho=0.0), rng.uniform(0.05, 0.95)
        else:
            m, g = CovarianceModel.moran(lattice, A, X, 5, rho=0.01), rng.uniform(0.05, 0.95)
        S = build_sigma_g(m, g, lattice)
        assert np.max(np.abs(S - S.T)) <= 1e-10
        assert np.linalg.eigvalsh(S).min() > 0


def test_moran_chain_intercept_oracle():
    A = chain_adjacency(4)
    proj = build_projection_cache(np.ones((4, 1)))
    phi = moran_basis(A, proj, 1)
    P = np.full((4, 4), 0.25)
    Mop = (np.eye(4) - P) @ A @ (np.eye(4) - P)
    w, V = np.linalg.eigh(Mop)
    lead = V[:, np.argmax(w)]
    assert abs(phi[:, 0] @ np.ones(4)) <= 1e-8
    assert abs(abs(phi[:, 0] @ lead) - 1.0) <= 1e-8


def test_moran_basis_properties(rng):
    n = 30
    X = np.column_stack([np.ones(n), rng.uniform(size=n)])
    proj = build_projection_cache(X)
    phi = moran_basis(chain_adjacency(n), proj, 12)
    np.testing.assert_allclose(phi.T @ phi, np.eye(12), atol=1e-10)
    assert np.max(np.abs(X.T @ phi)) <= 1e-8


def test_moran_errors():
    proj = build_projection_cache(np.ones((4, 1)))
    with pytest.raises(DegenerateOperator):
        moran_basis(np.zeros((4, 4)), proj, 1)
    with pytest.raises(RankTooLarge):
        moran_basis(chain_adjacency(4), proj, 4)


def test_complement_covariance_kills_design(rng):
    X = np.column_stack([np.ones(8), rng.uniform(size=8)])
    proj = build_projection_cache(X)
    C = complement_covariance(np.eye(8), proj)
    np.testing.assert_allclose(C @ X, 0, atol=1e-12)


def test_kriging_blocks_examples():
    m = CovarianceModel.exponential()
    empty = kriging_blocks(m, 0.3, np.array([0.0, 0.5]), np.array([]))
    assert empty.sigma_cross.shape == (0, 2) and empty.n_miss == 0
    kb = kriging_blocks(m, 0.3, np.array([0.0, 0.5, 1.0]), np.array([0.5]))
    assert kb.sigma_cross[0, 1] == 1.0


def test_kriging_blocks_bspline_row_matches():
    obs = np.linspace(0, 1, 12)
    mod = CovarianceModel.bspline(6, 0.01)
    kb = kriging_blocks(mod, None, obs, obs[[4]])
    S = bspline_basis(obs, 6)
    np.testing.assert_allclose(kb.sigma_cross[0], (S @ S.T)[4], atol=1e-14)
    with pytest.raises(FamilyMismatch):
        kriging_blocks(CovarianceModel.lowrank(S), None, obs, obs[[4]])


@pytest.mark.parametrize("family", ["exponential", "bspline", "car"])
def test_stacked_kriging_covariance_psd(family, rng):
    for _ in range(5):
        lattice = np.linspace(0, 1, 40)
        idx = rng.permutation(40)
        obs, miss = np.sort(lattice[idx[:30]]), np.sort(lattice[idx[30:]])
        if family == "exponential":
            m, g = CovarianceModel.exponential(), rng.uniform(0.05, 1)
        elif family == "bspline":
            m, g = CovarianceModel.bspline(8, 0.01), None
        else:
            m, g = CovarianceModel.car(lattice, chain_adjacency(40)), rng.uniform(0.1, 0.9)
        Sg = build_sigma_g(m, g, obs)
        kb = kriging_blocks(m, g, obs, miss)
        full = np.block([[Sg, kb.sigma_cross.T], [kb.sigma_cross, kb.sigma_m]])
        assert np.linalg.eigvalsh(full).min() >= -1e-8


def test_lattice_family_rejects_off_lattice_sites():
    lattice = np.linspace(0, 1, 5)
    m = CovarianceModel.car(lattice, chain_adjacency(5))
    with pytest.raises(FamilyMismatch):
        build_sigma_g(m, 0.5, np.array([0.1]))
    with pytest.raises(InvalidHyperparameter):
        build_sigma_g(CovarianceModel.bspline(), 0.5, lattice)
