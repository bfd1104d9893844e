import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_P, random_design, random_spd
from grsr.errors import DimensionError, NotPositiveDefinite, RankDeficient
from grsr.linalg import build_projection_cache, chol_spd, solve_spd


def test_intercept_projection_is_mean():
    proj = build_projection_cache(np.array([[1.0], [1.0]]))
    v = np.array([1.0, 3.0])
    np.testing.assert_allclose(proj.project(v), [2.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(proj.residualize(v), [-1.0, 1.0], atol=1e-14)


def test_intercept_complement_sign_convention():
    proj = build_projection_cache(np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(proj.L[:, 0], [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-14)


def test_random_design_against_dense_projection(rng):
    X = rng.uniform(-1, 1, size=(10, 3))
    proj = build_projection_cache(X)
    P = dense_P(X)
    assert np.max(np.abs(X.T @ proj.L)) <= 1e-10
    np.testing.assert_allclose(proj.L @ proj.L.T, np.eye(10) - P, atol=1e-10)
    np.testing.assert_allclose(proj.Q.T @ proj.Q, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(proj.L.T @ proj.L, np.eye(7), atol=1e-10)
    np.testing.assert_allclose(proj.xtx_inv, np.linalg.inv(X.T @ X), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(3, 15), p=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_projection_properties(n, p, seed):
    if n <= p:
        return
    r = np.random.default_rng(seed)
    X = random_design(r, n, p)
    proj = build_projection_cache(X)
    v = r.standard_normal(n)
    assert np.max(np.abs(proj.project(v) + proj.residualize(v) - v)) <= 1e-12
    once = proj.residualize(v)
    np.testing.assert_allclose(proj.residualize(once), once, atol=1e-10)
    np.testing.assert_allclose(proj.L @ (proj.L.T @ v), once, atol=1e-10)
    np.testing.assert_allclose(proj.ols(v), np.linalg.lstsq(X, v, rcond=None)[0], atol=1e-10)


def test_rank_and_dimension_errors():
    X = np.column_stack([np.ones(5), np.arange(5.0), np.arange(5.0)])
    with pytest.raises(RankDeficient):
        build_projection_cache(X)
    with pytest.raises(DimensionError):
        build_projection_cache(np.ones((2, 2)))


def test_chol_identity():
    F = chol_spd(np.eye(3))
    np.testing.assert_array_equal(F.lower, np.eye(3))
    assert F.logdet == 0.0
    assert not F.jittered


def test_chol_two_by_two():
    F = chol_spd(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(F.lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-14)
    assert F.logdet == pytest.approx(np.log(8.0), abs=1e-14)


def test_chol_pure_jitter():
    F = chol_spd(np.zeros((2, 2)), jitter=0.01)
    np.testing.assert_allclose(F.matrix(), 0.01 * np.eye(2), atol=1e-16)
    assert F.logdet == pytest.approx(2 * np.log(0.01))
    assert F.jittered


def test_chol_rejects_bad_input():
    with pytest.raises(NotPositiveDefinite):
        chol_spd(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NotPositiveDefinite):
        chol_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_chol_reconstruction_and_logdet(rng):
    M = random_spd(rng, 12)
    F = chol_spd(M)
    assert np.linalg.norm(M - F.matrix()) / np.linalg.norm(M) <= 1e-8
    assert F.logdet == pytest.approx(np.linalg.slogdet(M)[1], abs=1e-10)


@pytest.mark.parametrize("M, b, expected", [
    (np.eye(2), [5.0, -2.0], [5.0, -2.0]),
    ([[4.0, 2.0], [2.0, 3.0]], [1.0, 0.0], [0.375, -0.25]),
    (np.diag([2.0, 4.0]), [2.0, 4.0], [1.0, 1.0]),
])
def test_solve_spd_examples(M, b, expected):
    np.testing.assert_allclose(solve_spd(chol_spd(np.asarray(M, float)), np.asarray(b)), expected,
                               atol=1e-14)


def test_solve_spd_residual_and_dims(rng):
    M = random_spd(rng, 8)
    b = rng.standard_normal((8, 3))
    x = solve_spd(chol_spd(M), b)
    assert np.linalg.norm(M @ x - b) <= 1e-8 * np.linalg.norm(b)
    with pytest.raises(DimensionError):
        solve_spd(chol_spd(M), np.ones(3))
