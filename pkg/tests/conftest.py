import os

import numpy as np
import pytest

from grsr.covariance import CovarianceModel
from grsr.model import HyperGrid, PriorSpec, validate_dataset


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GRSR_FULL") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale run; set GRSR_FULL=1")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


def dense_P(X):
    X = np.atleast_2d(X)
    return X @ np.linalg.inv(X.T @ X) @ X.T


def mc_se(x, axis=0):
    x = np.asarray(x, float)
    return x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])


def random_design(rng, n, p):
    X = np.column_stack([np.ones(n), rng.uniform(-1, 1, size=(n, p - 1))]) if p > 1 else np.ones((n, 1))
    return X


def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_exp_dataset():
    """Six observed and two missing sites with an intercept and slope."""
    r = np.random.default_rng(7)
    sites = np.array([0.0, 0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0])
    miss = np.array([2, 5])
    obs = np.setdiff1d(np.arange(sites.size), miss)
    X = np.column_stack([np.ones(sites.size), sites])
    y = X @ np.array([0.5, -1.0]) + r.standard_normal(sites.size)
    return validate_dataset(y[obs], X[obs], sites[obs], sites[miss], X[miss])


@pytest.fixture
def exp_model():
    return CovarianceModel.exponential()


def prior_on(tau2, gammas=(None,), alpha=1.0, kappa=1.0):
    return PriorSpec(HyperGrid.from_axes(tau2, gammas), alpha, kappa)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = {}
N_CRITERIA = 12


def record_criterion(number, ok, detail):
    """Store and print one pass/fail line for an acceptance criterion."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(
            ACCEPTANCE_LINES.get(k, f"criterion {k:>2}: NO RESULT  (skipped, deselected or errored; 9-12 need GRSR_FULL=1)"))
