import numpy as np
import pytest

from multicate import fit_ols
from multicate.errors import NumericalError

from oracles import ols_normal_equations


def test_intercept_only_estimates_mean():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    fit = fit_ols(np.empty((4, 0)), y, names=[])
    assert fit.estimates[0] == pytest.approx(y.mean())
    assert fit.names == ["(Intercept)"]


def test_exact_linear_data_recovered_with_zero_residual_variance():
    x = np.linspace(-2, 2, 12).reshape(-1, 1)
    y = 1.0 + 2.0 * x[:, 0]
    fit = fit_ols(x, y)
    assert fit.estimates[0] == pytest.approx(1.0, abs=1e-12)
    assert fit.estimates[1] == pytest.approx(2.0, abs=1e-12)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-20)


def test_random_system_matches_normal_equations_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    fit = fit_ols(X, y)
    beta = ols_normal_equations(X, y)
    np.testing.assert_allclose(fit.estimates, beta, atol=1e-8)


def test_classical_standard_errors_match_covariance_formula():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    y = X[:, 0] + rng.normal(size=50)
    fit = fit_ols(X, y)
    M = np.column_stack([np.ones(50), X])
    resid = y - M @ fit.estimates
    sigma2 = resid @ resid / (50 - 3)
    cov = sigma2 * np.linalg.inv(M.T @ M)
    np.testing.assert_allclose(fit.standard_errors, np.sqrt(np.diag(cov)), rtol=1e-8)


def test_rank_deficiency_names_collinear_columns():
    rng = np.random.default_rng(2)
    x = rng.normal(size=30)
    X = np.column_stack([x, 2 * x])
    with pytest.raises(NumericalError, match="dup"):
        fit_ols(X, rng.normal(size=30), names=["base", "dup"])


def test_robust_errors_close_to_classical_under_homoskedasticity():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4000, 2))
    y = 1.0 + X @ np.array([0.5, -0.25]) + rng.normal(size=4000)
    classical = fit_ols(X, y)
    robust = fit_ols(X, y, robust=True)
    np.testing.assert_allclose(
        robust.standard_errors, classical.standard_errors, rtol=0.1
    )
    assert robust.robust and not classical.robust


def test_p_values_near_zero_for_strong_signal():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 1))
    y = 5.0 * X[:, 0] + 0.1 * rng.normal(size=100)
    fit = fit_ols(X, y)
    assert fit.p_values[1] < 1e-10
