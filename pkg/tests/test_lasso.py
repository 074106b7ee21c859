import numpy as np
import pytest

from multicate import fit_lasso
from multicate.lasso import lambda_max

from oracles import ols_normal_equations, soft_threshold


def test_lambda_at_or_above_max_zeroes_all_coefficients():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + rng.normal(size=50)
    lmax = lambda_max(X, y)
    model = fit_lasso(X, y, lam=lmax)
    assert np.all(model.coefficients == 0.0)
    assert model.intercept == pytest.approx(y.mean())
    model = fit_lasso(X, y, lam=2 * lmax)
    assert np.all(model.coefficients == 0.0)


def test_unpenalized_fit_matches_ols_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = X @ np.array([0.7, -1.2, 2.0]) + 0.3 * rng.normal(size=60)
    model = fit_lasso(X, y, lam=0.0)
    beta = ols_normal_equations(X, y)
    assert model.intercept == pytest.approx(beta[0], abs=1e-5)
    np.testing.assert_allclose(model.coefficients, beta[1:], atol=1e-5)


def test_orthonormal_design_soft_thresholds_ols_coefficients():
    rng = np.random.default_rng(2)
    n, p = 400, 4
    Q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    X = Q * np.sqrt(n)  # columns with zero mean? enforce below
    X = X - X.mean(axis=0)
    # re-orthonormalize after centering so that X'X/n = I
    Q, _ = np.linalg.qr(X)
    X = Q * np.sqrt(n)
    y = X @ np.array([1.0, -0.5, 0.2, 0.0]) + 0.1 * rng.normal(size=n)

    lam = 0.3
    sds = X.std(axis=0)
    model = fit_lasso(X, y, lam=lam)
    yc = y - y.mean()
    for j in range(p):
        xs = (X[:, j] - X[:, j].mean()) / sds[j]
        ols_j = float(xs @ yc) / n
        expected = soft_threshold(ols_j, lam) / sds[j]
        assert model.coefficients[j] == pytest.approx(expected, abs=1e-6)


def test_objective_non_increasing_across_sweeps():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 6))
    y = X @ rng.normal(size=6) + rng.normal(size=80)
    model = fit_lasso(X, y, lam=0.05, track_objective=True)
    hist = model.objective_history
    assert hist is not None and len(hist) >= 2
    assert np.all(np.diff(hist) <= 1e-12)


def test_cv_recovers_sparse_signal():
    rng = np.random.default_rng(4)
    n = 300
    X = rng.normal(size=(n, 6))
    y = 2.0 * X[:, 0] + 0.05 * rng.normal(size=n)
    model = fit_lasso(X, y, lam="cv", seed=0)
    assert model.coefficients[0] == pytest.approx(2.0, abs=0.1)
    assert np.all(np.abs(model.coefficients[1:]) < 0.05)
    assert model.cv_lambdas is not None and len(model.cv_lambdas) == len(model.cv_errors)


def test_cv_is_deterministic_given_seed():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 4))
    y = X[:, 1] + rng.normal(size=100)
    m1 = fit_lasso(X, y, lam="cv", seed=42)
    m2 = fit_lasso(X, y, lam="cv", seed=42)
    assert m1.lam == m2.lam
    np.testing.assert_array_equal(m1.coefficients, m2.coefficients)


def test_constant_column_gets_zero_coefficient():
    rng = np.random.default_rng(6)
    X = np.column_stack([rng.normal(size=50), np.full(50, 3.0)])
    y = X[:, 0] * 1.5 + rng.normal(size=50) * 0.1
    model = fit_lasso(X, y, lam=0.01)
    assert model.coefficients[1] == 0.0
    assert np.isfinite(model.predict(X)).all()
