from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from mediationdml.errors import ConvergenceWarning, DimensionMismatch, OneClassOnly
from mediationdml.learners import (
    PROB_CLIP,
    _standardize,
    fit_lasso_linear,
    fit_logistic_lasso,
    fit_post_lasso_linear,
    plugin_lambda,
    predict_mean,
    predict_proba,
)

# 2 * 1.1 * sqrt(1000) * Phi^{-1}(1 - 0.1 / log(1000) / 400), evaluated with
# 40-digit arithmetic before the implementation was written.
PLUGIN_ORACLE_1000_200 = 276.07615169785894


def kkt_residuals(X, y, model):
    """Max KKT violation on the standardized scale for the lasso objective."""
    Xs, center, scale = _standardize(np.asarray(X, float))
    n = Xs.shape[0]
    beta_std = model.coefficients * scale
    r = y - y.mean() - Xs @ beta_std
    grad = Xs.T @ r / n
    lam_n = model.lam / n
    on = beta_std != 0
    viol_on = np.abs(grad[on] - lam_n * np.sign(beta_std[on]))
    viol_off = np.maximum(np.abs(grad[~on]) - lam_n, 0.0)
    return max(viol_on.max(initial=0.0), viol_off.max(initial=0.0))


class TestPluginLambda:
    def test_oracle_value(self):
        assert plugin_lambda(1000, 200, 1.0) == pytest.approx(PLUGIN_ORACLE_1000_200, rel=1e-12)

    def test_monotone_in_p(self):
        assert plugin_lambda(1000, 400, 1.0) > plugin_lambda(1000, 200, 1.0)

    def test_linear_in_noise(self):
        assert plugin_lambda(500, 50, 2.0) == pytest.approx(2 * plugin_lambda(500, 50, 1.0))

    @pytest.mark.parametrize("args", [(1000, 200, 0.0), (1, 5, 1.0), (100, 0, 1.0)])
    def test_preconditions(self, args):
        with pytest.raises(ValueError):
            plugin_lambda(*args)


class TestLasso:
    def test_lambda_zero_is_ols(self, rng):
        X = rng.standard_normal((200, 5))
        y = 1.0 + X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + rng.standard_normal(200)
        model = fit_lasso_linear(X, y, 0.0)
        Z = np.column_stack([np.ones(200), X])
        ols = np.linalg.lstsq(Z, y, rcond=None)[0]
        np.testing.assert_allclose(model.coefficients, ols[1:], atol=1e-6)
        assert model.intercept == pytest.approx(ols[0], abs=1e-6)

    def test_orthonormal_soft_threshold(self):
        # columns with mean 0 and (1/n) X'X = I, so the standardized and raw scales agree
        n = 8
        H = np.array([[1, 1, 1, 1, 1, 1, 1, 1],
                      [1, -1, 1, -1, 1, -1, 1, -1],
                      [1, 1, -1, -1, 1, 1, -1, -1],
                      [1, -1, -1, 1, 1, -1, -1, 1]], dtype=float).T
        X = H[:, 1:]
        y = np.array([3.0, -1.0, 2.0, 0.5, 1.5, -2.0, 0.0, 4.0])
        lam = 4.0
        ols = X.T @ (y - y.mean()) / n
        oracle = np.sign(ols) * np.maximum(np.abs(ols) - lam / n, 0.0)
        model = fit_lasso_linear(X, y, lam)
        np.testing.assert_allclose(model.coefficients, oracle, atol=1e-8)
        assert model.intercept == pytest.approx(y.mean(), abs=1e-12)

    def test_total_shrinkage(self, rng):
        X = rng.standard_normal((100, 4))
        y = X[:, 0] + rng.standard_normal(100)
        model = fit_lasso_linear(X, y, 1e6)
        assert np.all(model.coefficients == 0)
        assert model.selected_support.size == 0
        assert model.intercept == pytest.approx(y.mean())

    def test_kkt(self, rng):
        X = rng.standard_normal((300, 40)) @ np.diag(rng.uniform(0.2, 5, 40))
        y = X[:, :3] @ np.array([1.0, -0.5, 0.25]) + rng.standard_normal(300)
        model = fit_lasso_linear(X, y, 30.0)
        assert 0 < model.selected_support.size < 40
        assert kkt_residuals(X, y, model) <= 1e-5

    def test_support_matches_nonzeros(self, rng):
        X = rng.standard_normal((150, 10))
        y = X[:, 0] * 2 + rng.standard_normal(150)
        model = fit_lasso_linear(X, y, 20.0)
        off = np.setdiff1d(np.arange(10), model.selected_support)
        assert np.all(model.coefficients[off] == 0.0)

    def test_constant_column_zero(self, rng):
        X = np.column_stack([np.ones(50), rng.standard_normal(50)])
        y = 2 * X[:, 1] + 0.1 * rng.standard_normal(50)
        model = fit_lasso_linear(X, y, 0.0)
        assert model.coefficients[0] == 0.0

    def test_row_order_invariance(self, rng):
        X = rng.standard_normal((120, 8))
        y = X[:, 1] - X[:, 2] + rng.standard_normal(120)
        perm = rng.permutation(120)
        a = fit_lasso_linear(X, y, 10.0)
        b = fit_lasso_linear(X[perm], y[perm], 10.0)
        np.testing.assert_allclose(a.predict(X), b.predict(X), atol=1e-8)

    def test_non_convergence_flagged(self, rng):
        X = rng.standard_normal((100, 30))
        X[:, 1] = X[:, 0] + 1e-3 * rng.standard_normal(100)
        y = X[:, 0] + rng.standard_normal(100)
        with pytest.warns(ConvergenceWarning):
            model = fit_lasso_linear(X, y, 0.0, max_sweeps=1, tol=1e-15)
        assert "DidNotConverge" in model.flags
        assert not model.converged

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(0.5, 200.0))
    def test_kkt_property(self, seed, lam):
        r = np.random.default_rng(seed)
        X = r.standard_normal((80, 12))
        y = X[:, 0] - 0.5 * X[:, 3] + r.standard_normal(80)
        model = fit_lasso_linear(X, y, lam)
        assert kkt_residuals(X, y, model) <= 1e-5


class TestPostLasso:
    def test_noiseless_single_column(self, rng):
        X = rng.standard_normal((2000, 30))
        y = 0.7 + 2.5 * X[:, 4]
        model = fit_post_lasso_linear(X, y)
        assert model.coefficients[4] == pytest.approx(2.5, abs=1e-8)
        assert model.intercept == pytest.approx(0.7, abs=1e-8)

    def test_empty_support_intercept_only(self, rng):
        X = rng.standard_normal((100, 5))
        y = rng.standard_normal(100)
        model = fit_post_lasso_linear(X, y, penalty_factor=1e6)
        assert model.selected_support.size == 0
        assert model.intercept == pytest.approx(y.mean())

    def test_constant_response(self, rng):
        model = fit_post_lasso_linear(rng.standard_normal((30, 3)), np.full(30, 4.0))
        np.testing.assert_allclose(model.predict(np.zeros((2, 3))), 4.0)

    def test_refit_beats_lasso_in_sample(self, rng):
        X = rng.standard_normal((400, 50))
        y = X[:, :4] @ np.array([1.0, 0.8, -0.6, 0.4]) + rng.standard_normal(400)
        post = fit_post_lasso_linear(X, y)
        lasso = fit_lasso_linear(X, y, post.lam)
        np.testing.assert_array_equal(lasso.selected_support, post.selected_support)
        mse = lambda m: np.mean((y - m.predict(X)) ** 2)
        assert mse(post) <= mse(lasso) + 1e-12

    def test_selects_strong_signals(self, rng):
        X = rng.standard_normal((1000, 200))
        y = X[:, :3] @ np.array([1.0, -1.0, 0.5]) + rng.standard_normal(1000)
        model = fit_post_lasso_linear(X, y)
        assert set(range(3)) <= set(model.selected_support.tolist())
        assert model.selected_support.size <= 10


class TestLogisticLasso:
    def test_zero_design(self, rng):
        y = (rng.uniform(size=300) < 0.3).astype(float)
        model = fit_logistic_lasso(np.zeros((300, 4)), y)
        assert model.intercept == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-8)
        assert np.all(model.coefficients == 0)

    def test_total_shrinkage_gives_mean(self, rng):
        X = rng.standard_normal((300, 5))
        y = (rng.uniform(size=300) < expit(X[:, 0])).astype(float)
        model = fit_logistic_lasso(X, y, lam=1e8)
        np.testing.assert_allclose(model.predict_proba(X), y.mean(), atol=1e-8)

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            fit_logistic_lasso(np.ones((10, 2)), np.zeros(10))

    def test_strong_covariate_matches_ml_oracle(self):
        r = np.random.default_rng(2)
        n = 100_000
        X = r.standard_normal((n, 10))
        y = (r.uniform(size=n) < expit(-0.3 + 1.0 * X[:, 0])).astype(float)
        model = fit_logistic_lasso(X, y)
        assert model.selected_support.tolist() == [0]

        def nll(theta):
            eta = theta[0] + theta[1] * X[:, 0]
            return np.sum(np.logaddexp(0, eta) - y * eta)

        oracle = minimize(nll, np.zeros(2), method="BFGS").x
        assert model.coefficients[0] == pytest.approx(oracle[1], abs=0.05)
        assert model.coefficients[0] == pytest.approx(1.0, abs=0.05)

    def test_deviance_non_increasing(self, rng):
        X = rng.standard_normal((500, 30))
        y = (rng.uniform(size=500) < expit(X[:, :3].sum(axis=1))).astype(float)
        trace = np.array(fit_logistic_lasso(X, y).deviance_trace)
        assert trace.size >= 2
        assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[:-1]))

    def test_separation_keeps_penalized_fit(self):
        x = np.linspace(-1, 1, 200)
        y = (x > 0).astype(float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model = fit_logistic_lasso(x[:, None], y, lam=1.0)
        assert "SeparationDetected" in model.flags
        assert np.all(np.isfinite(model.coefficients))

    def test_probabilities_clipped(self, rng):
        X = rng.standard_normal((200, 2))
        y = (X[:, 0] + 0.5 * rng.standard_normal(200) > 0).astype(float)
        model = fit_logistic_lasso(X, y)
        p = model.predict_proba(np.array([[1e6, 0.0], [-1e6, 0.0]]))
        assert np.all(p >= PROB_CLIP) and np.all(p <= 1 - PROB_CLIP)


class TestPrediction:
    def test_single_row(self, rng):
        X = rng.standard_normal((50, 3))
        y = X @ np.array([1.0, 2.0, 3.0])
        model = fit_lasso_linear(X, y, 0.0)
        assert isinstance(predict_mean(model, X[0]), float)
        assert predict_mean(model, X[0]) == pytest.approx(y[0], abs=1e-8)

    def test_saturated_interpolation(self, rng):
        X = rng.standard_normal((5, 4))
        y = rng.standard_normal(5)
        model = fit_lasso_linear(X, y, 0.0, tol=1e-14, max_sweeps=200_000)
        np.testing.assert_allclose(model.predict(X), y, atol=1e-8)

    def test_dimension_mismatch(self, rng):
        model = fit_lasso_linear(rng.standard_normal((20, 3)), rng.standard_normal(20), 0.0)
        with pytest.raises(DimensionMismatch):
            predict_mean(model, np.zeros(4))

    def test_zero_coefficients(self, rng):
        y = (rng.uniform(size=100) < 0.4).astype(float)
        model = fit_logistic_lasso(rng.standard_normal((100, 2)), y, lam=1e8)
        assert predict_proba(model, np.zeros(2)) == pytest.approx(expit(model.intercept))
