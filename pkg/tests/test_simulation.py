from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import norm

from mediationdml.errors import MediationError
from mediationdml.simulation import (
    MetricsTable,
    SimulationDesign,
    closed_form_counterfactuals,
    closed_form_effects,
    generate_dgp,
    oracle_nuisances,
    run_monte_carlo,
    run_replication,
    summarize,
    true_effects_oracle,
)

NULL_DESIGN = SimulationDesign(p=5, coef_scale=0.0, sigma_kind="identity")


def _ols(X, y):
    X = np.column_stack([np.ones(len(y)), X])
    return np.linalg.lstsq(X, y, rcond=None)[0]


class TestDesign:
    def test_beta_decay(self):
        beta = SimulationDesign(p=4).beta
        np.testing.assert_allclose(beta, 0.3 / np.arange(1, 5) ** 2)

    def test_toeplitz(self):
        s = SimulationDesign(p=4).sigma
        assert s[0, 3] == pytest.approx(0.5 ** 3)
        assert np.all(np.diag(s) == 1)

    @pytest.mark.parametrize("kw", [{"n": 0}, {"p": 0}, {"coef_scale": -1.0},
                                    {"sigma_kind": "ar2"}, {"replications": 0}])
    def test_invalid(self, kw):
        with pytest.raises((ValueError, MediationError)):
            SimulationDesign(**kw)


class TestGenerator:
    def test_bit_identical(self, small_design):
        a = generate_dgp(small_design, 3)
        b = generate_dgp(small_design, 3)
        assert a.equals(b)
        assert not a.equals(generate_dgp(small_design, 4))

    def test_null_design_marginals(self):
        data = generate_dgp(NULL_DESIGN, 1, n=200_000)
        assert data.treatment.mean() == pytest.approx(0.5, abs=0.01)
        treated = data.treatment == 1
        assert data.mediator[treated].mean() == pytest.approx(norm.cdf(0.5), abs=0.01)
        assert data.mediator[~treated].mean() == pytest.approx(0.5, abs=0.01)

    def test_null_design_outcome_regression(self):
        data = generate_dgp(NULL_DESIGN, 2, n=200_000)
        D, M = data.treatment.astype(float), data.mediator.astype(float)
        coef = _ols(np.column_stack([D, M, D * M]), data.outcome)
        np.testing.assert_allclose(coef, [0.0, 0.5, 1.0, 0.5], atol=0.02)

    def test_outcome_r2(self):
        data = generate_dgp(SimulationDesign(), 5, n=60_000)
        coef = _ols(data.covariates, data.outcome)
        fitted = coef[0] + data.covariates @ coef[1:]
        r2 = 1 - np.var(data.outcome - fitted) / np.var(data.outcome)
        assert r2 == pytest.approx(0.22, abs=0.015)


class TestTruth:
    @pytest.mark.parametrize("scale, expected", [
        (0.3, (1.02, 0.84, 0.75, 0.27, 0.18)),
        (0.5, (1.00, 0.83, 0.75, 0.25, 0.17)),
    ])
    def test_closed_form_table_truths(self, scale, expected):
        got = closed_form_effects(SimulationDesign(coef_scale=scale)).as_dict()
        np.testing.assert_allclose(list(got.values()), expected, atol=0.005)

    def test_structural_matches_closed_form(self):
        design = SimulationDesign(p=30)
        mc = true_effects_oracle(0.3, 300_000, seed=3, design=design).as_dict()
        exact = closed_form_effects(design).as_dict()
        for name in exact:
            assert mc[name] == pytest.approx(exact[name], abs=0.01)

    def test_decomposition_in_sample(self):
        t = true_effects_oracle(0.3, 20_000, seed=1, design=SimulationDesign(p=10))
        assert t.theta1 + t.delta0 == pytest.approx(t.delta, abs=1e-12)
        assert t.theta0 + t.delta1 == pytest.approx(t.delta, abs=1e-12)

    def test_null_design_truth(self):
        cf = closed_form_counterfactuals(NULL_DESIGN)
        assert cf["Y(1,1)"] - cf["Y(0,1)"] == pytest.approx(1.0)
        assert cf["Y(1,0)"] - cf["Y(0,0)"] == pytest.approx(0.5)
        t = closed_form_effects(NULL_DESIGN)
        assert t.theta0 == pytest.approx(0.5 + 0.5 * 0.5)

    def test_invalid_n_mc(self):
        with pytest.raises(ValueError):
            true_effects_oracle(0.3, 0)


class TestOracleNuisances:
    def test_propensity_is_probit(self, small_design, small_data):
        nu = oracle_nuisances(small_design, small_data)
        index = small_data.covariates @ small_design.beta
        np.testing.assert_allclose(nu.p1x, norm.cdf(index), rtol=1e-12)
        np.testing.assert_allclose(nu.f1[:, 1], norm.cdf(0.5 + index), rtol=1e-12)

    def test_nu_matches_omega(self, small_design, small_data):
        nu = oracle_nuisances(small_design, small_data)
        np.testing.assert_allclose(nu.nu, nu.omega, atol=1e-12)


class TestSummarize:
    def test_single_replication(self):
        m = summarize([1.3], [0.2], 1.0)
        assert m.sd == 0.0
        assert m.rmse == pytest.approx(m.abias)

    def test_rmse_decomposition(self, rng):
        est = rng.normal(1.1, 0.3, 200)
        m = summarize(est, np.full(200, 0.3), 1.0)
        assert m.rmse ** 2 == pytest.approx(m.mean_bias ** 2 + m.sd ** 2, abs=1e-10)

    def test_se_reference_is_sd(self, rng):
        est = rng.normal(0, 2.0, 50)
        m = summarize(est, np.full(50, 1.0), 0.0)
        assert m.se_abias == pytest.approx(abs(1.0 - np.std(est)))
        assert m.se_sd == 0.0


class TestMonteCarlo:
    def test_replication_record(self):
        design = SimulationDesign(n=400, p=20, replications=1)
        rec = run_replication(design, 0)
        assert set(rec) == {"replication", "theorem1", "theorem2"}
        assert set(rec["theorem1"]["estimate"]) == {"delta", "theta1", "theta0", "delta1", "delta0"}

    def test_small_run(self):
        design = SimulationDesign(n=400, p=20, replications=3)
        table = run_monte_carlo(design)
        assert isinstance(table, MetricsTable)
        assert table.n_success == 3 and table.valid
        assert table.truth["delta"] == pytest.approx(closed_form_effects(design).delta)
        text = table.to_text()
        assert "trimmed" in text and "Theorem" not in text.split("\n")[0]
        d = table.to_dict()
        assert d["replications"]["succeeded"] == 3
        again = run_monte_carlo(design)
        assert again.to_dict() == d
