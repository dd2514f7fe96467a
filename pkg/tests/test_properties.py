from __future__ import annotations

import numpy as np
import pytest

from mediationdml.properties import (
    bayes_suite,
    decomposition_suite,
    format_report,
    moment_suite,
    orthogonality_check,
    oracle_sample,
    orthogonality_suite,
    perturbation,
    robustness_suite,
)
from mediationdml.scores import Target


@pytest.fixture(scope="module")
def sample():
    return oracle_sample(n=100_000)


class TestFiniteDifference:
    def test_zero_direction(self, sample):
        assert orthogonality_check(Target.PSI, "mu", "zero", sample) == 0.0

    def test_plugin_derivative_half(self, sample):
        # E[mu(1, M, X) | D=0, X] moves one for one with a 0.5 shift of mu
        assert orthogonality_check("plugin", "mu", "shift", sample, d=1) == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("component", ["mu", "f1", "p1x"])
    def test_psi_orthogonal(self, sample, component):
        for kind in ("shift", "tilt"):
            assert abs(orthogonality_check(Target.PSI, component, kind, sample)) <= 0.02

    def test_unknown_direction(self, sample):
        with pytest.raises(ValueError):
            perturbation(sample, "mu", "wiggle")


class TestSuites:
    def test_moment(self, sample):
        assert moment_suite(sample).passed

    def test_orthogonality(self, sample):
        suite = orthogonality_suite(sample)
        assert suite.passed
        assert any("plug-in" in c.label for c in suite.checks)

    def test_orthogonality_injected_fails(self, sample):
        suite = orthogonality_suite(sample, inject_nonorthogonal=True)
        assert not suite.passed

    def test_robustness(self, sample):
        suite = robustness_suite(sample)
        assert suite.passed
        doubles = [c for c in suite.checks if c.relation == ">="]
        assert len(doubles) >= 4

    def test_bayes(self, sample):
        suite = bayes_suite(sample)
        assert suite.passed
        assert suite.worst().statistic <= 1e-10

    def test_decomposition(self):
        suite = decomposition_suite()
        assert suite.passed
        assert len(suite.checks) == 4

    def test_report(self, sample):
        text = format_report([moment_suite(sample)], verbose=True)
        assert text.startswith("[PASS]")
        assert np.char.count(text, "ok  ") > 0
