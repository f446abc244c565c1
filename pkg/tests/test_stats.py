"""Tests for summaries, percent change and the paired t-test."""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats as scipy_stats

from src.errors import DataError, ZeroVarianceError
from src.stats import (
    RunSeries,
    TTestResult,
    paired_t_test,
    percent_change,
    regularized_beta,
    summarize,
    summarize_runs,
    t_two_sided_p,
)


def t_density(x, df):
    log_norm = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(log_norm) * (1 + x * x / df) ** (-(df + 1) / 2)


class TestRegularizedBeta:
    """Test suite for the incomplete beta function."""

    def test_endpoints(self):
        """I_0 = 0 and I_1 = 1."""
        assert regularized_beta(0.0, 2.0, 3.0) == 0.0
        assert regularized_beta(1.0, 2.0, 3.0) == 1.0

    def test_matches_scipy(self):
        """Agrees with scipy's betainc over a parameter grid."""
        for a in (0.5, 1.0, 2.5, 7.0, 15.0):
            for b in (0.5, 1.0, 3.0):
                for x in np.linspace(0.01, 0.99, 25):
                    assert regularized_beta(float(x), a, b) == pytest.approx(
                        special.betainc(a, b, x), rel=1e-9, abs=1e-13)

    def test_out_of_range(self):
        """x outside [0, 1] is rejected."""
        with pytest.raises(DataError):
            regularized_beta(1.5, 1.0, 1.0)


class TestTwoSidedP:
    """Test suite for Student-t p-values."""

    def test_critical_value(self):
        """t = 2.2622 with 9 degrees of freedom sits at p = 0.05."""
        assert t_two_sided_p(2.2622, 9) == pytest.approx(0.05, abs=1e-4)

    def test_zero_statistic(self):
        """t = 0 gives p = 1."""
        assert t_two_sided_p(0.0, 5) == 1.0

    def test_symmetric(self):
        """The sign of t does not matter."""
        assert t_two_sided_p(-1.7, 4) == t_two_sided_p(1.7, 4)

    def test_matches_numerical_integration(self):
        """Equals twice the integrated upper tail of the t density."""
        for df in range(1, 31):
            for t in (0.3, 1.0, 2.0, 3.5):
                tail, _ = integrate.quad(t_density, t, np.inf, args=(df,), epsabs=1e-13, epsrel=1e-12)
                assert t_two_sided_p(t, df) == pytest.approx(2 * tail, rel=1e-7, abs=1e-12)

    def test_matches_scipy_distribution(self):
        """Agrees with scipy's survival function, including far tails."""
        for df in (1, 2, 5, 9, 29, 100):
            for t in (0.05, 0.8, 2.5, 6.0, 12.0):
                assert t_two_sided_p(t, df) == pytest.approx(
                    2 * scipy_stats.t.sf(t, df), rel=1e-8, abs=1e-15)

    def test_invalid_degrees_of_freedom(self):
        """At least one degree of freedom is required."""
        with pytest.raises(DataError):
            t_two_sided_p(1.0, 0)


class TestPairedTTest:
    """Test suite for paired_t_test."""

    def test_matches_scipy(self):
        """Same statistic and p-value as scipy's paired test."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.normal(0.7, 0.05, size=10)
            b = a + rng.normal(0.01, 0.02, size=10)
            ours = paired_t_test(a, b)
            reference = scipy_stats.ttest_rel(a, b)

            assert ours.degrees_of_freedom == 9
            assert ours.t_statistic == pytest.approx(reference.statistic, rel=1e-10)
            assert ours.p_value == pytest.approx(reference.pvalue, rel=1e-8)

    def test_known_values(self):
        """Differences 1..5: t = 3 / (sd / sqrt(5))."""
        result = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert result.t_statistic == pytest.approx(3 / (math.sqrt(2.5) / math.sqrt(5)))
        assert result.degrees_of_freedom == 4
        assert result.significant

    def test_identical_samples(self):
        """Zero-variance differences have no p-value."""
        with pytest.raises(ZeroVarianceError):
            paired_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])

    def test_constant_shift(self):
        """A constant nonzero difference is also zero variance."""
        with pytest.raises(ZeroVarianceError):
            paired_t_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5])

    def test_too_few_pairs(self):
        """One pair is not enough."""
        with pytest.raises(DataError, match="at least 2"):
            paired_t_test([1.0], [2.0])

    def test_length_mismatch(self):
        """Samples must pair up."""
        with pytest.raises(DataError, match="differ in length"):
            paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_significance_flag(self):
        """Significant means p < 0.05."""
        assert TTestResult(2.5, 9, 0.049).significant
        assert not TTestResult(2.0, 9, 0.05).significant
        assert TTestResult(2.5, 9, 0.049).to_dict()["significant"] is True


class TestSummaries:
    """Test suite for summaries and percent change."""

    def test_summarize(self):
        """Inclusive quartiles and sample standard deviation."""
        summary = summarize([1, 2, 3, 4, 5])
        assert summary.mean == 3.0
        assert summary.sd == pytest.approx(math.sqrt(2.5))
        assert (summary.min, summary.q1, summary.median, summary.q3, summary.max) == (1, 2, 3, 4, 5)

    def test_single_value(self):
        """One value: zero spread."""
        summary = summarize([0.42])
        assert summary.sd == 0.0
        assert summary.q1 == summary.q3 == 0.42

    def test_empty(self):
        """Nothing to summarize."""
        with pytest.raises(DataError):
            summarize([])

    def test_summarize_runs(self):
        """Both arms are summarized."""
        series = RunSeries("balanced_accuracy", [1, 2], [0.7, 0.8], [0.6, 0.65])
        result = summarize_runs(series)
        assert result["real"].mean == pytest.approx(0.75)
        assert result["synthetic"].max == 0.65

    def test_unequal_series(self):
        """Series lengths must agree."""
        with pytest.raises(DataError, match="unequal lengths"):
            RunSeries("x", [1, 2], [0.1], [0.2, 0.3])

    def test_percent_change(self):
        """Relative change in percent."""
        assert percent_change(65.04, 65.54) == pytest.approx(0.77, abs=0.005)
        assert percent_change(9.89, 6.53) == pytest.approx(-33.97, abs=0.005)

    def test_percent_change_from_zero(self):
        """A zero reference has no relative change."""
        with pytest.raises(DataError):
            percent_change(0.0, 1.0)
