"""Tests for group rates, fairness metrics and fair bands."""

import numpy as np
import pytest

from src.dataset import ProtectedSpec
from src.errors import DataError, UndefinedRateError
from src.fairness import (
    AVERAGE_ODDS,
    EQUAL_OPPORTUNITY,
    EQUALIZED_ODDS,
    Band,
    FairnessScores,
    GroupRates,
    evaluate_predictions,
    fairness_band,
    fairness_metrics,
    group_rates,
)


PAIR = ProtectedSpec("g", "a", "b")


def rates_from(tpr, fpr, group, n=1000):
    """GroupRates with n positives and n negatives at the given rates."""
    tp = int(round(tpr * n))
    fp = int(round(fpr * n))
    return GroupRates(group, tp=tp, fp=fp, tn=n - fp, fn=n - tp)


def scores(eod, aod, eo):
    return FairnessScores(eod, aod, eo, PAIR)


class TestGroupRates:
    """Test suite for per-group confusion counts."""

    def test_counts(self):
        """Counts are split by group."""
        labels = [1, 1, 0, 0, 1, 0]
        preds = [1, 0, 1, 0, 1, 0]
        groups = ["a", "a", "a", "a", "b", "b"]
        a, b = group_rates(labels, preds, groups, PAIR)

        assert (a.tp, a.fp, a.tn, a.fn) == (1, 1, 1, 1)
        assert (b.tp, b.fp, b.tn, b.fn) == (1, 0, 1, 0)
        assert a.tpr == 0.5
        assert b.fpr == 0.0
        assert a.size == 4

    def test_undefined_tpr(self):
        """A group without positives has an undefined TPR."""
        with pytest.raises(UndefinedRateError, match="TPR undefined: group 'b'"):
            group_rates([1, 0, 0], [1, 0, 0], ["a", "a", "b"], PAIR)

    def test_length_mismatch(self):
        """Inputs must have equal lengths."""
        with pytest.raises(DataError, match="equal lengths"):
            group_rates([1, 0], [1], ["a", "b"], PAIR)


class TestMetrics:
    """Test suite for the three fairness metrics."""

    def test_definitions(self):
        """Difference metrics follow a - b; equalized odds the larger absolute gap."""
        a = rates_from(0.8, 0.3, "a")
        b = rates_from(0.6, 0.4, "b")
        result = fairness_metrics(a, b, PAIR)

        assert result.equal_opportunity_difference == pytest.approx(0.2)
        assert result.average_odds_difference == pytest.approx((-0.1 + 0.2) / 2)
        assert result.equalized_odds == pytest.approx(0.2)
        assert result.fpr_gap == pytest.approx(-0.1)

    def test_zero_at_equal_rates(self):
        """Identical groups score zero everywhere."""
        a = rates_from(0.7, 0.2, "a")
        b = rates_from(0.7, 0.2, "b")
        assert fairness_metrics(a, b).to_dict() == {
            EQUAL_OPPORTUNITY: 0.0, AVERAGE_ODDS: 0.0, EQUALIZED_ODDS: 0.0}

    def test_identities_on_random_rates(self):
        """EO bounds both difference metrics; swapping groups negates them."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            counts = rng.integers(1, 50, size=8)
            a = GroupRates("a", *counts[:4])
            b = GroupRates("b", *counts[4:])
            forward = fairness_metrics(a, b)
            backward = fairness_metrics(b, a)

            assert forward.equalized_odds >= abs(forward.average_odds_difference) - 1e-15
            assert forward.equalized_odds >= abs(forward.equal_opportunity_difference) - 1e-15
            assert backward.equal_opportunity_difference == pytest.approx(-forward.equal_opportunity_difference)
            assert backward.average_odds_difference == pytest.approx(-forward.average_odds_difference)
            assert backward.equalized_odds == pytest.approx(forward.equalized_odds)

    def test_evaluate_predictions(self):
        """Balanced accuracy and scores from one call."""
        labels = [1, 1, 0, 0, 1, 1, 0, 0]
        preds = [1, 1, 0, 0, 1, 0, 1, 0]
        groups = ["a"] * 4 + ["b"] * 4
        evaluation = evaluate_predictions(labels, preds, groups, PAIR)

        assert evaluation.balanced_accuracy == pytest.approx(0.75)
        assert evaluation.scores.equal_opportunity_difference == pytest.approx(0.5)
        assert evaluation.scores.equalized_odds == pytest.approx(0.5)
        assert evaluation.rates[0].group == "a"


class TestBands:
    """Test suite for fair-band labels."""

    def test_inclusive_band_edges(self):
        """Values exactly at +-0.1 are fair."""
        bands = fairness_band(scores(0.1, -0.1, 0.1))
        assert set(bands.values()) == {Band.FAIR}

    def test_directions(self):
        """Positive differences favor group_a, negative group_b."""
        bands = fairness_band(scores(0.25, -0.15, 0.25))
        assert bands[EQUAL_OPPORTUNITY] is Band.TOWARD_GROUP_A
        assert bands[AVERAGE_ODDS] is Band.TOWARD_GROUP_B

    def test_equalized_odds_takes_larger_gap_direction(self):
        """EO direction follows whichever of the TPR and FPR gaps is larger."""
        # TPR gap 0.05, FPR gap -0.35
        bands = fairness_band(scores(0.05, -0.15, 0.35))
        assert bands[EQUALIZED_ODDS] is Band.TOWARD_GROUP_B

    def test_non_finite_rejected(self):
        """NaN scores cannot be banded."""
        with pytest.raises(DataError, match="finite"):
            fairness_band(scores(float("nan"), 0.0, 0.0))
