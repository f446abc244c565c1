"""Per-group confusion rates and group-fairness metrics."""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.dataset import ProtectedSpec
from src.errors import DataError, UndefinedRateError
from src.model import balanced_accuracy


FAIR_BAND = 0.1
BAND_TOLERANCE = 1e-12

EQUAL_OPPORTUNITY = "equal_opportunity_difference"
AVERAGE_ODDS = "average_odds_difference"
EQUALIZED_ODDS = "equalized_odds"
METRICS = (EQUAL_OPPORTUNITY, AVERAGE_ODDS, EQUALIZED_ODDS)


class Band(Enum):
    """Fair-band label of one metric value.

    The unfair labels name the group the value favors: a positive
    difference favors group_a.
    """
    FAIR = "fair"
    TOWARD_GROUP_A = "unfair toward group_a"
    TOWARD_GROUP_B = "unfair toward group_b"


@dataclass(frozen=True)
class GroupRates:
    """Confusion counts and rates of one subgroup."""
    group: str
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def size(self) -> int:
        """Number of rows in the group."""
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self) -> float:
        """True positive rate TP / (TP + FN)."""
        return self.tp / (self.tp + self.fn)

    @property
    def fpr(self) -> float:
        """False positive rate FP / (FP + TN)."""
        return self.fp / (self.fp + self.tn)

    @property
    def tnr(self) -> float:
        """True negative rate TN / (FP + TN)."""
        return self.tn / (self.fp + self.tn)

    @property
    def fnr(self) -> float:
        """False negative rate FN / (TP + FN)."""
        return self.fn / (self.tp + self.fn)

    def to_dict(self) -> dict:
        """Counts and rates as a plain mapping."""
        return {"group": self.group, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "tpr": self.tpr, "fpr": self.fpr, "tnr": self.tnr, "fnr": self.fnr}


@dataclass(frozen=True)
class FairnessScores:
    """The three fairness metrics of one ordered subgroup pair."""
    equal_opportunity_difference: float
    average_odds_difference: float
    equalized_odds: float
    pair: ProtectedSpec

    @property
    def fpr_gap(self) -> float:
        """FPR(group_a) - FPR(group_b), recovered from the two difference metrics."""
        return 2 * self.average_odds_difference - self.equal_opportunity_difference

    def value(self, metric: str) -> float:
        """Return a metric by name."""
        return getattr(self, metric)

    def to_dict(self) -> dict:
        """Metric values as a plain mapping."""
        return {m: self.value(m) for m in METRICS}


@dataclass(frozen=True)
class Evaluation:
    """Utility and fairness of one set of predictions."""
    balanced_accuracy: float
    scores: FairnessScores
    rates: Tuple[GroupRates, GroupRates]


def _counts(y: np.ndarray, p: np.ndarray) -> Tuple[int, int, int, int]:
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fn = int(np.sum((y == 1) & (p == 0)))
    return tp, fp, tn, fn


def group_rates(labels: Sequence[int], preds: Sequence[int], groups: Sequence,
                spec: ProtectedSpec) -> Tuple[GroupRates, GroupRates]:
    """Confusion counts of group_a and group_b.

    Args:
        labels: 0/1 labels
        preds: 0/1 predictions
        groups: Protected value of every row
        spec: Ordered subgroup pair

    Returns:
        (rates of group_a, rates of group_b)

    Raises:
        DataError: On length mismatch
        UndefinedRateError: If a group lacks positive or negative labels
    """
    y = np.asarray(labels)
    p = np.asarray(preds)
    g = np.asarray(groups, dtype=object)
    if not (y.shape == p.shape == g.shape):
        raise DataError("Labels, predictions and groups must have equal lengths")

    result = []
    for group in (spec.group_a, spec.group_b):
        mask = g == group
        rates = GroupRates(str(group), *_counts(y[mask], p[mask]))
        if rates.tp + rates.fn == 0:
            raise UndefinedRateError(f"TPR undefined: group '{group}' has no positive labels")
        if rates.fp + rates.tn == 0:
            raise UndefinedRateError(f"FPR undefined: group '{group}' has no negative labels")
        result.append(rates)
    return result[0], result[1]


def fairness_metrics(a: GroupRates, b: GroupRates,
                     pair: Optional[ProtectedSpec] = None) -> FairnessScores:
    """Compute the three fairness metrics for (a, b).

    equal opportunity difference = TPR_a - TPR_b
    average odds difference = ((FPR_a - FPR_b) + (TPR_a - TPR_b)) / 2
    equalized odds = max(|FPR_a - FPR_b|, |TPR_a - TPR_b|)

    Args:
        a: Rates of group_a
        b: Rates of group_b
        pair: Pair the scores belong to (defaults to the two group names)

    Returns:
        FairnessScores
    """
    if pair is None:
        pair = ProtectedSpec("", a.group, b.group)
    d_tpr = a.tpr - b.tpr
    d_fpr = a.fpr - b.fpr
    return FairnessScores(
        equal_opportunity_difference=d_tpr,
        average_odds_difference=(d_fpr + d_tpr) / 2,
        equalized_odds=max(abs(d_fpr), abs(d_tpr)),
        pair=pair,
    )


def _band(value: float) -> Band:
    if abs(value) <= FAIR_BAND + BAND_TOLERANCE:
        return Band.FAIR
    return Band.TOWARD_GROUP_A if value > 0 else Band.TOWARD_GROUP_B


def fairness_band(score: FairnessScores) -> Dict[str, Band]:
    """Label every metric fair or unfair with a direction.

    Difference metrics are fair inside [-0.1, 0.1]; equalized odds is fair
    at or below 0.1, and when unfair takes the direction of whichever rate
    gap is larger.

    Raises:
        DataError: If a score is not finite
    """
    values = [score.value(m) for m in METRICS]
    if not np.all(np.isfinite(values)):
        raise DataError("Fairness scores must be finite")
    bands = {
        EQUAL_OPPORTUNITY: _band(score.equal_opportunity_difference),
        AVERAGE_ODDS: _band(score.average_odds_difference),
    }
    if score.equalized_odds <= FAIR_BAND + BAND_TOLERANCE:
        bands[EQUALIZED_ODDS] = Band.FAIR
    else:
        d_tpr = score.equal_opportunity_difference
        d_fpr = score.fpr_gap
        dominant = d_tpr if abs(d_tpr) >= abs(d_fpr) else d_fpr
        bands[EQUALIZED_ODDS] = Band.TOWARD_GROUP_A if dominant > 0 else Band.TOWARD_GROUP_B
    return bands


def evaluate_predictions(labels: Sequence[int], preds: Sequence[int], groups: Sequence,
                         spec: ProtectedSpec) -> Evaluation:
    """Balanced accuracy plus fairness of one prediction vector.

    Raises:
        UndefinedRateError: If any rate is undefined
    """
    a, b = group_rates(labels, preds, groups, spec)
    return Evaluation(balanced_accuracy(labels, preds), fairness_metrics(a, b, spec), (a, b))
