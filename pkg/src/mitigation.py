"""Fairness mitigation: EO thresholding, reweighing, grid reduction and HPS post-processing.

All selection happens on validation scores (out-of-bag scores of the
training rows); callers report the chosen model on held-out data.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.dataset import ProtectedSpec, Table
from src.errors import AuditError, DataError, TrainingError, UndefinedRateError
from src.fairness import FairnessScores, evaluate_predictions
from src.model import (THRESHOLD_GRID, TrainedForest, balanced_accuracy_curve, predict_labels,
                       threshold_sweep)


logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.58
DEFAULT_REDUCTION_GRID = tuple(float(m) for m in np.round(np.linspace(-1.0, 1.0, 11), 10))
HPS_TOLERANCE = 1e-9

Trainer = Callable[[Table, Optional[np.ndarray]], TrainedForest]


class Technique(Enum):
    """Mitigation techniques."""
    EO_THRESHOLD = "eo_threshold"
    REWEIGH = "reweigh"
    REDUCTION = "reduction"
    HPS = "hps"


@dataclass(frozen=True)
class EoThresholdResult:
    """Outcome of the EO threshold search."""
    threshold: float
    balanced_accuracy: float
    fairness: FairnessScores
    floor_unmet: bool = False


@dataclass(frozen=True)
class HpsPolicy:
    """Group-dependent randomized relabeling of base predictions.

    Attributes:
        p_keep_positive: P(output 1 | base 1) per group
        p_flip_negative: P(output 1 | base 0) per group
        fit_gaps: (TPR gap, FPR gap) of the derived predictor on fitting data
        loss: Expected misclassification rate on fitting data
        seed: Default randomization seed for hps_apply
    """
    p_keep_positive: Dict[str, float]
    p_flip_negative: Dict[str, float]
    fit_gaps: Tuple[float, float]
    loss: float
    seed: int = 0

    def to_dict(self) -> dict:
        """Plain mapping for reports."""
        return {"p_keep_positive": dict(self.p_keep_positive),
                "p_flip_negative": dict(self.p_flip_negative),
                "fit_gaps": list(self.fit_gaps), "loss": self.loss, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "HpsPolicy":
        """Rebuild from to_dict output."""
        return cls(dict(data["p_keep_positive"]), dict(data["p_flip_negative"]),
                   tuple(data["fit_gaps"]), data["loss"], data.get("seed", 0))


@dataclass(frozen=True, eq=False)
class MitigationResult:
    """Outcome of one mitigation technique on validation data.

    Only the fields relevant to the technique are populated.
    """
    technique: Technique
    scores_source: str
    fairness: FairnessScores
    balanced_accuracy: float
    threshold: Optional[float] = None
    instance_weights: Optional[np.ndarray] = None
    derived_predictor: Optional[HpsPolicy] = None
    multiplier: Optional[float] = None
    floor_unmet: bool = False
    model: Optional[TrainedForest] = field(default=None, repr=False)


def _group_curves(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                  grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """TP and FP counts at every grid threshold for the masked rows."""
    pos = np.sort(scores[mask & (labels == 1)])
    neg = np.sort(scores[mask & (labels == 0)])
    tp = len(pos) - np.searchsorted(pos, grid, side="left")
    fp = len(neg) - np.searchsorted(neg, grid, side="left")
    return tp, fp, len(pos), len(neg)


def eo_threshold_search(scores: Sequence[float], labels: Sequence[int], groups: Sequence,
                        spec: ProtectedSpec, floor: float = DEFAULT_FLOOR,
                        grid: Sequence[float] = THRESHOLD_GRID) -> EoThresholdResult:
    """Find the grid threshold with the lowest equalized odds.

    Among thresholds whose balanced accuracy is at least the floor, the
    lowest equalized odds wins; ties go to higher balanced accuracy, then to
    the smaller threshold. When no threshold reaches the floor the
    best-balanced-accuracy threshold is returned with floor_unmet set.

    Args:
        scores: Positive-class scores
        labels: 0/1 labels
        groups: Protected value of every row
        spec: Ordered subgroup pair
        floor: Minimum balanced accuracy
        grid: Candidate thresholds

    Returns:
        EoThresholdResult

    Raises:
        UndefinedRateError: If a group lacks a label class
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    g = np.asarray(groups, dtype=object)
    grid = np.asarray(grid, dtype=float)
    if not (s.shape == y.shape == g.shape):
        raise DataError("Scores, labels and groups must have equal lengths")

    rates = []
    for group in (spec.group_a, spec.group_b):
        tp, fp, n_pos, n_neg = _group_curves(s, y, g == group, grid)
        if n_pos == 0 or n_neg == 0:
            raise UndefinedRateError(f"Group '{group}' lacks a label class; rates undefined")
        rates.append((tp / n_pos, fp / n_neg))
    (tpr_a, fpr_a), (tpr_b, fpr_b) = rates
    eo = np.maximum(np.abs(fpr_a - fpr_b), np.abs(tpr_a - tpr_b))

    ba = balanced_accuracy_curve(s, y, grid)

    admissible = np.nonzero(ba >= floor)[0]
    if len(admissible) == 0:
        best = threshold_sweep(s, y, grid)
        chosen = int(np.nonzero(grid == best.threshold)[0][0])
        floor_unmet = True
        logger.warning("No threshold reaches balanced accuracy %.2f; best is %.4f at %.2f",
                       floor, best.balanced_accuracy, best.threshold)
    else:
        order = np.lexsort((grid[admissible], -ba[admissible], eo[admissible]))
        chosen = int(admissible[order[0]])
        floor_unmet = False

    threshold = float(grid[chosen])
    fairness = evaluate_predictions(y, predict_labels(s, threshold), g, spec).scores
    return EoThresholdResult(threshold, float(ba[chosen]), fairness, floor_unmet)


def reweigh(labels: Sequence[int], groups: Sequence) -> np.ndarray:
    """Instance weights that make group and label independent.

    A row in group g with label y gets n_g * n_y / (n * n_gy).

    Args:
        labels: 0/1 labels
        groups: Group value of every row

    Returns:
        Weight per row

    Raises:
        DataError: Length mismatch, a missing label class, or an empty
            (group, label) cell
    """
    y = np.asarray(labels)
    g = np.asarray(groups, dtype=object)
    if y.shape != g.shape:
        raise DataError("Labels and groups must have equal lengths")
    n = len(y)
    n_y = {label: int(np.sum(y == label)) for label in (0, 1)}
    if min(n_y.values()) == 0:
        raise DataError("Reweighing needs both label classes")

    weights = np.empty(n, dtype=float)
    for group in sorted(set(g.tolist()), key=str):
        in_group = g == group
        n_g = int(in_group.sum())
        for label in (0, 1):
            cell = in_group & (y == label)
            n_gy = int(cell.sum())
            if n_gy == 0:
                raise DataError(f"Empty cell (group '{group}', label {label}) gives an infinite weight")
            weights[cell] = (n_g * n_y[label]) / (n * n_gy)
    return weights


def reduction_costs(labels: Sequence[int], groups: Sequence, spec: ProtectedSpec,
                    multiplier: float) -> Tuple[np.ndarray, np.ndarray]:
    """Cost-sensitive relabeling for one grid multiplier.

    Each row starts with cost 1 for being misclassified. Positive rows of
    group_a add +multiplier and positive rows of group_b add -multiplier,
    so a positive multiplier pushes group_a's TPR up relative to group_b's.
    A negative cost means the cheaper decision is the opposite label: the
    label is flipped and the absolute cost becomes the weight.

    Args:
        labels: 0/1 labels
        groups: Protected value of every row
        spec: Ordered subgroup pair
        multiplier: Fairness multiplier

    Returns:
        (training labels, instance weights)
    """
    y = np.asarray(labels)
    g = np.asarray(groups, dtype=object)
    signs = np.where((g == spec.group_a) & (y == 1), 1.0,
                     np.where((g == spec.group_b) & (y == 1), -1.0, 0.0))
    costs = 1.0 + multiplier * signs
    flipped = np.where(costs < 0, 1 - y, y)
    return flipped, np.abs(costs)


def _reduction_point(trainer: Trainer, train: Table, spec: ProtectedSpec, multiplier: float,
                     floor: float) -> Optional[Tuple[float, TrainedForest, EoThresholdResult, np.ndarray]]:
    y = train.labels()
    groups = train.groups()
    targets, weights = reduction_costs(y, groups, spec, multiplier)
    try:
        relabeled = train if np.array_equal(targets, y) else train.with_labels(targets)
        model = trainer(relabeled, weights)
        result = eo_threshold_search(model.oob_scores, y, groups, spec, floor)
    except (AuditError, ValueError) as exc:
        logger.warning("Reduction grid point %.3f failed: %s", multiplier, exc)
        return None
    return multiplier, model, result, weights


def grid_reduction(trainer: Trainer, train: Table, spec: ProtectedSpec,
                   grid: Sequence[float] = DEFAULT_REDUCTION_GRID,
                   floor: float = DEFAULT_FLOOR, n_jobs: int = 1,
                   scores_source: str = "model") -> MitigationResult:
    """Grid-search reduction to cost-sensitive classification.

    Every multiplier retrains the classifier on relabeled, reweighted data
    (see reduction_costs). Each model gets its EO threshold on validation
    scores; the model with the lowest equalized odds among those meeting the
    balanced accuracy floor is selected, or the lowest equalized odds
    overall with floor_unmet when none does.

    Args:
        trainer: Builds a model from (table, weights)
        train: Training table, restricted to the pair
        spec: Ordered subgroup pair
        grid: Multipliers
        floor: Minimum balanced accuracy
        n_jobs: Parallel grid points
        scores_source: Name of the model family for reporting

    Returns:
        MitigationResult for the selected multiplier

    Raises:
        TrainingError: If the grid is empty or every point fails
    """
    if len(grid) == 0:
        raise TrainingError("Reduction grid is empty")
    points = Parallel(n_jobs=n_jobs)(
        delayed(_reduction_point)(trainer, train, spec, float(m), floor) for m in grid
    )
    points = [p for p in points if p is not None]
    if not points:
        raise TrainingError("Every reduction grid point failed")

    meeting = [p for p in points if not p[2].floor_unmet]
    pool = meeting or points
    multiplier, model, result, weights = min(
        pool, key=lambda p: (p[2].fairness.equalized_odds, -p[2].balanced_accuracy, abs(p[0]))
    )
    logger.info("Reduction selected multiplier %.3f (EO %.4f, balanced accuracy %.4f)",
                multiplier, result.fairness.equalized_odds, result.balanced_accuracy)
    return MitigationResult(
        technique=Technique.REDUCTION,
        scores_source=f"{scores_source}[lambda={multiplier:g}]",
        fairness=result.fairness,
        balanced_accuracy=result.balanced_accuracy,
        threshold=result.threshold,
        instance_weights=weights,
        multiplier=multiplier,
        floor_unmet=not meeting,
        model=model,
    )


def _base_rates(base: np.ndarray, y: np.ndarray, mask: np.ndarray, group) -> Tuple[float, float]:
    pos = mask & (y == 1)
    neg = mask & (y == 0)
    if not pos.any() or not neg.any():
        raise UndefinedRateError(f"Group '{group}' lacks a label class; base rates undefined")
    return float(base[pos].mean()), float(base[neg].mean())


def _derived_rates(x: np.ndarray, alpha: Tuple[float, float],
                   beta: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Derived (TPR, FPR) of both groups for policy vector x = (p_a, q_a, p_b, q_b)."""
    tpr = np.array([x[0] * alpha[0] + x[1] * (1 - alpha[0]), x[2] * alpha[1] + x[3] * (1 - alpha[1])])
    fpr = np.array([x[0] * beta[0] + x[1] * (1 - beta[0]), x[2] * beta[1] + x[3] * (1 - beta[1])])
    return tpr, fpr


def hps_vertices(alpha: Tuple[float, float], beta: Tuple[float, float]) -> List[np.ndarray]:
    """All vertices of the feasible region of the HPS linear program.

    The region is {x in [0,1]^4 : TPR_a = TPR_b, FPR_a = FPR_b} over
    x = (p_a, q_a, p_b, q_b). A vertex is a feasible point where the active
    constraints have rank 4.

    Args:
        alpha: Base TPR of (group_a, group_b)
        beta: Base FPR of (group_a, group_b)

    Returns:
        Distinct vertices
    """
    equalities = np.array([
        [alpha[0], 1 - alpha[0], -alpha[1], -(1 - alpha[1])],
        [beta[0], 1 - beta[0], -beta[1], -(1 - beta[1])],
    ])
    bounds = [(i, v) for i in range(4) for v in (0.0, 1.0)]
    vertices: List[np.ndarray] = []
    for size in range(0, 5):
        for active in itertools.combinations(bounds, size):
            if len({i for i, _ in active}) < size:
                continue
            rows = [equalities]
            rhs = [np.zeros(2)]
            for i, v in active:
                unit = np.zeros((1, 4))
                unit[0, i] = 1.0
                rows.append(unit)
                rhs.append(np.array([v]))
            A = np.vstack(rows)
            b = np.concatenate(rhs)
            if np.linalg.matrix_rank(A) < 4:
                continue
            x, *_ = np.linalg.lstsq(A, b, rcond=None)
            if np.max(np.abs(A @ x - b)) > 1e-12:
                continue
            if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
                continue
            x = np.clip(x, 0.0, 1.0)
            if not any(np.allclose(x, v, atol=1e-12) for v in vertices):
                vertices.append(x)
    return vertices


def hps_loss(x: np.ndarray, alpha: Tuple[float, float], beta: Tuple[float, float],
             n_pos: Sequence[int], n_neg: Sequence[int]) -> float:
    """Expected misclassification rate of the derived predictor.

    Sum over groups of n_pos * (1 - TPR) + n_neg * FPR, divided by the
    number of rows.

    Args:
        x: Policy vector (p_a, q_a, p_b, q_b)
        alpha: Base TPR per group
        beta: Base FPR per group
        n_pos: Positive rows in each group
        n_neg: Negative rows in each group
    """
    tpr, fpr = _derived_rates(x, alpha, beta)
    errors = sum(n_pos[i] * (1 - tpr[i]) + n_neg[i] * fpr[i] for i in range(2))
    return float(errors / (sum(n_pos) + sum(n_neg)))


def hps_fit(base_preds: Sequence[int], labels: Sequence[int], groups: Sequence,
            spec: ProtectedSpec, seed: int = 0) -> HpsPolicy:
    """Fit the equalized-odds derived predictor.

    Solves, by exact vertex enumeration, the linear program minimizing the
    expected misclassification rate subject to equal TPR and equal FPR
    across the two groups. Among equally good vertices the identity policy is kept
    when it is feasible.

    Args:
        base_preds: 0/1 base predictions
        labels: 0/1 labels
        groups: Protected value of every row
        spec: Ordered subgroup pair
        seed: Default seed for hps_apply

    Returns:
        HpsPolicy

    Raises:
        UndefinedRateError: If a group lacks a label class
    """
    base = np.asarray(base_preds)
    y = np.asarray(labels)
    g = np.asarray(groups, dtype=object)
    if not (base.shape == y.shape == g.shape):
        raise DataError("Predictions, labels and groups must have equal lengths")

    masks = [g == spec.group_a, g == spec.group_b]
    (alpha_a, beta_a), (alpha_b, beta_b) = (_base_rates(base, y, m, grp)
                                            for m, grp in zip(masks, (spec.group_a, spec.group_b)))
    alpha, beta = (alpha_a, alpha_b), (beta_a, beta_b)
    n_pos = [int(np.sum(m & (y == 1))) for m in masks]
    n_neg = [int(np.sum(m & (y == 0))) for m in masks]

    vertices = hps_vertices(alpha, beta)
    losses = [hps_loss(v, alpha, beta, n_pos, n_neg) for v in vertices]
    best = int(np.argmin(losses))
    x, loss = vertices[best], losses[best]

    identity = np.array([1.0, 0.0, 1.0, 0.0])
    tpr, fpr = _derived_rates(identity, alpha, beta)
    identity_feasible = abs(tpr[0] - tpr[1]) <= HPS_TOLERANCE and abs(fpr[0] - fpr[1]) <= HPS_TOLERANCE
    if identity_feasible:
        identity_loss = hps_loss(identity, alpha, beta, n_pos, n_neg)
        if identity_loss <= loss + HPS_TOLERANCE:
            x, loss = identity, identity_loss

    tpr, fpr = _derived_rates(x, alpha, beta)
    return HpsPolicy(
        p_keep_positive={spec.group_a: float(x[0]), spec.group_b: float(x[2])},
        p_flip_negative={spec.group_a: float(x[1]), spec.group_b: float(x[3])},
        fit_gaps=(float(tpr[0] - tpr[1]), float(fpr[0] - fpr[1])),
        loss=loss,
        seed=seed,
    )


def hps_apply(policy: HpsPolicy, base_preds: Sequence[int], groups: Sequence,
              seed: Optional[int] = None) -> np.ndarray:
    """Apply a fitted policy to base predictions.

    Row i uses the i-th uniform draw of a Philox stream keyed by seed, so
    each row's outcome depends only on (seed, i).

    Args:
        policy: Fitted policy
        base_preds: 0/1 base predictions
        groups: Protected value of every row
        seed: Randomization seed (defaults to the policy's)

    Returns:
        0/1 derived predictions

    Raises:
        DataError: If a row's group is not covered by the policy
    """
    base = np.asarray(base_preds)
    g = np.asarray(groups, dtype=object)
    if base.shape != g.shape:
        raise DataError("Predictions and groups must have equal lengths")
    unknown = set(g.tolist()) - set(policy.p_keep_positive)
    if unknown:
        raise DataError(f"Policy does not cover group(s): {sorted(map(str, unknown))}")

    keep = np.array([policy.p_keep_positive[v] for v in g.tolist()], dtype=float)
    flip = np.array([policy.p_flip_negative[v] for v in g.tolist()], dtype=float)
    probability = np.where(base == 1, keep, flip)
    stream = np.random.Generator(np.random.Philox(policy.seed if seed is None else seed))
    draws = stream.random(len(base))
    return (draws < probability).astype(np.int64)


def apply_eo_threshold(scores: Sequence[float], labels: Sequence[int], groups: Sequence,
                       spec: ProtectedSpec, floor: float = DEFAULT_FLOOR,
                       scores_source: str = "model") -> MitigationResult:
    """EO thresholding as a mitigation result."""
    result = eo_threshold_search(scores, labels, groups, spec, floor)
    return MitigationResult(Technique.EO_THRESHOLD, scores_source, result.fairness,
                            result.balanced_accuracy, threshold=result.threshold,
                            floor_unmet=result.floor_unmet)


def apply_reweigh(trainer: Trainer, train: Table, spec: ProtectedSpec,
                  floor: float = DEFAULT_FLOOR, scores_source: str = "model") -> MitigationResult:
    """Reweigh, retrain, then pick the EO threshold on validation scores."""
    y = train.labels()
    groups = train.groups()
    weights = reweigh(y, groups)
    model = trainer(train, weights)
    result = eo_threshold_search(model.oob_scores, y, groups, spec, floor)
    return MitigationResult(Technique.REWEIGH, f"{scores_source}[reweighed]", result.fairness,
                            result.balanced_accuracy, threshold=result.threshold,
                            instance_weights=weights, floor_unmet=result.floor_unmet, model=model)


def apply_hps(base_preds: Sequence[int], labels: Sequence[int], groups: Sequence,
              spec: ProtectedSpec, threshold: float, seed: int = 0,
              scores_source: str = "model") -> MitigationResult:
    """Fit HPS on base predictions and report the derived predictor on the same rows."""
    policy = hps_fit(base_preds, labels, groups, spec, seed)
    derived = hps_apply(policy, base_preds, groups)
    evaluation = evaluate_predictions(labels, derived, groups, spec)
    return MitigationResult(Technique.HPS, scores_source, evaluation.scores,
                            evaluation.balanced_accuracy, threshold=threshold,
                            derived_predictor=policy)
