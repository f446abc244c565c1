"""Random-forest training with instance weights, scoring and threshold tuning."""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from sklearn.tree import DecisionTreeClassifier

from src.dataset import FeatureMap, Table
from src.errors import DataError, TrainingError, UndefinedRateError


logger = logging.getLogger(__name__)

AUTO = "auto"
THRESHOLD_GRID = np.arange(1, 51) / 100.0
FOREST_FORMAT = "fairaudit-forest"
FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Random-forest hyperparameters.

    Attributes:
        n_trees: Number of trees
        max_depth: Maximum depth, None for unlimited
        max_features: Features tried per split; "auto" is the square root of
            the feature count, None uses every feature
        min_leaf: Minimum rows per leaf
        seed: Seed for bootstrap and feature subsampling
        bootstrap: Draw n rows with replacement per tree
        n_jobs: Parallel workers for tree fitting (result does not depend on it)
    """
    n_trees: int = 100
    max_depth: Optional[int] = None
    max_features: Union[int, str, None] = AUTO
    min_leaf: int = 1
    seed: int = 0
    bootstrap: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise TrainingError(f"n_trees must be at least 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise TrainingError(f"max_depth must be at least 1, got {self.max_depth}")
        if self.min_leaf < 1:
            raise TrainingError(f"min_leaf must be at least 1, got {self.min_leaf}")
        if self.seed < 0:
            raise TrainingError(f"seed must be non-negative, got {self.seed}")
        if isinstance(self.max_features, str) and self.max_features != AUTO:
            raise TrainingError(f"max_features must be an integer, 'auto' or None, got '{self.max_features}'")

    def resolve_max_features(self, n_features: int) -> int:
        """Return the number of features tried per split.

        Args:
            n_features: Number of feature columns

        Raises:
            TrainingError: If an explicit count exceeds the feature count
        """
        if self.max_features is None:
            return n_features
        if self.max_features == AUTO:
            return max(1, int(np.sqrt(n_features)))
        if not 1 <= self.max_features <= n_features:
            raise TrainingError(
                f"max_features={self.max_features} must be between 1 and the feature count {n_features}")
        return int(self.max_features)

    def with_seed(self, seed: int) -> "ForestConfig":
        """Return a copy with another seed."""
        values = asdict(self)
        values["seed"] = seed
        return ForestConfig(**values)


@dataclass(frozen=True, eq=False)
class TreeArrays:
    """Flat node arrays of one fitted decision tree.

    Internal nodes send a row left when feature <= threshold; leaves have
    left == right == -1. positive holds each node's positive-class fraction.
    """
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    positive: np.ndarray

    @property
    def n_leaves(self) -> int:
        """Number of leaves."""
        return int(np.sum(self.left == -1))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Return the leaf positive fraction reached by every row.

        Features are compared in float32, matching how the tree was fitted.
        """
        X = X.astype(np.float32).astype(np.float64)
        node = np.zeros(len(X), dtype=np.intp)
        while True:
            internal = np.nonzero(self.left[node] != -1)[0]
            if len(internal) == 0:
                break
            current = node[internal]
            go_left = X[internal, self.feature[current]] <= self.threshold[current]
            node[internal] = np.where(go_left, self.left[current], self.right[current])
        return self.positive[node]

    def to_dict(self) -> dict:
        """Serialize to plain lists."""
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "positive": self.positive.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeArrays":
        """Rebuild from to_dict output."""
        return cls(
            left=np.asarray(data["left"], dtype=np.intp),
            right=np.asarray(data["right"], dtype=np.intp),
            feature=np.asarray(data["feature"], dtype=np.intp),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            positive=np.asarray(data["positive"], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class TrainedForest:
    """A fitted forest.

    Attributes:
        trees: Fitted trees
        feature_map: Feature layout of the training table
        config: Configuration used for fitting
        oob_scores: Out-of-bag score of every training row, in training row
            order (in-sample score for rows never out of bag)
    """
    trees: Tuple[TreeArrays, ...]
    feature_map: FeatureMap
    config: ForestConfig
    oob_scores: Optional[np.ndarray] = None

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        """Return the per-tree scores, one row per tree."""
        return np.vstack([tree.predict(X) for tree in self.trees])


@dataclass(frozen=True)
class ThresholdResult:
    """Decision threshold and the balanced accuracy it achieves."""
    threshold: float
    balanced_accuracy: float


def tree_seed(seed: int, tree_index: int) -> int:
    """Derive the seed of one tree from the forest seed.

    Args:
        seed: Forest seed
        tree_index: Position of the tree in the forest

    Returns:
        32-bit seed, identical for serial and parallel training
    """
    return int(np.random.SeedSequence([seed, tree_index]).generate_state(1)[0])


def _check_weights(weights: Optional[Sequence[float]], n: int) -> Optional[np.ndarray]:
    """Validate instance weights; constant weights collapse to None."""
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DataError(f"Expected {n} weights, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DataError("Weights must be finite and non-negative")
    if w.sum() <= 0:
        raise TrainingError("All instance weights are zero")
    if np.ptp(w) == 0:
        return None
    return w


def _canonical_order(X: np.ndarray, y: np.ndarray, w: Optional[np.ndarray]) -> np.ndarray:
    """Row order that depends only on row contents, not on input order."""
    keys = [y] + ([w] if w is not None else []) + [X[:, j] for j in range(X.shape[1])]
    return np.lexsort(keys[::-1])


def _fit_tree(config: ForestConfig, index: int, X: np.ndarray, y: np.ndarray,
              w: Optional[np.ndarray], max_features: int) -> Tuple[TreeArrays, np.ndarray]:
    """Fit one tree and return it with its bootstrap counts."""
    seed = tree_seed(config.seed, index)
    n = len(y)
    rng = np.random.Generator(np.random.Philox(seed))
    if config.bootstrap:
        if w is None:
            sample = rng.integers(0, n, size=n)
        else:
            sample = rng.choice(n, size=n, replace=True, p=w / w.sum())
        counts = np.bincount(sample, minlength=n)
        X_fit, y_fit, w_fit = X[sample], y[sample], None
    else:
        counts = np.ones(n, dtype=np.int64)
        X_fit, y_fit, w_fit = X, y, w

    learner = DecisionTreeClassifier(
        criterion="gini",
        max_depth=config.max_depth,
        max_features=max_features,
        min_samples_leaf=config.min_leaf,
        random_state=seed,
    )
    learner.fit(X_fit, y_fit, sample_weight=w_fit)

    structure = learner.tree_
    value = structure.value[:, 0, :]
    classes = list(learner.classes_)
    if 1 in classes:
        positive = value[:, classes.index(1)] / value.sum(axis=1)
    else:
        positive = np.zeros(structure.node_count)
    tree = TreeArrays(
        left=structure.children_left.astype(np.intp),
        right=structure.children_right.astype(np.intp),
        feature=np.where(structure.children_left == -1, 0, structure.feature).astype(np.intp),
        threshold=structure.threshold.astype(np.float64),
        positive=positive.astype(np.float64),
    )
    return tree, counts


def train_forest(config: ForestConfig, train: Table,
                 weights: Optional[Sequence[float]] = None) -> TrainedForest:
    """Train a random forest on a table.

    Rows are put in a canonical content order before any sampling, so
    permuting the input rows does not change the model. With bootstrap,
    instance weights set the per-row sampling probability; without it they
    enter the Gini impurity directly.

    Args:
        config: Forest hyperparameters
        train: Training table
        weights: Optional non-negative weight per row

    Returns:
        TrainedForest

    Raises:
        TrainingError: Empty or single-class data, zero total weight, or an
            invalid max_features
    """
    if len(train) == 0:
        raise TrainingError("Cannot train on an empty table")
    y = train.labels()
    if len(np.unique(y)) < 2:
        raise TrainingError("Training data contains a single label class")
    w = _check_weights(weights, len(train))

    feature_map = FeatureMap.from_table(train)
    X = feature_map.transform(train)
    if X.shape[1] == 0:
        raise TrainingError("Training table has no feature columns")
    max_features = config.resolve_max_features(X.shape[1])

    order = _canonical_order(X, y, w)
    Xc, yc = X[order], y[order]
    wc = w[order] if w is not None else None

    fitted = Parallel(n_jobs=config.n_jobs)(
        delayed(_fit_tree)(config, i, Xc, yc, wc, max_features) for i in range(config.n_trees)
    )
    trees = tuple(tree for tree, _ in fitted)

    per_tree = np.vstack([tree.predict(Xc) for tree in trees])
    out_of_bag = np.vstack([counts == 0 for _, counts in fitted])
    oob_count = out_of_bag.sum(axis=0)
    full = per_tree.mean(axis=0)
    oob = np.where(oob_count > 0, (per_tree * out_of_bag).sum(axis=0) / np.maximum(oob_count, 1), full)
    if not config.bootstrap:
        oob = full
    oob_scores = np.empty_like(oob)
    oob_scores[order] = oob

    logger.debug("Trained %d trees on %d rows x %d features", len(trees), X.shape[0], X.shape[1])
    return TrainedForest(trees, feature_map, config, oob_scores)


def predict_scores(model: TrainedForest, rows: Table) -> np.ndarray:
    """Return the positive-class score of every row.

    The score is the mean over trees of the leaf positive fraction.

    Raises:
        SchemaError: If rows do not match the training schema
    """
    X = model.feature_map.transform(rows)
    return model.score_matrix(X).mean(axis=0)


def predict_labels(scores: Sequence[float], threshold: float) -> np.ndarray:
    """Turn scores into 0/1 predictions: positive when score >= threshold."""
    return (np.asarray(scores, dtype=float) >= threshold).astype(np.int64)


def balanced_accuracy(labels: Sequence[int], preds: Sequence[int]) -> float:
    """Return (TPR + TNR) / 2.

    Raises:
        DataError: On length mismatch
        UndefinedRateError: If a label class is absent
    """
    y = np.asarray(labels)
    p = np.asarray(preds)
    if y.shape != p.shape:
        raise DataError(f"Label and prediction lengths differ: {y.size} vs {p.size}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedRateError("Balanced accuracy needs both label classes")
    tp = int(np.sum((y == 1) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    return (tp / n_pos + tn / n_neg) / 2


def balanced_accuracy_curve(scores: Sequence[float], labels: Sequence[int],
                            grid: Sequence[float] = THRESHOLD_GRID) -> np.ndarray:
    """Balanced accuracy at every threshold of a grid.

    Raises:
        DataError: On length mismatch
        UndefinedRateError: If a label class is absent
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise DataError(f"Score and label lengths differ: {s.size} vs {y.size}")
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedRateError("Balanced accuracy needs both label classes")
    grid = np.asarray(grid, dtype=float)
    tp = len(pos) - np.searchsorted(pos, grid, side="left")
    tn = np.searchsorted(neg, grid, side="left")
    return (tp / len(pos) + tn / len(neg)) / 2


def threshold_sweep(scores: Sequence[float], labels: Sequence[int],
                    grid: Sequence[float] = THRESHOLD_GRID) -> ThresholdResult:
    """Pick the grid threshold with the highest balanced accuracy.

    Ties go to the smallest threshold.

    Raises:
        UndefinedRateError: If a label class is absent
    """
    curve = balanced_accuracy_curve(scores, labels, grid)
    best = int(np.argmax(curve))
    return ThresholdResult(float(np.asarray(grid)[best]), float(curve[best]))


def grid_search_forest(configs: Sequence[ForestConfig], train: Table,
                       seed: Optional[int] = None) -> Tuple[ForestConfig, List[float]]:
    """Choose the config with the best out-of-bag balanced accuracy.

    Args:
        configs: Candidate configurations
        train: Training table
        seed: If given, overrides every candidate's seed

    Returns:
        (best config, out-of-bag balanced accuracy of every candidate); ties
        go to the earlier candidate

    Raises:
        TrainingError: If no candidates are given
    """
    if not configs:
        raise TrainingError("Config grid is empty")
    labels = train.labels()
    scores = []
    if seed is not None:
        configs = [c.with_seed(seed) for c in configs]
    for config in configs:
        model = train_forest(config, train)
        scores.append(threshold_sweep(model.oob_scores, labels).balanced_accuracy)
        logger.info("Config %s: out-of-bag balanced accuracy %.4f", config, scores[-1])
    return configs[int(np.argmax(scores))], scores


def forest_to_dict(model: TrainedForest) -> dict:
    """Serialize a forest into the versioned JSON layout.

    Fields: format, version, config, feature_map {columns, levels, names},
    trees [{left, right, feature, threshold, positive}], oob_scores.
    """
    fmap = model.feature_map
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_FORMAT_VERSION,
        "config": asdict(model.config),
        "feature_map": {
            "columns": list(fmap.columns),
            "levels": {k: list(v) for k, v in fmap.levels.items()},
            "names": list(fmap.names),
        },
        "trees": [tree.to_dict() for tree in model.trees],
        "oob_scores": None if model.oob_scores is None else model.oob_scores.tolist(),
    }


def forest_from_dict(data: dict) -> TrainedForest:
    """Rebuild a forest from forest_to_dict output.

    Raises:
        DataError: On an unknown format or version
    """
    if data.get("format") != FOREST_FORMAT or data.get("version") != FOREST_FORMAT_VERSION:
        raise DataError(f"Unsupported forest file: {data.get('format')} v{data.get('version')}")
    fmap = data["feature_map"]
    feature_map = FeatureMap(
        columns=tuple(fmap["columns"]),
        levels={k: tuple(v) for k, v in fmap["levels"].items()},
        names=tuple(fmap["names"]),
    )
    oob = data.get("oob_scores")
    return TrainedForest(
        trees=tuple(TreeArrays.from_dict(t) for t in data["trees"]),
        feature_map=feature_map,
        config=ForestConfig(**data["config"]),
        oob_scores=None if oob is None else np.asarray(oob, dtype=float),
    )


def dump_forest(model: TrainedForest, path) -> None:
    """Write a forest cache file."""
    Path(path).write_text(json.dumps(forest_to_dict(model)), encoding="utf-8")


def load_forest(path) -> TrainedForest:
    """Read a forest cache file written by dump_forest."""
    return forest_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
