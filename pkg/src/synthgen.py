"""Surrogate synthetic data, planted-bias fixtures and nearest-neighbor adversarial accuracy."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import brentq
from scipy.special import logsumexp
from sklearn.neighbors import NearestNeighbors

from src.dataset import ColumnKind, Table, table_from_columns
from src.errors import DataError, InfeasibleSpecError, SchemaError


logger = logging.getLogger(__name__)

DEFAULT_SIZE = 100_000


@dataclass(frozen=True, eq=False)
class Stratum:
    """Empirical distributions of the rows sharing one (label, group) value."""
    label: str
    group: str
    weight: float
    categorical: Dict[str, Tuple[np.ndarray, np.ndarray]]
    numeric: Dict[str, np.ndarray]


@dataclass(frozen=True, eq=False)
class MarginalGenerator:
    """Empirical generator fitted on a training table.

    Rows are drawn stratum by stratum, a stratum being one (label, protected)
    combination, so label prevalence per group survives. Inside a stratum
    each column is drawn from its observed values; numeric columns optionally
    share a Gaussian copula estimated on rank-normal scores.

    Attributes:
        template: Zero-row table carrying the fitted schema
        strata: Fitted strata in deterministic order
        copula_columns: Numeric columns tied by the copula
        copula_factor: Cholesky factor of the copula correlation
        seed: Default sampling seed
    """
    template: Table
    strata: Tuple[Stratum, ...]
    copula_columns: Tuple[str, ...] = ()
    copula_factor: Optional[np.ndarray] = None
    seed: int = 0


def _rank_normal_scores(values: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(values, method="average")
    return stats.norm.ppf((ranks - 0.5) / len(values))


def _copula(table: Table) -> Tuple[Tuple[str, ...], Optional[np.ndarray]]:
    columns = []
    for name, kind in table.kinds.items():
        if kind is not ColumnKind.NUMERIC:
            continue
        values = table.frame[name].to_numpy(dtype=float)
        if np.ptp(values) == 0:
            logger.warning("Column '%s' is constant; excluded from the copula", name)
            continue
        columns.append(name)
    if not columns:
        return (), None

    scores = np.column_stack([_rank_normal_scores(table.frame[c].to_numpy(dtype=float))
                              for c in columns])
    corr = np.atleast_2d(np.corrcoef(scores, rowvar=False))
    eigenvalues, eigenvectors = np.linalg.eigh(corr)
    eigenvalues = np.clip(eigenvalues, 1e-10, None)
    corr = eigenvectors @ np.diag(eigenvalues) @ eigenvectors.T
    scale = np.sqrt(np.diag(corr))
    corr = corr / np.outer(scale, scale)
    return tuple(columns), np.linalg.cholesky(corr)


def fit_generator(train: Table, use_copula: bool = False, seed: int = 0) -> MarginalGenerator:
    """Fit the surrogate generator on a training table.

    Args:
        train: Training rows (never the test split)
        use_copula: Tie numeric columns with a Gaussian copula
        seed: Default seed for generate

    Returns:
        MarginalGenerator

    Raises:
        DataError: If train is empty
    """
    if len(train) == 0:
        raise DataError("Cannot fit a generator on an empty table")

    frame = train.frame
    keys = [train.label_column, train.protected_column]
    others = [n for n in train.kinds if n not in keys]
    strata = []
    for (label, group), rows in frame.groupby(keys, sort=True):
        categorical = {}
        numeric = {}
        for name in others:
            values = rows[name]
            if train.kinds[name] is ColumnKind.CATEGORICAL:
                counts = values.value_counts().sort_index()
                categorical[name] = (counts.index.to_numpy(dtype=object),
                                     counts.to_numpy(dtype=float) / counts.sum())
            else:
                numeric[name] = np.sort(values.to_numpy(dtype=float))
        strata.append(Stratum(str(label), str(group), len(rows) / len(frame), categorical, numeric))

    copula_columns, factor = _copula(train) if use_copula else ((), None)
    logger.debug("Fitted generator: %d strata, copula over %d columns", len(strata), len(copula_columns))
    return MarginalGenerator(train.with_frame(frame.iloc[:0]), tuple(strata), copula_columns, factor, seed)


def generate(generator: MarginalGenerator, n: int = DEFAULT_SIZE, seed: Optional[int] = None) -> Table:
    """Draw n synthetic rows.

    Args:
        generator: Fitted generator
        n: Number of rows
        seed: Sampling seed (defaults to the generator's)

    Returns:
        Table with the fitted schema and level sets

    Raises:
        DataError: If n < 1
    """
    if n < 1:
        raise DataError(f"Synthetic size must be at least 1, got {n}")
    rng = np.random.Generator(np.random.Philox(generator.seed if seed is None else seed))
    template = generator.template
    strata = generator.strata

    weights = np.array([s.weight for s in strata])
    assignment = rng.choice(len(strata), size=n, p=weights / weights.sum())
    numeric_names = [c for c, k in template.kinds.items() if k is ColumnKind.NUMERIC]

    uniforms: Dict[str, np.ndarray] = {}
    if generator.copula_factor is not None:
        z = rng.standard_normal((n, len(generator.copula_columns))) @ generator.copula_factor.T
        u = stats.norm.cdf(z)
        uniforms.update({c: u[:, j] for j, c in enumerate(generator.copula_columns)})
    for name in numeric_names:
        if name not in uniforms:
            uniforms[name] = rng.random(n)

    columns: Dict[str, np.ndarray] = {
        name: np.empty(n, dtype=object if kind is ColumnKind.CATEGORICAL else float)
        for name, kind in template.kinds.items()
    }
    for index, stratum in enumerate(strata):
        rows = np.nonzero(assignment == index)[0]
        if len(rows) == 0:
            continue
        columns[template.label_column][rows] = stratum.label
        columns[template.protected_column][rows] = stratum.group
        for name, (levels, probs) in stratum.categorical.items():
            columns[name][rows] = rng.choice(levels, size=len(rows), p=probs)
        for name, values in stratum.numeric.items():
            columns[name][rows] = np.quantile(values, uniforms[name][rows], method="inverted_cdf")

    frame = pd.DataFrame(columns, columns=list(template.kinds))
    return template.with_frame(frame)


MIN_STRENGTH = 1e-3
MAX_STRENGTH = 40.0


@dataclass(frozen=True)
class PlantedBiasSpec:
    """Two-group dataset with a known Bayes TPR gap.

    Labels are Bernoulli(positive_rates[g]); the signal column is
    N(label * signal_strengths[g], 1). The group column is not a model
    feature, so the reference classifier is group blind and predicts
    positive above one signal cutoff shared by both groups. Equal strengths
    then give equal TPR whatever the positive rates. When target_delta_tpr
    is set, signal_strengths[0] is solved so that TPR(group_a) -
    TPR(group_b) equals the target.

    Attributes:
        prevalences: Share of group_a and group_b rows
        positive_rates: P(label = 1) per group
        signal_strengths: Mean shift of the signal column per group
        target_delta_tpr: Optional Bayes TPR gap to calibrate for
        groups: Names of group_a and group_b
        n_noise: Number of pure-noise numeric columns
        attribute: Name of the group column
    """
    prevalences: Tuple[float, float] = (0.5, 0.5)
    positive_rates: Tuple[float, float] = (0.3, 0.3)
    signal_strengths: Tuple[float, float] = (2.0, 2.0)
    target_delta_tpr: Optional[float] = None
    groups: Tuple[str, str] = ("A", "B")
    n_noise: int = 2
    attribute: str = "group"

    def validate(self) -> None:
        """Raise InfeasibleSpecError on invalid parameters."""
        if len(self.prevalences) != 2 or abs(sum(self.prevalences) - 1.0) > 1e-9:
            raise InfeasibleSpecError(f"Prevalences must be two values summing to 1, got {self.prevalences}")
        if any(not 0 < p < 1 for p in self.prevalences):
            raise InfeasibleSpecError("Prevalences must lie strictly between 0 and 1")
        if any(not 0 <= r <= 1 for r in self.positive_rates):
            raise InfeasibleSpecError(f"Positive rates must lie in [0, 1], got {self.positive_rates}")
        if any(s <= 0 for s in self.signal_strengths):
            raise InfeasibleSpecError("Signal strengths must be positive")
        if self.groups[0] == self.groups[1]:
            raise InfeasibleSpecError("Group names must differ")


def bayes_cutoff(spec: PlantedBiasSpec) -> float:
    """Signal cutoff of the balanced-accuracy-optimal group-blind classifier.

    Negatives are N(0, 1) in both groups and positives a mixture of
    N(s_g, 1) weighted by each group's share of the positives. Balanced
    accuracy peaks where that mixture's likelihood ratio to N(0, 1) is one,
    which lies between the smallest and largest s_g / 2.

    Raises:
        InfeasibleSpecError: If a positive rate is 0 or 1
    """
    if any(not 0 < r < 1 for r in spec.positive_rates):
        raise InfeasibleSpecError("Bayes rates need positive rates strictly between 0 and 1")
    shares = np.array([p * r for p, r in zip(spec.prevalences, spec.positive_rates)])
    weights = shares / shares.sum()
    strengths = np.asarray(spec.signal_strengths, dtype=float)
    low, high = strengths.min() / 2, strengths.max() / 2
    if high - low < 1e-12:
        return float(low)

    def log_ratio(cutoff: float) -> float:
        return float(logsumexp(strengths * cutoff - strengths ** 2 / 2, b=weights))

    return float(brentq(log_ratio, low, high, xtol=1e-12))


def bayes_rates(spec: PlantedBiasSpec) -> Dict[str, Tuple[float, float]]:
    """Per-group (TPR, FPR) of the balanced-accuracy-optimal group-blind classifier.

    With c from bayes_cutoff, TPR_g = P(N(s_g, 1) >= c) and both groups
    share FPR = P(N(0, 1) >= c).

    Raises:
        InfeasibleSpecError: If a positive rate is 0 or 1
    """
    cutoff = bayes_cutoff(spec)
    fpr = float(stats.norm.sf(cutoff))
    return {group: (float(stats.norm.sf(cutoff - s)), fpr)
            for group, s in zip(spec.groups, spec.signal_strengths)}


def resolve_planted_bias(spec: PlantedBiasSpec) -> PlantedBiasSpec:
    """Return the spec with signal_strengths[0] calibrated to the target gap.

    The gap is zero at equal strengths and grows with group_a's strength,
    up to the limit reached once group_a's positives are fully separated.

    Raises:
        InfeasibleSpecError: If no strength in [MIN_STRENGTH, MAX_STRENGTH]
            reaches the target
    """
    spec.validate()
    if spec.target_delta_tpr is None:
        return spec
    group_a, group_b = spec.groups

    def gap(strength_a: float) -> float:
        trial = replace(spec, signal_strengths=(strength_a, spec.signal_strengths[1]))
        rates = bayes_rates(trial)
        return rates[group_a][0] - rates[group_b][0] - spec.target_delta_tpr

    try:
        if gap(MIN_STRENGTH) * gap(MAX_STRENGTH) > 0:
            raise InfeasibleSpecError(
                f"No signal strength for group '{group_a}' gives a TPR gap of {spec.target_delta_tpr}")
        strength_a = brentq(gap, MIN_STRENGTH, MAX_STRENGTH, xtol=1e-12)
    except ValueError as exc:
        raise InfeasibleSpecError(str(exc)) from exc
    logger.debug("Calibrated signal strength of group '%s' to %.6f", group_a, strength_a)
    return replace(spec, signal_strengths=(float(strength_a), spec.signal_strengths[1]))



def make_planted_bias(spec: PlantedBiasSpec, n: int, seed: int = 0) -> Table:
    """Sample a planted-bias dataset.

    Columns: the group column (categorical), "signal", "noise_1".."noise_k"
    and "label" ("0"/"1"). The group column is marked as no model feature.

    Raises:
        InfeasibleSpecError: If the spec cannot be realized
        DataError: If n < 1
    """
    if n < 1:
        raise DataError(f"Dataset size must be at least 1, got {n}")
    spec = resolve_planted_bias(spec)
    rng = np.random.Generator(np.random.Philox(seed))

    in_a = rng.random(n) < spec.prevalences[0]
    rate = np.where(in_a, spec.positive_rates[0], spec.positive_rates[1])
    labels = (rng.random(n) < rate).astype(int)
    strength = np.where(in_a, spec.signal_strengths[0], spec.signal_strengths[1])
    signal = rng.standard_normal(n) + labels * strength

    columns = {spec.attribute: np.where(in_a, spec.groups[0], spec.groups[1]), "signal": signal}
    kinds = {spec.attribute: ColumnKind.CATEGORICAL, "signal": ColumnKind.NUMERIC}
    for k in range(1, spec.n_noise + 1):
        columns[f"noise_{k}"] = rng.standard_normal(n)
        kinds[f"noise_{k}"] = ColumnKind.NUMERIC
    columns["label"] = labels.astype(str)
    kinds["label"] = ColumnKind.CATEGORICAL
    return table_from_columns(columns, kinds, "label", spec.attribute,
                              levels={spec.attribute: spec.groups, "label": ("0", "1")},
                              protected_feature=False)


def _nnaa_features(real: Table, synth: Table) -> Tuple[np.ndarray, np.ndarray]:
    """Standardized numeric plus one-hot categorical features of both tables."""
    if list(real.kinds.items()) != list(synth.kinds.items()):
        raise SchemaError("Real and synthetic tables have different schemas")
    real_parts: List[np.ndarray] = []
    synth_parts: List[np.ndarray] = []
    for name, kind in real.kinds.items():
        r = real.frame[name]
        s = synth.frame[name]
        if kind is ColumnKind.NUMERIC:
            pooled = np.concatenate([r.to_numpy(dtype=float), s.to_numpy(dtype=float)])
            sd = pooled.std()
            sd = sd if sd > 0 else 1.0
            real_parts.append(((r.to_numpy(dtype=float) - pooled.mean()) / sd).reshape(-1, 1))
            synth_parts.append(((s.to_numpy(dtype=float) - pooled.mean()) / sd).reshape(-1, 1))
        else:
            levels = sorted(set(real.levels.get(name, ())) | set(r.unique()) | set(s.unique()), key=str)
            real_parts.append(np.stack([(r.to_numpy() == lv) for lv in levels], axis=1).astype(float))
            synth_parts.append(np.stack([(s.to_numpy() == lv) for lv in levels], axis=1).astype(float))
    return np.hstack(real_parts), np.hstack(synth_parts)


def _cross_and_within(query: np.ndarray, own: np.ndarray, other: np.ndarray,
                      n_jobs: int) -> Tuple[np.ndarray, np.ndarray]:
    within, _ = NearestNeighbors(n_neighbors=2, metric="euclidean", n_jobs=n_jobs).fit(own).kneighbors(query)
    cross, _ = NearestNeighbors(n_neighbors=1, metric="euclidean", n_jobs=n_jobs).fit(other).kneighbors(query)
    return cross[:, 0], within[:, 1]


def nn_adversarial_accuracy(real: Table, synth: Table, max_rows: Optional[int] = None,
                            seed: int = 0, n_jobs: int = 1) -> float:
    """Nearest-neighbor adversarial accuracy of two tables.

    A row counts as distinguishable when its nearest row in the other set is
    strictly farther than its nearest other row in its own set. The score is
    the mean of the real-side and synthetic-side fractions; 0.5 means the
    sets are indistinguishable.

    Args:
        real: Real rows
        synth: Synthetic rows with the same schema
        max_rows: Optional cap; larger tables are subsampled without replacement
        seed: Subsampling seed
        n_jobs: Workers for the neighbor queries

    Returns:
        Score in [0, 1]

    Raises:
        DataError: If either table has fewer than two rows
        SchemaError: If schemas differ
    """
    if len(real) < 2 or len(synth) < 2:
        raise DataError("nnAA needs at least two rows in each table")
    if max_rows is not None:
        rng = np.random.Generator(np.random.Philox(seed))
        if len(real) > max_rows:
            real = real.take(np.sort(rng.choice(len(real), size=max_rows, replace=False)))
        if len(synth) > max_rows:
            synth = synth.take(np.sort(rng.choice(len(synth), size=max_rows, replace=False)))

    X_real, X_synth = _nnaa_features(real, synth)
    d_rs, d_rr = _cross_and_within(X_real, X_real, X_synth, n_jobs)
    d_sr, d_ss = _cross_and_within(X_synth, X_synth, X_real, n_jobs)
    return float(0.5 * (np.mean(d_rs > d_rr) + np.mean(d_sr > d_ss)))
