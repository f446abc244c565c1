"""Tabular datasets: loading, preprocessing, encoding, splitting and subgroups."""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import DataError, SchemaError


logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25
BP_MIN = 20.0
BP_MAX = 360.0
CARDIO_PRESET = "cardio"
ONEHOT_ALL_PRESET = "onehot_all"
NO_PRESET = "none"
PRESETS = (CARDIO_PRESET, ONEHOT_ALL_PRESET, NO_PRESET)


class ColumnKind(Enum):
    """Kind of a table column."""
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True, eq=False)
class Schema:
    """Declared layout of a CSV file.

    Attributes:
        columns: Column name to kind, in file order
        label: Name of the label column
        protected: Name of the protected-attribute column
        levels: Declared level sets for categorical columns (optional per column)
        level_names: Per-column renaming of raw levels applied at load time
        positive_label: Label value that encodes the adverse outcome (1)
        negative_label: Label value that encodes 0
        ignored: Columns present in the file but dropped on load
        protected_feature: Whether models may use the protected column as a feature
    """
    columns: Dict[str, ColumnKind]
    label: str
    protected: str
    levels: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    level_names: Dict[str, Dict[str, str]] = field(default_factory=dict)
    positive_label: str = "1"
    negative_label: str = "0"
    ignored: Tuple[str, ...] = ()
    protected_feature: bool = True

    def __post_init__(self):
        for name in (self.label, self.protected):
            if name not in self.columns:
                raise SchemaError(f"Schema does not declare column '{name}'", column=name)
        for name in (self.label, self.protected):
            if self.columns[name] is not ColumnKind.CATEGORICAL:
                raise SchemaError("Label and protected columns must be categorical", column=name)
        if self.positive_label == self.negative_label:
            raise SchemaError("Positive and negative label values must differ", column=self.label)


@dataclass(frozen=True)
class OneHotMapping:
    """Record of one categorical column expanded into binary columns.

    Attributes:
        column: Original column name
        position: Index of the original column in the table
        levels: Levels in binary-column order
        binary_columns: Names of the binary columns
        kept: True when the original column stays in the table (protected column)
    """
    column: str
    position: int
    levels: Tuple[str, ...]
    binary_columns: Tuple[str, ...]
    kept: bool = False


@dataclass(frozen=True, eq=False)
class Table:
    """Immutable rectangular dataset with typed columns.

    Categorical values are stored as strings, numeric values as floats.
    Operations never mutate a table; they return a new one.

    Attributes:
        frame: Backing data frame (treat as read-only)
        kinds: Column name to kind, in column order
        label_column: Name of the binary label column
        protected_column: Name of the protected-attribute column
        levels: Level set of every categorical column
        positive_label: Label value that encodes 1
        encodings: One-hot mappings applied so far, keyed by original column
        applied: Preprocessing steps already applied
        protected_feature: Whether models may use the protected column as a feature
    """
    frame: pd.DataFrame
    kinds: Dict[str, ColumnKind]
    label_column: str
    protected_column: str
    levels: Dict[str, Tuple[str, ...]]
    positive_label: str = "1"
    encodings: Dict[str, OneHotMapping] = field(default_factory=dict)
    applied: Tuple[str, ...] = ()
    protected_feature: bool = True

    def __post_init__(self):
        if list(self.frame.columns) != list(self.kinds):
            raise SchemaError("Frame columns do not match declared kinds")
        for name in (self.label_column, self.protected_column):
            if name not in self.kinds:
                raise SchemaError("Column not present in table", column=name)
        for name, kind in self.kinds.items():
            if kind is ColumnKind.CATEGORICAL and name not in self.levels:
                raise SchemaError("Categorical column has no level set", column=name)

    @property
    def column_names(self) -> List[str]:
        """Column names in order."""
        return list(self.kinds)

    @property
    def column_kinds(self) -> List[ColumnKind]:
        """Column kinds in column order."""
        return list(self.kinds.values())

    @property
    def rows(self) -> List[tuple]:
        """Rows as plain value tuples."""
        return list(self.frame.itertuples(index=False, name=None))

    def __len__(self) -> int:
        """Return the number of rows."""
        return len(self.frame)

    def labels(self) -> np.ndarray:
        """Return the label column encoded as 0/1 integers."""
        return (self.frame[self.label_column].to_numpy() == self.positive_label).astype(np.int64)

    def groups(self) -> np.ndarray:
        """Return the protected-attribute value of every row."""
        return self.frame[self.protected_column].to_numpy(dtype=object)

    def with_frame(self, frame: pd.DataFrame, **changes) -> "Table":
        """Return a table sharing this table's metadata over a new frame.

        Args:
            frame: Replacement frame (same columns unless kinds change too)
            **changes: Other fields to replace

        Returns:
            New Table
        """
        return replace(self, frame=frame.reset_index(drop=True), **changes)

    def with_labels(self, labels: Sequence[int]) -> "Table":
        """Return a copy whose label column holds the given 0/1 labels.

        Raises:
            DataError: On a length mismatch or a label level set that is not binary
        """
        y = np.asarray(labels)
        if y.shape != (len(self),):
            raise DataError(f"Expected {len(self)} labels, got {y.size}")
        others = [v for v in self.levels[self.label_column] if v != self.positive_label]
        if len(others) != 1:
            raise DataError(f"Label column '{self.label_column}' is not binary")
        frame = self.frame.copy()
        frame[self.label_column] = np.where(y == 1, self.positive_label, others[0]).astype(object)
        return self.with_frame(frame)

    def take(self, indices: Sequence[int]) -> "Table":
        """Return the rows at the given positions, in that order."""
        return self.with_frame(self.frame.iloc[list(indices)])

    def require_columns(self, names: Sequence[str]) -> None:
        """Raise if any named column is missing.

        Raises:
            SchemaError: Naming the first missing column
        """
        for name in names:
            if name not in self.kinds:
                raise SchemaError("Missing required column", column=name)


@dataclass(frozen=True)
class ProtectedSpec:
    """Ordered pair of subgroups of a protected attribute.

    All difference metrics compute rate(group_a) - rate(group_b).
    """
    attribute: str
    group_a: str
    group_b: str

    def __post_init__(self):
        if self.group_a == self.group_b:
            raise DataError(f"Protected groups must differ, got '{self.group_a}' twice")

    def swapped(self) -> "ProtectedSpec":
        """Return the same pair with the order reversed."""
        return ProtectedSpec(self.attribute, self.group_b, self.group_a)


@dataclass(frozen=True, eq=False)
class SplitPair:
    """Disjoint train/test partition of one table."""
    train: Table
    test: Table
    seed: int
    ratio: float


def load_csv(path, schema: Schema, delimiter: str = ",") -> Table:
    """Load a UTF-8 CSV file with a header row and enforce a schema.

    Args:
        path: CSV file path
        schema: Declared column kinds, label and protected columns
        delimiter: Field separator

    Returns:
        Table with kinds enforced

    Raises:
        SchemaError: Missing/unexpected column, missing value, unparseable
            numeric value, or unknown categorical level (with row and column)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Data file not found: {path}")

    raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [str(c).strip() for c in raw.columns]
    raw = raw.drop(columns=[c for c in schema.ignored if c in raw.columns])

    for name in schema.columns:
        if name not in raw.columns:
            raise SchemaError("Missing column in CSV header", column=name)
    for name in raw.columns:
        if name not in schema.columns:
            raise SchemaError("Unexpected column in CSV header", column=name)

    data: Dict[str, pd.Series] = {}
    levels: Dict[str, Tuple[str, ...]] = {}
    for name, kind in schema.columns.items():
        values = raw[name].str.strip()
        empty = values == ""
        if empty.any():
            raise SchemaError("Missing value", row=int(np.argmax(empty.to_numpy())) + 1, column=name)

        if kind is ColumnKind.NUMERIC:
            numbers = pd.to_numeric(values, errors="coerce").astype(float)
            bad = ~np.isfinite(numbers.to_numpy())
            if bad.any():
                first = int(np.argmax(bad))
                raise SchemaError(f"Unparseable numeric value '{values.iloc[first]}'",
                                  row=first + 1, column=name)
            data[name] = numbers
            continue

        renames = schema.level_names.get(name, {})
        if renames:
            values = values.map(lambda v: renames.get(v, v))
        if name == schema.label:
            declared = (schema.negative_label, schema.positive_label)
        else:
            declared = schema.levels.get(name)
        if declared is not None:
            unknown = ~values.isin(declared)
            if unknown.any():
                first = int(np.argmax(unknown.to_numpy()))
                raise SchemaError(f"Unknown categorical level '{values.iloc[first]}'",
                                  row=first + 1, column=name)
            levels[name] = tuple(declared)
        else:
            levels[name] = tuple(sorted(values.unique()))
        data[name] = values

    frame = pd.DataFrame(data, columns=list(schema.columns))
    logger.info("Loaded %d rows x %d columns from %s", len(frame), frame.shape[1], path)
    return Table(
        frame=frame,
        kinds=dict(schema.columns),
        label_column=schema.label,
        protected_column=schema.protected,
        levels=levels,
        positive_label=schema.positive_label,
        protected_feature=schema.protected_feature,
    )


def write_csv(table: Table, path) -> None:
    """Write a table as CSV with the same header layout it was loaded with.

    Args:
        table: Table to write
        path: Destination path
    """
    table.frame.to_csv(path, index=False, encoding="utf-8")


def one_hot_encode(table: Table, columns: Sequence[str]) -> Table:
    """Replace categorical columns by one binary column per level.

    The label column cannot be encoded. The protected column keeps its
    original values (they identify subgroups) and gains binary columns
    next to it.

    Args:
        table: Source table
        columns: Categorical columns to encode

    Returns:
        New table with binary 0/1 numeric columns named "<column>_<level>"

    Raises:
        SchemaError: Column missing, not categorical, or the label column
    """
    table.require_columns(columns)
    frame = table.frame
    kinds = dict(table.kinds)
    encodings = dict(table.encodings)

    for name in columns:
        if table.kinds[name] is not ColumnKind.CATEGORICAL:
            raise SchemaError("Column is not categorical", column=name)
        if name == table.label_column:
            raise SchemaError("The label column cannot be one-hot encoded", column=name)
        if name in encodings:
            continue

        levels = table.levels[name]
        binary_names = tuple(f"{name}_{level}" for level in levels)
        position = list(kinds).index(name)
        kept = name == table.protected_column
        binary = pd.DataFrame(
            {b: (frame[name] == level).astype(float) for b, level in zip(binary_names, levels)}
        )

        names = list(kinds)
        insert_at = position + 1 if kept else position
        before, after = names[:insert_at], names[position + 1:]
        parts = [frame[before], binary, frame[after]]
        frame = pd.concat(parts, axis=1)

        new_kinds = {n: kinds[n] for n in before}
        new_kinds.update({b: ColumnKind.NUMERIC for b in binary_names})
        new_kinds.update({n: kinds[n] for n in after})
        kinds = new_kinds
        encodings[name] = OneHotMapping(name, position, levels, binary_names, kept)

    return table.with_frame(frame, kinds=kinds, encodings=encodings)


def decode_one_hot(table: Table, column: str) -> Table:
    """Undo one_hot_encode for one column.

    Args:
        table: Table that was encoded
        column: Original column name

    Returns:
        Table with the original column restored at its original position

    Raises:
        SchemaError: If the column was never encoded or a row has no level set
    """
    if column not in table.encodings:
        raise SchemaError("Column was not one-hot encoded", column=column)
    mapping = table.encodings[column]
    binary = table.frame[list(mapping.binary_columns)].to_numpy()
    if not np.all(binary.sum(axis=1) == 1):
        bad = int(np.argmax(binary.sum(axis=1) != 1))
        raise SchemaError("Row does not have exactly one level set", row=bad + 1, column=column)
    decoded = pd.Series(np.asarray(mapping.levels, dtype=object)[binary.argmax(axis=1)],
                        name=column)

    names = [n for n in table.kinds if n not in mapping.binary_columns and n != column]
    kinds = {n: table.kinds[n] for n in names}
    frame = table.frame[names]
    frame = pd.concat([frame.iloc[:, :mapping.position], decoded.to_frame(),
                       frame.iloc[:, mapping.position:]], axis=1)
    kinds = dict(list(kinds.items())[:mapping.position]
                 + [(column, ColumnKind.CATEGORICAL)]
                 + list(kinds.items())[mapping.position:])
    encodings = {k: v for k, v in table.encodings.items() if k != column}
    return table.with_frame(frame, kinds=kinds, encodings=encodings)


def preprocess_cardio(table: Table, age_column: str = "age",
                      bp_columns: Tuple[str, str] = ("ap_hi", "ap_lo"),
                      gender_column: str = "gender") -> Table:
    """Apply the cardiovascular preprocessing.

    Age in days becomes age in years, rows with any blood pressure outside
    [20, 360] are removed, and gender is one-hot encoded. Applying it twice
    is the same as applying it once.

    Args:
        table: Raw cardiovascular table
        age_column: Age column, in days
        bp_columns: Systolic and diastolic blood pressure columns
        gender_column: Gender column

    Returns:
        Preprocessed table

    Raises:
        SchemaError: If a required column is missing
    """
    if CARDIO_PRESET in table.applied:
        return table
    table.require_columns([age_column, *bp_columns, gender_column])

    frame = table.frame.copy()
    frame[age_column] = frame[age_column] / DAYS_PER_YEAR
    keep = np.ones(len(frame), dtype=bool)
    for name in bp_columns:
        keep &= frame[name].between(BP_MIN, BP_MAX).to_numpy()
    removed = int((~keep).sum())
    if removed:
        logger.info("Removed %d rows with blood pressure outside [%g, %g]", removed, BP_MIN, BP_MAX)

    result = table.with_frame(frame[keep], applied=table.applied + (CARDIO_PRESET,))
    return one_hot_encode(result, [gender_column])


def preprocess_onehot_all(table: Table) -> Table:
    """One-hot encode every categorical column except the label."""
    columns = [n for n, k in table.kinds.items()
               if k is ColumnKind.CATEGORICAL and n != table.label_column]
    return one_hot_encode(table, columns)


def apply_preset(table: Table, preset: str) -> Table:
    """Apply a named preprocessing preset.

    Args:
        table: Source table
        preset: One of "cardio", "onehot_all", "none"

    Returns:
        Preprocessed table
    """
    if preset == CARDIO_PRESET:
        return preprocess_cardio(table)
    if preset == ONEHOT_ALL_PRESET:
        return preprocess_onehot_all(table)
    if preset == NO_PRESET:
        return table
    raise DataError(f"Unknown preprocessing preset '{preset}'")


def split_rng(seed: int) -> np.random.Generator:
    """Return the generator used for splits: Philox (counter-based, 64-bit) keyed by seed."""
    return np.random.Generator(np.random.Philox(seed))


def train_test_split(table: Table, seed: int, ratio: float = 0.7) -> SplitPair:
    """Split a table into disjoint train and test partitions.

    Rows are shuffled with a Philox-driven Fisher-Yates permutation and the
    first round(ratio * n) go to train. Each partition keeps the original
    relative row order.

    Args:
        table: Table to split
        seed: Experiment seed
        ratio: Fraction of rows in the training partition

    Returns:
        SplitPair

    Raises:
        DataError: Empty table or ratio outside (0, 1)
    """
    if not 0 < ratio < 1:
        raise DataError(f"Split ratio must be in (0, 1), got {ratio}")
    n = len(table)
    if n == 0:
        raise DataError("Cannot split an empty table")

    order = split_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n + 0.5))
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return SplitPair(table.take(train_idx), table.take(test_idx), seed, ratio)


def prevalence_rates(table: Table, attribute: str) -> Dict[str, float]:
    """Percentage of rows in each level of a column.

    Declared levels with no rows are reported as 0.0.

    Args:
        table: Table to measure
        attribute: Column name

    Returns:
        Level to percentage, summing to 100

    Raises:
        SchemaError: If the column is missing
    """
    table.require_columns([attribute])
    counts = table.frame[attribute].value_counts()
    n = len(table)
    levels = list(table.levels.get(attribute, ()))
    levels += [str(v) for v in counts.index if str(v) not in levels]
    if n == 0:
        return {level: 0.0 for level in levels}
    return {level: 100.0 * int(counts.get(level, 0)) / n for level in levels}


def restrict_subgroups(table: Table, spec: ProtectedSpec) -> Table:
    """Keep only rows belonging to one of the two groups of a pair.

    Args:
        table: Source table
        spec: Ordered subgroup pair

    Returns:
        Table restricted to group_a and group_b rows

    Raises:
        DataError: If a group is not a known level or has no rows
    """
    table.require_columns([spec.attribute])
    known = set(table.levels.get(spec.attribute, ()))
    values = table.frame[spec.attribute]
    for group in (spec.group_a, spec.group_b):
        if known and group not in known:
            raise DataError(f"Group '{group}' is not a level of '{spec.attribute}'")
        if not (values == group).any():
            raise DataError(f"Group '{group}' has no rows in '{spec.attribute}'")
    keep = values.isin([spec.group_a, spec.group_b]).to_numpy()
    return table.with_frame(table.frame[keep])


def row_hash_counts(table: Table, columns: Optional[Sequence[str]] = None) -> Counter:
    """Return how many times each row content hash occurs."""
    frame = table.frame if columns is None else table.frame[list(columns)]
    return Counter(pd.util.hash_pandas_object(frame, index=False).tolist())


@dataclass(frozen=True)
class FeatureMap:
    """Column layout of the model feature matrix.

    Numeric columns pass through; categorical columns other than the label
    become one indicator per level. A protected column that was already
    one-hot encoded contributes only its binary columns, and none at all
    when the table marks it as not a feature.
    """
    columns: Tuple[str, ...]
    levels: Dict[str, Tuple[str, ...]]
    names: Tuple[str, ...]

    @classmethod
    def from_table(cls, table: Table) -> "FeatureMap":
        """Build the feature layout of a table."""
        columns = []
        levels = {}
        names: List[str] = []
        for name, kind in table.kinds.items():
            if name == table.label_column:
                continue
            if name in table.encodings and table.encodings[name].kept:
                continue
            if name == table.protected_column and not table.protected_feature:
                continue
            columns.append(name)
            if kind is ColumnKind.CATEGORICAL:
                levels[name] = table.levels[name]
                names.extend(f"{name}={level}" for level in levels[name])
            else:
                names.append(name)
        return cls(tuple(columns), levels, tuple(names))

    def transform(self, table: Table) -> np.ndarray:
        """Encode a table into a float feature matrix.

        Raises:
            SchemaError: If a column is missing or of a different kind
        """
        parts = []
        for name in self.columns:
            if name not in table.kinds:
                raise SchemaError("Row schema does not match training schema", column=name)
            values = table.frame[name]
            if name in self.levels:
                if table.kinds[name] is not ColumnKind.CATEGORICAL:
                    raise SchemaError("Column kind differs from training schema", column=name)
                codes = values.to_numpy()
                parts.append(np.stack([(codes == level) for level in self.levels[name]], axis=1)
                             .astype(float))
            else:
                if table.kinds[name] is not ColumnKind.NUMERIC:
                    raise SchemaError("Column kind differs from training schema", column=name)
                parts.append(values.to_numpy(dtype=float).reshape(-1, 1))
        if not parts:
            return np.zeros((len(table), 0))
        return np.hstack(parts)


def table_from_columns(columns: Mapping[str, Sequence], kinds: Mapping[str, ColumnKind],
                       label: str, protected: str,
                       levels: Optional[Mapping[str, Sequence[str]]] = None,
                       positive_label: str = "1", protected_feature: bool = True) -> Table:
    """Build a Table from in-memory columns.

    Categorical values are converted to strings; level sets default to the
    sorted observed values.

    Args:
        columns: Column name to values
        kinds: Column name to kind
        label: Label column
        protected: Protected column
        levels: Optional declared level sets
        positive_label: Label value encoding 1
        protected_feature: Whether models may use the protected column

    Returns:
        Table
    """
    levels = dict(levels or {})
    data = {}
    level_sets = {}
    for name, kind in kinds.items():
        if kind is ColumnKind.NUMERIC:
            data[name] = pd.Series(np.asarray(columns[name], dtype=float))
        else:
            data[name] = pd.Series([str(v) for v in columns[name]], dtype=object)
            if name in levels:
                level_sets[name] = tuple(str(v) for v in levels[name])
            elif name == label:
                level_sets[name] = tuple(sorted({"0", "1", *data[name].unique()}))
            else:
                level_sets[name] = tuple(sorted(data[name].unique()))
    frame = pd.DataFrame(data, columns=list(kinds))
    return Table(frame, dict(kinds), label, protected, level_sets, positive_label,
                 protected_feature=protected_feature)
