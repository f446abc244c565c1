"""Experiment configuration: YAML loading, defaults and validation."""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from src.dataset import NO_PRESET, PRESETS, ColumnKind, ProtectedSpec, Schema
from src.errors import AuditError, ConfigError, DataError
from src.mitigation import DEFAULT_FLOOR, DEFAULT_REDUCTION_GRID, Technique
from src.model import AUTO, ForestConfig
from src.synthgen import DEFAULT_SIZE


logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
SURROGATE = "surrogate"
DEFAULT_SEEDS = tuple(range(1, 11))
DEFAULT_SPLIT_RATIO = 0.7
DEFAULT_NNAA_ROWS = 5000

FOREST_PRESETS: Dict[str, Dict[str, Any]] = {
    "cardio": {"n_trees": 100, "max_features": 10, "max_depth": None},
    "mimic": {"n_trees": 20, "max_features": AUTO, "max_depth": 5},
}

_TOP_KEYS = {"version", "dataset", "protected", "model", "seeds", "split_ratio", "synthetic",
             "mitigation", "output_dir", "n_jobs"}
_DATASET_KEYS = {"path", "columns", "label", "levels", "level_names", "positive_label",
                 "negative_label", "preset", "delimiter", "ignore_columns",
                 "protected_feature"}
_PROTECTED_KEYS = {"attribute", "group_a", "group_b"}
_MODEL_KEYS = {"preset", "n_trees", "max_depth", "max_features", "min_leaf", "bootstrap", "n_jobs"}
_SYNTHETIC_KEYS = {"source", "size", "use_copula", "metadata", "nnaa_max_rows", "nnaa_bounds"}
_MITIGATION_KEYS = {"techniques", "floor", "reduction_grid"}


@dataclass(frozen=True)
class DatasetConfig:
    """Where the real data lives and how to read it."""
    path: Path
    columns: Dict[str, ColumnKind]
    label: str
    levels: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    level_names: Dict[str, Dict[str, str]] = field(default_factory=dict)
    positive_label: str = "1"
    negative_label: str = "0"
    preset: str = NO_PRESET
    delimiter: str = ","
    ignore_columns: Tuple[str, ...] = ()
    protected_feature: bool = True

    def schema(self, protected: str) -> Schema:
        """Schema for load_csv."""
        return Schema(dict(self.columns), self.label, protected, dict(self.levels),
                      dict(self.level_names), self.positive_label, self.negative_label,
                      tuple(self.ignore_columns), self.protected_feature)


@dataclass(frozen=True)
class SyntheticConfig:
    """Synthetic arm settings.

    Attributes:
        source: "surrogate" or the path of an external synthetic CSV
        size: Rows generated by the surrogate
        use_copula: Tie numeric columns with a Gaussian copula
        metadata: Free-form notes about the generator (epochs, version)
        nnaa_max_rows: Subsample cap for nnAA, None for no cap
        nnaa_bounds: Optional (low, high) range outside which nnAA is flagged
    """
    source: str = SURROGATE
    size: int = DEFAULT_SIZE
    use_copula: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)
    nnaa_max_rows: Optional[int] = DEFAULT_NNAA_ROWS
    nnaa_bounds: Optional[Tuple[float, float]] = None

    @property
    def is_surrogate(self) -> bool:
        """True when synthetic rows come from the built-in generator."""
        return self.source == SURROGATE


@dataclass(frozen=True)
class MitigationConfig:
    """Mitigations to run and their parameters."""
    techniques: Tuple[Technique, ...] = tuple(Technique)
    floor: float = DEFAULT_FLOOR
    reduction_grid: Tuple[float, ...] = DEFAULT_REDUCTION_GRID


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs."""
    dataset: DatasetConfig
    protected: ProtectedSpec
    forest: ForestConfig
    seeds: Tuple[int, ...] = DEFAULT_SEEDS
    split_ratio: float = DEFAULT_SPLIT_RATIO
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    output_dir: Path = Path("results")
    n_jobs: int = 1
    version: int = CONFIG_VERSION

    def with_seeds(self, seeds: Tuple[int, ...]) -> "ExperimentConfig":
        """Return a copy restricted to other seeds."""
        return replace(self, seeds=tuple(seeds))


def _require_mapping(value: Any, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{where}' must be a mapping")
    return value


def _require_list(value: Any, where: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ConfigError(f"'{where}' must be a list")
    return value


def _check_keys(section: Mapping, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {where}: {', '.join(map(str, unknown))}")


def _typed(value: Any, kind, where: str):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"'{where}' must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{where}' must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{where}' must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"'{where}' must be a string")
    return value


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def _parse_dataset(raw: dict, base: Path) -> DatasetConfig:
    _check_keys(raw, _DATASET_KEYS, "dataset")
    for key in ("path", "columns", "label"):
        if key not in raw:
            raise ConfigError(f"Missing required key 'dataset.{key}'")
    columns = {}
    for name, kind in _require_mapping(raw["columns"], "dataset.columns").items():
        try:
            columns[str(name)] = ColumnKind(kind)
        except ValueError:
            raise ConfigError(f"Column '{name}' has unknown kind '{kind}' (numeric or categorical)")
    levels = {str(k): tuple(str(v) for v in vs)
              for k, vs in _require_mapping(raw.get("levels"), "dataset.levels").items()}
    level_names = {str(k): {str(a): str(b) for a, b in _require_mapping(m, f"dataset.level_names.{k}").items()}
                   for k, m in _require_mapping(raw.get("level_names"), "dataset.level_names").items()}
    return DatasetConfig(
        path=_resolve(base, _typed(raw["path"], str, "dataset.path")),
        columns=columns,
        label=_typed(raw["label"], str, "dataset.label"),
        levels=levels,
        level_names=level_names,
        positive_label=str(raw.get("positive_label", "1")),
        negative_label=str(raw.get("negative_label", "0")),
        preset=_typed(raw.get("preset", NO_PRESET), str, "dataset.preset"),
        delimiter=_typed(raw.get("delimiter", ","), str, "dataset.delimiter"),
        ignore_columns=tuple(_typed(c, str, "dataset.ignore_columns")
                             for c in _require_list(raw.get("ignore_columns"), "dataset.ignore_columns")),
        protected_feature=_typed(raw.get("protected_feature", True), bool, "dataset.protected_feature"),
    )


def _parse_forest(raw: dict) -> ForestConfig:
    _check_keys(raw, _MODEL_KEYS, "model")
    values: Dict[str, Any] = {}
    preset = raw.get("preset")
    if preset is not None:
        if preset not in FOREST_PRESETS:
            raise ConfigError(f"Unknown model preset '{preset}' (choose from {sorted(FOREST_PRESETS)})")
        values.update(FOREST_PRESETS[preset])
    for key, kind in (("n_trees", int), ("min_leaf", int), ("bootstrap", bool), ("n_jobs", int)):
        if key in raw:
            values[key] = _typed(raw[key], kind, f"model.{key}")
    if "max_depth" in raw:
        values["max_depth"] = None if raw["max_depth"] is None else _typed(raw["max_depth"], int, "model.max_depth")
    if "max_features" in raw:
        mf = raw["max_features"]
        values["max_features"] = mf if mf is None or mf == AUTO else _typed(mf, int, "model.max_features")
    try:
        return ForestConfig(**values)
    except (AuditError, TypeError) as exc:
        raise ConfigError(f"Invalid model section: {exc}") from exc


def _parse_synthetic(raw: dict, base: Path) -> SyntheticConfig:
    _check_keys(raw, _SYNTHETIC_KEYS, "synthetic")
    source = _typed(raw.get("source", SURROGATE), str, "synthetic.source")
    if source != SURROGATE:
        source = str(_resolve(base, source))
    bounds = raw.get("nnaa_bounds")
    if bounds is not None:
        if not isinstance(bounds, list) or len(bounds) != 2:
            raise ConfigError("'synthetic.nnaa_bounds' must be a [low, high] pair")
        bounds = (_typed(bounds[0], float, "synthetic.nnaa_bounds"),
                  _typed(bounds[1], float, "synthetic.nnaa_bounds"))
    max_rows = raw.get("nnaa_max_rows", DEFAULT_NNAA_ROWS)
    return SyntheticConfig(
        source=source,
        size=_typed(raw.get("size", DEFAULT_SIZE), int, "synthetic.size"),
        use_copula=_typed(raw.get("use_copula", False), bool, "synthetic.use_copula"),
        metadata=dict(_require_mapping(raw.get("metadata"), "synthetic.metadata")),
        nnaa_max_rows=None if max_rows is None else _typed(max_rows, int, "synthetic.nnaa_max_rows"),
        nnaa_bounds=bounds,
    )


def _parse_mitigation(raw: dict) -> MitigationConfig:
    _check_keys(raw, _MITIGATION_KEYS, "mitigation")
    techniques = raw.get("techniques", [t.value for t in Technique])
    if not isinstance(techniques, list):
        raise ConfigError("'mitigation.techniques' must be a list")
    parsed = []
    for name in techniques:
        try:
            parsed.append(Technique(name))
        except ValueError:
            raise ConfigError(f"Unknown mitigation '{name}' (choose from {[t.value for t in Technique]})")
    grid = raw.get("reduction_grid", list(DEFAULT_REDUCTION_GRID))
    if not isinstance(grid, list):
        raise ConfigError("'mitigation.reduction_grid' must be a list")
    return MitigationConfig(
        techniques=tuple(parsed),
        floor=_typed(raw.get("floor", DEFAULT_FLOOR), float, "mitigation.floor"),
        reduction_grid=tuple(_typed(m, float, "mitigation.reduction_grid") for m in grid),
    )


def config_from_dict(raw: Mapping, base: Path = Path(".")) -> ExperimentConfig:
    """Build a config from a parsed YAML mapping.

    Args:
        raw: Parsed YAML document
        base: Directory relative paths resolve against

    Raises:
        ConfigError: Unknown key, missing key or wrong type
    """
    raw = _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"Unsupported config version {version} (expected {CONFIG_VERSION})")
    for key in ("dataset", "protected"):
        if key not in raw:
            raise ConfigError(f"Missing required section '{key}'")

    protected = _require_mapping(raw["protected"], "protected")
    _check_keys(protected, _PROTECTED_KEYS, "protected")
    try:
        pair = ProtectedSpec(*(str(protected[k]) for k in ("attribute", "group_a", "group_b")))
    except KeyError as exc:
        raise ConfigError(f"Missing required key 'protected.{exc.args[0]}'") from exc
    except DataError as exc:
        raise ConfigError(str(exc)) from exc

    seeds = raw.get("seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list):
        raise ConfigError("'seeds' must be a list of integers")

    return ExperimentConfig(
        dataset=_parse_dataset(_require_mapping(raw["dataset"], "dataset"), base),
        protected=pair,
        forest=_parse_forest(_require_mapping(raw.get("model"), "model")),
        seeds=tuple(_typed(s, int, "seeds") for s in seeds),
        split_ratio=_typed(raw.get("split_ratio", DEFAULT_SPLIT_RATIO), float, "split_ratio"),
        synthetic=_parse_synthetic(_require_mapping(raw.get("synthetic"), "synthetic"), base),
        mitigation=_parse_mitigation(_require_mapping(raw.get("mitigation"), "mitigation")),
        output_dir=_resolve(base, _typed(raw.get("output_dir", "results"), str, "output_dir")),
        n_jobs=_typed(raw.get("n_jobs", 1), int, "n_jobs"),
        version=version,
    )


def load_config(path) -> ExperimentConfig:
    """Read an experiment config from a YAML file.

    Raises:
        ConfigError: Missing file, YAML syntax error, unknown key or wrong type
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}") from exc
    config = config_from_dict(raw, path.resolve().parent)
    logger.debug("Loaded config %s", path)
    return config


def validate_config(config: ExperimentConfig) -> List[str]:
    """Check ranges, references and consistency.

    Returns:
        Problems found; empty when the config is valid
    """
    problems = []
    dataset = config.dataset
    if not dataset.path.is_file():
        problems.append(f"dataset.path does not exist: {dataset.path}")
    if dataset.preset not in PRESETS:
        problems.append(f"dataset.preset must be one of {list(PRESETS)}, got '{dataset.preset}'")
    for name in (dataset.label, config.protected.attribute):
        if name not in dataset.columns:
            problems.append(f"Column '{name}' is not declared in dataset.columns")
        elif dataset.columns[name] is not ColumnKind.CATEGORICAL:
            problems.append(f"Column '{name}' must be categorical")
    if dataset.label == config.protected.attribute:
        problems.append("Label and protected attribute must be different columns")
    if dataset.positive_label == dataset.negative_label:
        problems.append("positive_label and negative_label must differ")
    if len(dataset.delimiter) != 1:
        problems.append(f"dataset.delimiter must be a single character, got '{dataset.delimiter}'")
    for name in dataset.ignore_columns:
        if name in dataset.columns:
            problems.append(f"Column '{name}' is both declared and ignored")
    declared = dataset.levels.get(config.protected.attribute)
    if declared is not None:
        for group in (config.protected.group_a, config.protected.group_b):
            if group not in declared:
                problems.append(f"Group '{group}' is not a declared level of '{config.protected.attribute}'")

    if not config.seeds:
        problems.append("seeds must not be empty")
    if len(set(config.seeds)) != len(config.seeds):
        problems.append("seeds must be distinct")
    if any(s < 0 for s in config.seeds):
        problems.append("seeds must be non-negative")
    if not 0 < config.split_ratio < 1:
        problems.append(f"split_ratio must be in (0, 1), got {config.split_ratio}")
    if config.n_jobs == 0:
        problems.append("n_jobs must not be 0")

    synthetic = config.synthetic
    if synthetic.is_surrogate and synthetic.size < 1:
        problems.append(f"synthetic.size must be at least 1, got {synthetic.size}")
    if not synthetic.is_surrogate and not Path(synthetic.source).is_file():
        problems.append(f"synthetic.source does not exist: {synthetic.source}")
    if synthetic.nnaa_max_rows is not None and synthetic.nnaa_max_rows < 2:
        problems.append("synthetic.nnaa_max_rows must be at least 2")
    if synthetic.nnaa_bounds is not None and not 0 <= synthetic.nnaa_bounds[0] <= synthetic.nnaa_bounds[1] <= 1:
        problems.append("synthetic.nnaa_bounds must satisfy 0 <= low <= high <= 1")

    mitigation = config.mitigation
    if not 0 <= mitigation.floor <= 1:
        problems.append(f"mitigation.floor must be in [0, 1], got {mitigation.floor}")
    if Technique.REDUCTION in mitigation.techniques and not mitigation.reduction_grid:
        problems.append("mitigation.reduction_grid must not be empty")
    if len(set(mitigation.techniques)) != len(mitigation.techniques):
        problems.append("mitigation.techniques must be distinct")
    return problems


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain mapping of a config, for embedding in reports."""
    dataset = config.dataset
    return {
        "version": config.version,
        "dataset": {
            "path": str(dataset.path),
            "columns": {k: v.value for k, v in dataset.columns.items()},
            "label": dataset.label,
            "levels": {k: list(v) for k, v in dataset.levels.items()},
            "level_names": {k: dict(v) for k, v in dataset.level_names.items()},
            "positive_label": dataset.positive_label,
            "negative_label": dataset.negative_label,
            "preset": dataset.preset,
            "delimiter": dataset.delimiter,
            "ignore_columns": list(dataset.ignore_columns),
            "protected_feature": dataset.protected_feature,
        },
        "protected": asdict(config.protected),
        "model": {k: v for k, v in asdict(config.forest).items() if k != "seed"},
        "seeds": list(config.seeds),
        "split_ratio": config.split_ratio,
        "synthetic": {
            "source": config.synthetic.source,
            "size": config.synthetic.size,
            "use_copula": config.synthetic.use_copula,
            "metadata": dict(config.synthetic.metadata),
            "nnaa_max_rows": config.synthetic.nnaa_max_rows,
            "nnaa_bounds": None if config.synthetic.nnaa_bounds is None else list(config.synthetic.nnaa_bounds),
        },
        "mitigation": {
            "techniques": [t.value for t in config.mitigation.techniques],
            "floor": config.mitigation.floor,
            "reduction_grid": list(config.mitigation.reduction_grid),
        },
        "output_dir": str(config.output_dir),
        "n_jobs": config.n_jobs,
    }
