"""Tests for experiment configuration loading and validation."""

import textwrap
from pathlib import Path

import pytest

from src.config import (
    DEFAULT_SEEDS,
    SURROGATE,
    config_from_dict,
    config_to_dict,
    load_config,
    validate_config,
)
from src.dataset import ColumnKind, ProtectedSpec
from src.errors import ConfigError
from src.mitigation import DEFAULT_FLOOR, DEFAULT_REDUCTION_GRID, Technique


MINIMAL = textwrap.dedent("""\
    dataset:
      path: data.csv
      columns:
        age: numeric
        gender: categorical
        cardio: categorical
      label: cardio
    protected:
      attribute: gender
      group_a: Female
      group_b: Male
""")


def raw_config(**overrides):
    raw = {
        "dataset": {"path": "data.csv", "label": "cardio",
                    "columns": {"age": "numeric", "gender": "categorical", "cardio": "categorical"}},
        "protected": {"attribute": "gender", "group_a": "Female", "group_b": "Male"},
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def config_file(tmp_path):
    (tmp_path / "data.csv").write_text("age,gender,cardio\n50,Female,1\n", encoding="utf-8")
    path = tmp_path / "experiment.yaml"
    path.write_text(MINIMAL, encoding="utf-8")
    return path


class TestLoading:
    """Test suite for reading YAML configs."""

    def test_minimal_config_defaults(self, config_file):
        """Omitted sections take their defaults."""
        config = load_config(config_file)

        assert config.seeds == DEFAULT_SEEDS
        assert config.split_ratio == 0.7
        assert config.protected == ProtectedSpec("gender", "Female", "Male")
        assert config.dataset.columns["age"] is ColumnKind.NUMERIC
        assert config.synthetic.source == SURROGATE
        assert config.synthetic.nnaa_max_rows == 5000
        assert config.mitigation.techniques == tuple(Technique)
        assert config.mitigation.floor == DEFAULT_FLOOR
        assert config.mitigation.reduction_grid == DEFAULT_REDUCTION_GRID
        assert validate_config(config) == []

    def test_paths_resolve_against_config_directory(self, config_file):
        """Relative paths are relative to the config file, not the working directory."""
        config = load_config(config_file)
        assert config.dataset.path == (config_file.parent / "data.csv").resolve()
        assert config.output_dir == (config_file.parent / "results").resolve()

    def test_missing_file(self, tmp_path):
        """A missing config file is a config error."""
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        """Broken YAML is a config error."""
        path = tmp_path / "broken.yaml"
        path.write_text("dataset: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="Invalid YAML"):
            load_config(path)

    def test_bundled_cardio_config(self):
        """The shipped cardio config uses the published floor and synthetic size."""
        config = load_config(Path(__file__).resolve().parent.parent / "configs" / "cardio.yaml")

        assert config.mitigation.floor == DEFAULT_FLOOR == 0.58
        assert config.synthetic.size == 100_000
        assert config.dataset.delimiter == ";"
        assert config.dataset.ignore_columns == ("id",)

    def test_default_reduction_grid(self):
        """Eleven evenly spaced multipliers from -1 to 1."""
        assert len(DEFAULT_REDUCTION_GRID) == 11
        assert DEFAULT_REDUCTION_GRID[0] == -1.0
        assert DEFAULT_REDUCTION_GRID[5] == 0.0
        assert DEFAULT_REDUCTION_GRID[-1] == 1.0


class TestParsing:
    """Test suite for config_from_dict."""

    def test_unknown_top_level_key(self):
        """Unknown keys are rejected, not ignored."""
        with pytest.raises(ConfigError, match="Unknown key.*seed_list"):
            config_from_dict(raw_config(seed_list=[1]))

    def test_unknown_nested_key(self):
        """Unknown keys inside a section are rejected too."""
        with pytest.raises(ConfigError, match="model"):
            config_from_dict(raw_config(model={"trees": 10}))

    def test_missing_sections(self):
        """dataset and protected are required."""
        with pytest.raises(ConfigError, match="protected"):
            config_from_dict({"dataset": raw_config()["dataset"]})
        with pytest.raises(ConfigError, match="protected.group_b"):
            config_from_dict(raw_config(protected={"attribute": "gender", "group_a": "Female"}))

    def test_identical_groups(self):
        """group_a and group_b must differ."""
        with pytest.raises(ConfigError, match="differ"):
            config_from_dict(raw_config(protected={"attribute": "gender", "group_a": "x", "group_b": "x"}))

    def test_wrong_types(self):
        """Scalars are type-checked."""
        with pytest.raises(ConfigError, match="seeds"):
            config_from_dict(raw_config(seeds=["one"]))
        with pytest.raises(ConfigError, match="n_trees"):
            config_from_dict(raw_config(model={"n_trees": "many"}))
        with pytest.raises(ConfigError, match="use_copula"):
            config_from_dict(raw_config(synthetic={"use_copula": "yes"}))

    def test_unknown_column_kind(self):
        """Column kinds are numeric or categorical."""
        raw = raw_config()
        raw["dataset"]["columns"]["age"] = "ordinal"
        with pytest.raises(ConfigError, match="ordinal"):
            config_from_dict(raw)

    def test_unsupported_version(self):
        """Only the current config version is accepted."""
        with pytest.raises(ConfigError, match="version"):
            config_from_dict(raw_config(version=2))

    @pytest.mark.parametrize("preset, trees, features, depth", [
        ("cardio", 100, 10, None),
        ("mimic", 20, "auto", 5),
    ])
    def test_model_presets(self, preset, trees, features, depth):
        """Presets fill in the forest hyperparameters."""
        forest = config_from_dict(raw_config(model={"preset": preset})).forest
        assert (forest.n_trees, forest.max_features, forest.max_depth) == (trees, features, depth)

    def test_preset_overrides(self):
        """Explicit keys win over the preset."""
        forest = config_from_dict(raw_config(model={"preset": "mimic", "n_trees": 7})).forest
        assert forest.n_trees == 7
        assert forest.max_depth == 5

    def test_unknown_preset(self):
        """Unknown presets are config errors."""
        with pytest.raises(ConfigError, match="preset"):
            config_from_dict(raw_config(model={"preset": "giant"}))

    def test_invalid_forest_values(self):
        """Out-of-range hyperparameters surface as config errors."""
        with pytest.raises(ConfigError, match="n_trees"):
            config_from_dict(raw_config(model={"n_trees": 0}))

    def test_techniques(self):
        """Technique names map onto the enum; unknown ones are rejected."""
        config = config_from_dict(raw_config(mitigation={"techniques": ["hps", "reweigh"]}))
        assert config.mitigation.techniques == (Technique.HPS, Technique.REWEIGH)
        with pytest.raises(ConfigError, match="lagrangian"):
            config_from_dict(raw_config(mitigation={"techniques": ["lagrangian"]}))

    def test_nnaa_bounds(self):
        """Bounds are a two-element list."""
        config = config_from_dict(raw_config(synthetic={"nnaa_bounds": [0.4, 0.6]}))
        assert config.synthetic.nnaa_bounds == (0.4, 0.6)
        with pytest.raises(ConfigError, match="nnaa_bounds"):
            config_from_dict(raw_config(synthetic={"nnaa_bounds": 0.5}))

    def test_delimiter(self):
        """The CSV delimiter defaults to a comma."""
        assert config_from_dict(raw_config()).dataset.delimiter == ","
        raw = raw_config()
        raw["dataset"]["delimiter"] = ";"
        assert config_from_dict(raw).dataset.delimiter == ";"

    def test_ignore_columns(self, tmp_path):
        """Ignored columns are dropped on load and may not also be declared."""
        raw = raw_config()
        raw["dataset"]["ignore_columns"] = ["id"]
        config = config_from_dict(raw, tmp_path)
        assert config.dataset.schema("gender").ignored == ("id",)
        raw["dataset"]["ignore_columns"] = ["age"]
        assert any("both declared and ignored" in p for p in validate_config(config_from_dict(raw, tmp_path)))
        with pytest.raises(ConfigError, match="ignore_columns"):
            config_from_dict(raw_config(dataset={**raw_config()["dataset"], "ignore_columns": "id"}))

    def test_protected_feature(self):
        """The protected column is a model feature unless switched off."""
        assert config_from_dict(raw_config()).dataset.schema("gender").protected_feature is True
        raw = raw_config()
        raw["dataset"]["protected_feature"] = False
        assert config_from_dict(raw).dataset.schema("gender").protected_feature is False
        raw["dataset"]["protected_feature"] = "no"
        with pytest.raises(ConfigError, match="protected_feature"):
            config_from_dict(raw)

    def test_with_seeds(self):
        """Seed subsets replace the seed list only."""
        config = config_from_dict(raw_config(seeds=[1, 2, 3]))
        subset = config.with_seeds([2])
        assert subset.seeds == (2,)
        assert subset.forest == config.forest


class TestValidation:
    """Test suite for validate_config."""

    def test_reports_every_problem(self, tmp_path):
        """All problems are collected, not just the first."""
        raw = raw_config(seeds=[1, 1], split_ratio=1.5, mitigation={"floor": 2.0})
        problems = validate_config(config_from_dict(raw, tmp_path))

        assert any("dataset.path" in p for p in problems)
        assert any("distinct" in p for p in problems)
        assert any("split_ratio" in p for p in problems)
        assert any("floor" in p for p in problems)

    def test_label_must_be_categorical(self, tmp_path):
        """The label column has to be categorical."""
        raw = raw_config()
        raw["dataset"]["columns"]["cardio"] = "numeric"
        problems = validate_config(config_from_dict(raw, tmp_path))
        assert any("'cardio' must be categorical" in p for p in problems)

    def test_groups_must_be_declared_levels(self, tmp_path):
        """When levels are declared, both groups must be among them."""
        raw = raw_config()
        raw["dataset"]["levels"] = {"gender": ["Female", "Other"]}
        problems = validate_config(config_from_dict(raw, tmp_path))
        assert any("'Male'" in p for p in problems)

    def test_missing_external_synthetic(self, tmp_path):
        """An external synthetic source must exist."""
        config = config_from_dict(raw_config(synthetic={"source": "synth.csv"}), tmp_path)
        assert not config.synthetic.is_surrogate
        assert any("synthetic.source" in p for p in validate_config(config))

    def test_empty_reduction_grid(self, tmp_path):
        """Reduction needs at least one multiplier."""
        config = config_from_dict(raw_config(mitigation={"reduction_grid": []}), tmp_path)
        assert any("reduction_grid" in p for p in validate_config(config))


class TestSerialization:
    """Test suite for config_to_dict."""

    def test_plain_values(self, config_file):
        """The dict form holds only plain values and round-trips through config_from_dict."""
        config = load_config(config_file)
        data = config_to_dict(config)

        assert data["dataset"]["columns"]["gender"] == "categorical"
        assert data["mitigation"]["techniques"] == ["eo_threshold", "reweigh", "reduction", "hps"]
        assert data["protected"] == {"attribute": "gender", "group_a": "Female", "group_b": "Male"}
        assert config_from_dict(data, config_file.parent) == config
