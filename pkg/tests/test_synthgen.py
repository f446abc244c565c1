"""Tests for the surrogate generator, planted-bias fixtures and nnAA."""

import logging

import numpy as np
import pytest
from scipy import stats as scipy_stats

from src.dataset import ColumnKind, FeatureMap, ProtectedSpec, table_from_columns
from src.errors import DataError, InfeasibleSpecError, SchemaError
from src.fairness import evaluate_predictions
from src.model import ForestConfig, predict_labels, predict_scores, threshold_sweep, train_forest
from src.synthgen import (
    PlantedBiasSpec,
    bayes_cutoff,
    bayes_rates,
    fit_generator,
    generate,
    make_planted_bias,
    nn_adversarial_accuracy,
    resolve_planted_bias,
)


KINDS = {"x": ColumnKind.NUMERIC, "z": ColumnKind.NUMERIC, "color": ColumnKind.CATEGORICAL,
         "g": ColumnKind.CATEGORICAL, "y": ColumnKind.CATEGORICAL}


def mixed_table(n=1000, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) + shift
    return table_from_columns(
        {"x": x, "z": x + rng.normal(0, 0.1, size=n),
         "color": rng.choice(["red", "green", "blue"], size=n, p=[0.5, 0.3, 0.2]),
         "g": rng.choice(["a", "b"], size=n, p=[0.6, 0.4]),
         "y": (rng.random(n) < 0.3).astype(int)},
        KINDS, label="y", protected="g",
    )


class TestGenerator:
    """Test suite for fit_generator and generate."""

    def test_schema_and_size(self):
        """Synthetic rows carry the training schema and level sets."""
        train = mixed_table()
        synth = generate(fit_generator(train), n=500, seed=1)

        assert len(synth) == 500
        assert synth.kinds == train.kinds
        assert synth.levels == train.levels
        assert set(synth.frame["color"]) <= {"red", "green", "blue"}

    def test_numeric_values_are_observed_values(self):
        """Numeric draws come from the empirical distribution."""
        train = mixed_table(200)
        synth = generate(fit_generator(train), n=1000, seed=2)
        assert set(synth.frame["x"]) <= set(train.frame["x"])

    def test_frequencies_preserved(self):
        """Group, label and categorical frequencies match the training rows."""
        train = mixed_table(5000)
        synth = generate(fit_generator(train), n=20_000, seed=3)

        for column in ("color", "g", "y"):
            real = train.frame[column].value_counts(normalize=True)
            fake = synth.frame[column].value_counts(normalize=True)
            for level in real.index:
                assert fake[level] == pytest.approx(real[level], abs=0.02)

    def test_label_rate_per_group_preserved(self):
        """Stratified sampling keeps P(y | g)."""
        train = mixed_table(5000)
        synth = generate(fit_generator(train), n=20_000, seed=4)
        for group in ("a", "b"):
            real = train.labels()[train.groups() == group].mean()
            fake = synth.labels()[synth.groups() == group].mean()
            assert fake == pytest.approx(real, abs=0.02)

    def test_one_row_table(self):
        """A single training row is reproduced verbatim."""
        train = mixed_table(1)
        synth = generate(fit_generator(train), n=5, seed=0)
        assert synth.rows == train.rows * 5

    def test_deterministic_for_seed(self):
        """Same seed, same rows; different seed, different rows."""
        generator = fit_generator(mixed_table())
        first = generate(generator, n=300, seed=7)
        assert first.frame.equals(generate(generator, n=300, seed=7).frame)
        assert not first.frame.equals(generate(generator, n=300, seed=8).frame)

    def test_copula_keeps_dependence(self):
        """With the copula, strongly correlated columns stay correlated."""
        train = mixed_table(2000)
        independent = generate(fit_generator(train), n=5000, seed=1)
        tied = generate(fit_generator(train, use_copula=True), n=5000, seed=1)

        assert np.corrcoef(tied.frame["x"], tied.frame["z"])[0, 1] > 0.9
        assert abs(np.corrcoef(independent.frame["x"], independent.frame["z"])[0, 1]) < 0.1

    def test_constant_column_left_out_of_copula(self, caplog):
        """A constant numeric column is skipped with a warning."""
        train = mixed_table(100)
        frame = train.frame.copy()
        frame["z"] = 1.0
        train = train.with_frame(frame)
        with caplog.at_level(logging.WARNING, logger="src.synthgen"):
            generator = fit_generator(train, use_copula=True)

        assert generator.copula_columns == ("x",)
        assert "constant" in caplog.text
        assert set(generate(generator, n=50).frame["z"]) == {1.0}

    def test_invalid_sizes(self):
        """Empty training data and non-positive sizes are rejected."""
        train = mixed_table(10)
        with pytest.raises(DataError):
            fit_generator(train.take([]))
        with pytest.raises(DataError, match="at least 1"):
            generate(fit_generator(train), n=0)


class TestPlantedBias:
    """Test suite for planted-bias fixtures."""

    def test_equal_strengths_have_equal_tpr(self):
        """Equal signal strengths: no Bayes gap, even with different positive rates."""
        spec = PlantedBiasSpec(positive_rates=(0.5, 0.15), signal_strengths=(2.0, 2.0))
        rates = bayes_rates(spec)

        assert bayes_cutoff(spec) == pytest.approx(1.0)
        assert rates["A"] == pytest.approx(rates["B"])
        assert rates["A"][0] == pytest.approx(scipy_stats.norm.cdf(1.0))

    def test_cutoff_maximizes_balanced_accuracy(self):
        """Moving the shared cutoff either way lowers the pooled balanced accuracy."""
        spec = PlantedBiasSpec(positive_rates=(0.5, 0.15), signal_strengths=(3.0, 1.5))
        shares = np.array([0.5 * 0.5, 0.5 * 0.15])
        shares /= shares.sum()

        def pooled_ba(c):
            tpr = sum(w * scipy_stats.norm.sf(c - s) for w, s in zip(shares, spec.signal_strengths))
            return (tpr + scipy_stats.norm.cdf(c)) / 2

        cutoff = bayes_cutoff(spec)
        assert 0.75 <= cutoff <= 1.5
        for delta in (-0.05, 0.05):
            assert pooled_ba(cutoff) > pooled_ba(cutoff + delta)

    def test_calibrated_gap(self):
        """The solved group_a strength reaches the target TPR gap; positive rates are kept."""
        spec = PlantedBiasSpec(positive_rates=(0.5, 0.15), target_delta_tpr=0.2)
        resolved = resolve_planted_bias(spec)
        rates = bayes_rates(resolved)

        assert rates["A"][0] - rates["B"][0] == pytest.approx(0.2, abs=1e-8)
        assert rates["A"][1] == rates["B"][1]
        assert resolved.positive_rates == (0.5, 0.15)
        assert resolved.signal_strengths[1] == 2.0
        assert resolved.signal_strengths[0] > 2.0

    def test_negative_gap_weakens_group_a(self):
        """A negative target gives group_a the weaker signal."""
        resolved = resolve_planted_bias(PlantedBiasSpec(target_delta_tpr=-0.1))
        rates = bayes_rates(resolved)

        assert rates["A"][0] - rates["B"][0] == pytest.approx(-0.1, abs=1e-8)
        assert resolved.signal_strengths[0] < 2.0

    def test_unreachable_gap(self):
        """A gap beyond what the signal allows is infeasible."""
        spec = PlantedBiasSpec(positive_rates=(0.5, 0.15), target_delta_tpr=0.9)
        with pytest.raises(InfeasibleSpecError):
            resolve_planted_bias(spec)

    def test_invalid_spec(self):
        """Prevalences must sum to one and strengths be positive."""
        with pytest.raises(InfeasibleSpecError, match="sum"):
            PlantedBiasSpec(prevalences=(0.5, 0.6)).validate()
        with pytest.raises(InfeasibleSpecError, match="Signal"):
            PlantedBiasSpec(signal_strengths=(2.0, 0.0)).validate()
        with pytest.raises(InfeasibleSpecError, match="strictly"):
            bayes_rates(PlantedBiasSpec(positive_rates=(0.0, 0.3)))

    def test_dataset_layout(self):
        """Columns and group shares follow the fixture; the group is no model feature."""
        spec = PlantedBiasSpec(prevalences=(0.65, 0.35), n_noise=3)
        table = make_planted_bias(spec, 20_000, seed=1)

        assert table.column_names == ["group", "signal", "noise_1", "noise_2", "noise_3", "label"]
        assert (table.groups() == "A").mean() == pytest.approx(0.65, abs=0.02)
        assert table.levels["label"] == ("0", "1")
        assert table.protected_feature is False
        assert "group" not in FeatureMap.from_table(table).columns

    def test_deterministic_for_seed(self):
        """Same seed, same table."""
        spec = PlantedBiasSpec()
        assert make_planted_bias(spec, 100, 5).frame.equals(make_planted_bias(spec, 100, 5).frame)

    def test_bayes_rates_match_cutoff_rule(self):
        """Predicting positive above the shared cutoff reproduces the Bayes rates."""
        spec = resolve_planted_bias(PlantedBiasSpec(positive_rates=(0.5, 0.15), target_delta_tpr=0.2))
        table = make_planted_bias(spec, 200_000, seed=2)
        preds = table.frame["signal"].to_numpy() >= bayes_cutoff(spec)
        y = table.labels()
        g = table.groups()
        expected = bayes_rates(spec)

        for name in spec.groups:
            rows = g == name
            assert preds[rows & (y == 1)].mean() == pytest.approx(expected[name][0], abs=0.015)
            assert preds[rows & (y == 0)].mean() == pytest.approx(expected[name][1], abs=0.015)

    def test_trained_model_has_no_gap_at_equal_strengths(self):
        """A forest trained on equal-strength data shows no equal opportunity gap."""
        spec = PlantedBiasSpec(positive_rates=(0.5, 0.15), signal_strengths=(2.0, 2.0))
        train = make_planted_bias(spec, 10_000, seed=3)
        test = make_planted_bias(spec, 20_000, seed=4)
        model = train_forest(ForestConfig(n_trees=30, seed=3, min_leaf=50, max_features=None), train)
        threshold = threshold_sweep(model.oob_scores, train.labels()).threshold

        preds = predict_labels(predict_scores(model, test), threshold)
        result = evaluate_predictions(test.labels(), preds, test.groups(), ProtectedSpec("group", "A", "B"))
        assert result.scores.equal_opportunity_difference == pytest.approx(0.0, abs=0.05)



class TestNnaa:
    """Test suite for nearest-neighbor adversarial accuracy."""

    def test_exact_copy_scores_zero(self):
        """Every row has a zero-distance twin on the other side."""
        real = mixed_table(300)
        assert nn_adversarial_accuracy(real, real.take(range(300))) == 0.0

    def test_same_distribution_near_half(self):
        """Independent samples of one distribution are indistinguishable."""
        score = nn_adversarial_accuracy(mixed_table(2000, seed=1), mixed_table(2000, seed=2))
        assert score == pytest.approx(0.5, abs=0.05)

    def test_shifted_distribution_near_one(self):
        """A far-shifted copy is trivially distinguishable."""
        score = nn_adversarial_accuracy(mixed_table(500, seed=1), mixed_table(500, seed=2, shift=50.0))
        assert score >= 0.99

    def test_row_cap(self):
        """Subsampling is deterministic for a seed and stays in [0, 1]."""
        real, synth = mixed_table(800, seed=1), mixed_table(1200, seed=2)
        first = nn_adversarial_accuracy(real, synth, max_rows=300, seed=4)
        assert first == nn_adversarial_accuracy(real, synth, max_rows=300, seed=4)
        assert 0.0 <= first <= 1.0

    def test_too_few_rows(self):
        """One row per side is not enough."""
        with pytest.raises(DataError, match="at least two rows"):
            nn_adversarial_accuracy(mixed_table(1), mixed_table(10))

    def test_schema_mismatch(self):
        """Tables must share a schema."""
        other = table_from_columns(
            {"x": [0.0, 1.0], "g": ["a", "b"], "y": [0, 1]},
            {"x": ColumnKind.NUMERIC, "g": ColumnKind.CATEGORICAL, "y": ColumnKind.CATEGORICAL},
            label="y", protected="g",
        )
        with pytest.raises(SchemaError):
            nn_adversarial_accuracy(mixed_table(10), other)
