"""Multi-seed real-versus-synthetic fairness experiment and its aggregation."""

import logging
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from src.config import ExperimentConfig, config_to_dict
from src.dataset import (Table, apply_preset, load_csv, prevalence_rates, restrict_subgroups,
                         row_hash_counts, train_test_split)
from src.errors import DataError, RunFailure, ZeroVarianceError
from src.fairness import evaluate_predictions
from src.mitigation import (MitigationResult, Technique, apply_eo_threshold, apply_hps, apply_reweigh,
                            grid_reduction, hps_apply)
from src.model import TrainedForest, predict_labels, predict_scores, threshold_sweep, train_forest
from src.report import (ALL_METRICS, ARMS, BASELINE, ArmRecord, AuditReport, EvaluationRecord,
                        MitigationRecord, SeedRecord, scores_to_metrics, significance_rows)
from src.stats import paired_t_test, percent_change, summarize
from src.synthgen import fit_generator, generate, nn_adversarial_accuracy


logger = logging.getLogger(__name__)


def check_no_leakage(real: Table, fit_input: Table, test: Table) -> None:
    """Verify that no test row reached the generator's fitting input.

    Identical rows may legitimately sit on both sides of a split, so the
    check is on multiplicities: for every row content, its count in the
    fitting input plus its count in the test split cannot exceed its count
    in the full real table.

    Raises:
        DataError: If test rows leaked into the fitting input
    """
    total = row_hash_counts(real)
    fitted = row_hash_counts(fit_input)
    held_out = row_hash_counts(test)
    for key, count in fitted.items():
        if count + held_out.get(key, 0) > total.get(key, 0):
            raise DataError("Test rows leaked into the synthetic generator's fitting input")


def _cell_weights(result: MitigationResult, train: Table) -> Dict[str, float]:
    weights = result.instance_weights
    cells = {}
    for group, label, weight in zip(train.groups().tolist(), train.labels().tolist(), weights.tolist()):
        cells.setdefault(f"{group}|{label}", float(weight))
    return dict(sorted(cells.items()))


def _run_arm(config: ExperimentConfig, arm: str, train: Table, test: Table,
             seed: int) -> tuple:
    """Train one arm's baseline, evaluate it and run every configured mitigation."""
    pair = config.protected
    floor = config.mitigation.floor
    forest = config.forest.with_seed(seed)
    trainer = partial(train_forest, forest)

    y_train, g_train = train.labels(), train.groups()
    y_test, g_test = test.labels(), test.groups()

    model: TrainedForest = trainer(train)
    sweep = threshold_sweep(model.oob_scores, y_train)
    validation_preds = predict_labels(model.oob_scores, sweep.threshold)
    validation = evaluate_predictions(y_train, validation_preds, g_train, pair)
    test_scores = predict_scores(model, test)
    test_base = predict_labels(test_scores, sweep.threshold)
    baseline = ArmRecord(
        arm=arm,
        threshold=sweep.threshold,
        validation_balanced_accuracy=float(validation.balanced_accuracy),
        validation_metrics=scores_to_metrics(validation.scores),
        test=EvaluationRecord.from_evaluation(evaluate_predictions(y_test, test_base, g_test, pair)),
    )
    logger.info("Seed %d %s baseline: threshold %.2f, test balanced accuracy %.4f, EO %.4f",
                seed, arm, sweep.threshold, baseline.test.balanced_accuracy,
                baseline.test.metrics["equalized_odds"])

    source = f"M_{arm[0]}"
    records = []
    for technique in config.mitigation.techniques:
        cell_weights = None
        policy = None
        if technique is Technique.EO_THRESHOLD:
            result = apply_eo_threshold(model.oob_scores, y_train, g_train, pair, floor, source)
            test_preds = predict_labels(test_scores, result.threshold)
        elif technique is Technique.REWEIGH:
            result = apply_reweigh(trainer, train, pair, floor, source)
            test_preds = predict_labels(predict_scores(result.model, test), result.threshold)
            cell_weights = _cell_weights(result, train)
        elif technique is Technique.REDUCTION:
            result = grid_reduction(trainer, train, pair, config.mitigation.reduction_grid, floor,
                                    n_jobs=forest.n_jobs, scores_source=source)
            test_preds = predict_labels(predict_scores(result.model, test), result.threshold)
        else:
            result = apply_hps(validation_preds, y_train, g_train, pair, sweep.threshold, seed, source)
            test_preds = hps_apply(result.derived_predictor, test_base, g_test, seed)
            policy = result.derived_predictor.to_dict()

        if result.floor_unmet:
            logger.warning("Seed %d %s %s: balanced accuracy floor %.2f not met",
                           seed, arm, technique.value, floor)
        records.append(MitigationRecord(
            technique=technique.value,
            arm=arm,
            scores_source=result.scores_source,
            threshold=result.threshold,
            floor_unmet=bool(result.floor_unmet),
            validation_balanced_accuracy=float(result.balanced_accuracy),
            validation_metrics=scores_to_metrics(result.fairness),
            test=EvaluationRecord.from_evaluation(evaluate_predictions(y_test, test_preds, g_test, pair)),
            multiplier=result.multiplier,
            cell_weights=cell_weights,
            policy=policy,
        ))
    return baseline, records


def run_seed(config: ExperimentConfig, real: Table, seed: int,
             external: Optional[Table] = None) -> SeedRecord:
    """Run the full pipeline for one seed.

    Split the real table, obtain synthetic rows fitted on the training split
    only, train M_r and M_s, evaluate both on the real test split and run the
    configured mitigations on both arms.

    Args:
        config: Experiment config
        real: Raw real table
        seed: Split, generator and forest seed
        external: Externally generated synthetic table, if configured

    Returns:
        SeedRecord

    Raises:
        RunFailure: Wrapping whatever made the seed fail
    """
    try:
        return _run_seed(config, real, seed, external)
    except RunFailure:
        raise
    except Exception as exc:
        raise RunFailure(seed, exc) from exc


def _run_seed(config: ExperimentConfig, real: Table, seed: int,
              external: Optional[Table]) -> SeedRecord:
    pair = config.protected
    synthetic = config.synthetic
    split = train_test_split(real, seed, config.split_ratio)

    if external is None:
        fit_input = split.train
        check_no_leakage(real, fit_input, split.test)
        generator = fit_generator(fit_input, synthetic.use_copula, seed)
        synth_raw = generate(generator, synthetic.size, seed)
    else:
        synth_raw = external

    nnaa = nn_adversarial_accuracy(split.train, synth_raw, synthetic.nnaa_max_rows, seed)
    in_bounds = None
    if synthetic.nnaa_bounds is not None:
        low, high = synthetic.nnaa_bounds
        in_bounds = bool(low <= nnaa <= high)
        if not in_bounds:
            logger.warning("Seed %d: nnAA %.4f outside configured bounds [%g, %g]", seed, nnaa, low, high)

    prevalence = {
        "real": prevalence_rates(split.train, pair.attribute),
        "synthetic": prevalence_rates(synth_raw, pair.attribute),
    }

    preset = config.dataset.preset
    train_real = restrict_subgroups(apply_preset(split.train, preset), pair)
    test = restrict_subgroups(apply_preset(split.test, preset), pair)
    train_synth = restrict_subgroups(apply_preset(synth_raw, preset), pair)

    baselines = {}
    mitigations: List[MitigationRecord] = []
    for arm, train in zip(ARMS, (train_real, train_synth)):
        baseline, records = _run_arm(config, arm, train, test, seed)
        baselines[arm] = baseline
        mitigations.extend(records)

    logger.info("Seed %d done: nnAA %.4f", seed, nnaa)
    return SeedRecord(
        seed=seed,
        sizes={"real_train": len(train_real), "real_test": len(test), "synthetic": len(train_synth)},
        prevalence=prevalence,
        baselines=baselines,
        mitigations=mitigations,
        nnaa=nnaa,
        nnaa_in_bounds=in_bounds,
    )


def _t_test(a: Sequence[float], b: Sequence[float], what: str) -> Optional[dict]:
    """Paired t-test as a dict, or None when it is undefined."""
    try:
        return paired_t_test(a, b).to_dict()
    except ZeroVarianceError:
        logger.info("No t-test for %s: differences have zero variance", what)
    except DataError as exc:
        logger.info("No t-test for %s: %s", what, exc)
    return None


def aggregate(records: Sequence[SeedRecord], techniques: Sequence[str]) -> dict:
    """Aggregate per-seed records.

    Returns a mapping with:
      seeds: seeds in order
      prevalence: per level, mean rates of both arms, percent change and a
        paired t-test real vs synthetic
      nnaa: summary of the per-seed nnAA
      results: per technique (baseline included), arm and metric, the
        summary of test values
      real_vs_synthetic: per technique and metric, paired t-test real vs synthetic
      vs_baseline: per technique, arm and metric, paired t-test technique vs
        the arm's baseline
      floor_unmet: per technique and arm, the number of seeds missing the floor

    Args:
        records: Per-seed records ordered by seed
        techniques: Technique names that were run

    Raises:
        DataError: If there are no records
    """
    if not records:
        raise DataError("Nothing to aggregate: no seed records")
    names = [BASELINE] + list(techniques)

    def values(technique: str, arm: str, metric: str) -> List[float]:
        return [r.result(technique, arm).test.value(metric) for r in records]

    levels: List[str] = []
    for record in records:
        for arm in ARMS:
            levels += [lv for lv in record.prevalence[arm] if lv not in levels]
    prevalence = {}
    for level in levels:
        real = [r.prevalence["real"].get(level, 0.0) for r in records]
        synth = [r.prevalence["synthetic"].get(level, 0.0) for r in records]
        real_mean, synth_mean = float(np.mean(real)), float(np.mean(synth))
        prevalence[level] = {
            "real_mean": real_mean,
            "synthetic_mean": synth_mean,
            "change_pct": None if real_mean == 0 else percent_change(real_mean, synth_mean),
            "t_test": _t_test(real, synth, f"prevalence of {level}"),
        }

    results = {name: {arm: {m: summarize(values(name, arm, m)).to_dict() for m in ALL_METRICS}
                      for arm in ARMS} for name in names}
    real_vs_synthetic = {
        name: {m: _t_test(values(name, "real", m), values(name, "synthetic", m), f"{name} {m} real vs synthetic")
               for m in ALL_METRICS}
        for name in names
    }
    vs_baseline = {
        name: {arm: {m: _t_test(values(name, arm, m), values(BASELINE, arm, m), f"{name} {arm} {m} vs baseline")
                     for m in ALL_METRICS}
               for arm in ARMS}
        for name in techniques
    }
    floor_unmet = {name: {arm: sum(r.result(name, arm).floor_unmet for r in records) for arm in ARMS}
                   for name in techniques}
    return {
        "seeds": [r.seed for r in records],
        "prevalence": prevalence,
        "nnaa": summarize([r.nnaa for r in records]).to_dict(),
        "results": results,
        "real_vs_synthetic": real_vs_synthetic,
        "vs_baseline": vs_baseline,
        "floor_unmet": floor_unmet,
    }


def build_report(config_dict: dict, techniques: Sequence[str], records: Sequence[SeedRecord]) -> AuditReport:
    """Assemble a report from ordered records."""
    records = sorted(records, key=lambda r: r.seed)
    summary = aggregate(records, techniques)
    return AuditReport(
        config=config_dict,
        techniques=list(techniques),
        records=list(records),
        aggregate=summary,
        significance=significance_rows(summary, techniques),
    )


def load_external_synthetic(config: ExperimentConfig) -> Table:
    """Load an externally generated synthetic CSV with the real schema.

    The file is audited as supplied; its size is logged but not truncated.

    Raises:
        DataError: If the file is empty or does not match the schema
    """
    schema = config.dataset.schema(config.protected.attribute)
    table = load_csv(config.synthetic.source, schema, config.dataset.delimiter)
    if len(table) == 0:
        raise DataError(f"External synthetic file is empty: {config.synthetic.source}")
    if len(table) != config.synthetic.size:
        logger.info("External synthetic file has %d rows (configured size %d)", len(table), config.synthetic.size)
    return table


def run_experiment(config: ExperimentConfig) -> AuditReport:
    """Run every configured seed and aggregate the results.

    Seeds run as independent joblib jobs; records are merged in seed order,
    so the report does not depend on n_jobs.

    Raises:
        RunFailure: Naming the first failing seed
        DataError: If the real data cannot be loaded
    """
    real = load_csv(config.dataset.path, config.dataset.schema(config.protected.attribute),
                    config.dataset.delimiter)
    external = None if config.synthetic.is_surrogate else load_external_synthetic(config)
    seeds = sorted(config.seeds)
    logger.info("Running %d seed(s) on %d real rows", len(seeds), len(real))

    records = Parallel(n_jobs=config.n_jobs)(
        delayed(run_seed)(config, real, seed, external) for seed in seeds
    )
    techniques = [t.value for t in config.mitigation.techniques]
    return build_report(config_to_dict(config), techniques, records)


def reaggregate(report: AuditReport) -> AuditReport:
    """Recompute aggregates and the significance table from stored records."""
    return build_report(report.config, report.techniques, report.records)
