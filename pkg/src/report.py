"""Audit report records, JSON round trip and CSV outputs."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.errors import AuditError, DataError
from src.fairness import METRICS, Evaluation, FairnessScores, fairness_band
from src.stats import summarize


logger = logging.getLogger(__name__)

REPORT_FORMAT = "fairaudit-report"
REPORT_VERSION = 1
REPORT_FILE = "report.json"

BALANCED_ACCURACY = "balanced_accuracy"
ALL_METRICS = (BALANCED_ACCURACY,) + METRICS
SIGNIFICANCE_METRICS = (BALANCED_ACCURACY, "average_odds_difference",
                        "equal_opportunity_difference", "equalized_odds")
ARMS = ("real", "synthetic")
BASELINE = "baseline"
RESPECTIVE_BASELINE = "respective_baseline"
COUNTERPART_ARM = "counterpart_arm"

PREVALENCE_HEADER = ["group", "real_rate", "synthetic_rate", "change_pct", "t_statistic", "p_value",
                     "significant"]
SIGNIFICANCE_HEADER = (["comparison", "technique", "arm"]
                       + [f"{m}_p" for m in SIGNIFICANCE_METRICS]
                       + [f"{m}_sig" for m in SIGNIFICANCE_METRICS])
SCATTER_HEADER = ["seed", "metric", "real_value", "synthetic_value", "real_balanced_accuracy",
                  "synthetic_balanced_accuracy"]
BOXPLOT_HEADER = ["technique", "arm", "metric", "mean", "sd", "min", "q1", "median", "q3", "max"]
TRADEOFF_HEADER = ["technique", "arm", "seed", "balanced_accuracy", "equalized_odds",
                   "average_odds_difference", "equal_opportunity_difference"]


@dataclass(frozen=True)
class EvaluationRecord:
    """Test-split utility, fairness, fair bands and per-group rates."""
    balanced_accuracy: float
    metrics: Dict[str, float]
    bands: Dict[str, str]
    rates: List[dict]

    @classmethod
    def from_evaluation(cls, evaluation: Evaluation) -> "EvaluationRecord":
        """Freeze an Evaluation into plain values."""
        return cls(
            balanced_accuracy=float(evaluation.balanced_accuracy),
            metrics={m: float(v) for m, v in evaluation.scores.to_dict().items()},
            bands={m: b.value for m, b in fairness_band(evaluation.scores).items()},
            rates=[r.to_dict() for r in evaluation.rates],
        )

    def value(self, metric: str) -> float:
        """Balanced accuracy or a fairness metric by name."""
        return self.balanced_accuracy if metric == BALANCED_ACCURACY else self.metrics[metric]

    def to_dict(self) -> dict:
        """Plain mapping."""
        return {"balanced_accuracy": self.balanced_accuracy, "metrics": dict(self.metrics),
                "bands": dict(self.bands), "rates": [dict(r) for r in self.rates]}

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationRecord":
        """Rebuild from to_dict output."""
        return cls(data["balanced_accuracy"], dict(data["metrics"]), dict(data["bands"]),
                   [dict(r) for r in data["rates"]])


def scores_to_metrics(scores: FairnessScores) -> Dict[str, float]:
    """Fairness scores as a plain float mapping."""
    return {m: float(v) for m, v in scores.to_dict().items()}


@dataclass(frozen=True)
class ArmRecord:
    """Baseline model of one arm (M_r or M_s)."""
    arm: str
    threshold: float
    validation_balanced_accuracy: float
    validation_metrics: Dict[str, float]
    test: EvaluationRecord

    def to_dict(self) -> dict:
        """Plain mapping."""
        return {"arm": self.arm, "threshold": self.threshold,
                "validation_balanced_accuracy": self.validation_balanced_accuracy,
                "validation_metrics": dict(self.validation_metrics), "test": self.test.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "ArmRecord":
        """Rebuild from to_dict output."""
        return cls(data["arm"], data["threshold"], data["validation_balanced_accuracy"],
                   dict(data["validation_metrics"]), EvaluationRecord.from_dict(data["test"]))


@dataclass(frozen=True)
class MitigationRecord:
    """One mitigation technique applied to one arm.

    Reweighing stores one weight per (group, label) cell, keyed "group|label";
    HPS stores its policy; reduction stores the selected multiplier.
    """
    technique: str
    arm: str
    scores_source: str
    threshold: Optional[float]
    floor_unmet: bool
    validation_balanced_accuracy: float
    validation_metrics: Dict[str, float]
    test: EvaluationRecord
    multiplier: Optional[float] = None
    cell_weights: Optional[Dict[str, float]] = None
    policy: Optional[dict] = None

    def to_dict(self) -> dict:
        """Plain mapping."""
        return {
            "technique": self.technique, "arm": self.arm, "scores_source": self.scores_source,
            "threshold": self.threshold, "floor_unmet": self.floor_unmet,
            "validation_balanced_accuracy": self.validation_balanced_accuracy,
            "validation_metrics": dict(self.validation_metrics), "test": self.test.to_dict(),
            "multiplier": self.multiplier,
            "cell_weights": None if self.cell_weights is None else dict(self.cell_weights),
            "policy": self.policy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MitigationRecord":
        """Rebuild from to_dict output."""
        return cls(
            technique=data["technique"], arm=data["arm"], scores_source=data["scores_source"],
            threshold=data["threshold"], floor_unmet=data["floor_unmet"],
            validation_balanced_accuracy=data["validation_balanced_accuracy"],
            validation_metrics=dict(data["validation_metrics"]),
            test=EvaluationRecord.from_dict(data["test"]),
            multiplier=data.get("multiplier"),
            cell_weights=None if data.get("cell_weights") is None else dict(data["cell_weights"]),
            policy=data.get("policy"),
        )


@dataclass(frozen=True)
class SeedRecord:
    """Everything measured for one seed."""
    seed: int
    sizes: Dict[str, int]
    prevalence: Dict[str, Dict[str, float]]
    baselines: Dict[str, ArmRecord]
    mitigations: List[MitigationRecord]
    nnaa: float
    nnaa_in_bounds: Optional[bool] = None

    def result(self, technique: str, arm: str):
        """Baseline ArmRecord or MitigationRecord of a technique and arm.

        Raises:
            KeyError: If the technique was not run
        """
        if technique == BASELINE:
            return self.baselines[arm]
        for record in self.mitigations:
            if record.technique == technique and record.arm == arm:
                return record
        raise KeyError(f"No result for {technique} on the {arm} arm of seed {self.seed}")

    def to_dict(self) -> dict:
        """Plain mapping."""
        return {
            "seed": self.seed, "sizes": dict(self.sizes),
            "prevalence": {arm: dict(v) for arm, v in self.prevalence.items()},
            "baselines": {arm: r.to_dict() for arm, r in self.baselines.items()},
            "mitigations": [m.to_dict() for m in self.mitigations],
            "nnaa": self.nnaa, "nnaa_in_bounds": self.nnaa_in_bounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SeedRecord":
        """Rebuild from to_dict output."""
        return cls(
            seed=data["seed"], sizes=dict(data["sizes"]),
            prevalence={arm: dict(v) for arm, v in data["prevalence"].items()},
            baselines={arm: ArmRecord.from_dict(r) for arm, r in data["baselines"].items()},
            mitigations=[MitigationRecord.from_dict(m) for m in data["mitigations"]],
            nnaa=data["nnaa"], nnaa_in_bounds=data.get("nnaa_in_bounds"),
        )


@dataclass(frozen=True)
class AuditReport:
    """Full experiment report: config, per-seed records and aggregates."""
    config: dict
    techniques: List[str]
    records: List[SeedRecord]
    aggregate: dict = field(default_factory=dict)
    significance: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Plain mapping in the report.json layout."""
        return {
            "format": REPORT_FORMAT, "version": REPORT_VERSION,
            "config": self.config, "techniques": list(self.techniques),
            "records": [r.to_dict() for r in self.records],
            "aggregate": self.aggregate, "significance": [dict(r) for r in self.significance],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AuditReport":
        """Rebuild from to_dict output.

        Raises:
            DataError: On an unknown format or version
        """
        if data.get("format") != REPORT_FORMAT or data.get("version") != REPORT_VERSION:
            raise DataError(f"Unsupported report: {data.get('format')} v{data.get('version')}")
        return cls(
            config=data["config"], techniques=list(data["techniques"]),
            records=[SeedRecord.from_dict(r) for r in data["records"]],
            aggregate=data["aggregate"], significance=[dict(r) for r in data["significance"]],
        )


def significance_rows(aggregate: dict, techniques: Sequence[str]) -> List[dict]:
    """Significance table rows.

    For every technique and arm there is a row against the same arm's
    baseline and a row against the same technique on the other arm, each
    holding p-values for balanced accuracy and the three fairness metrics.
    A p-value is None when the test was undefined.

    The real-vs-synthetic test is symmetric, so a technique has a single
    one; its real and synthetic counterpart rows carry the same values.

    Args:
        aggregate: Aggregate section of a report
        techniques: Technique names in display order

    Returns:
        Rows keyed by SIGNIFICANCE_HEADER
    """
    rows = []
    for technique in techniques:
        for arm in ARMS:
            for comparison in (RESPECTIVE_BASELINE, COUNTERPART_ARM):
                if comparison == RESPECTIVE_BASELINE:
                    tests = aggregate["vs_baseline"][technique][arm]
                else:
                    tests = aggregate["real_vs_synthetic"][technique]
                row = {"comparison": comparison, "technique": technique, "arm": arm}
                for metric in SIGNIFICANCE_METRICS:
                    test = tests.get(metric)
                    p = None if test is None else test["p_value"]
                    row[f"{metric}_p"] = p
                    row[f"{metric}_sig"] = "*" if test is not None and test["significant"] else ""
                rows.append(row)
    return rows


def _prevalence_frame(report: AuditReport) -> pd.DataFrame:
    rows = []
    for group, entry in report.aggregate["prevalence"].items():
        test = entry["t_test"]
        rows.append({
            "group": group, "real_rate": entry["real_mean"], "synthetic_rate": entry["synthetic_mean"],
            "change_pct": entry["change_pct"],
            "t_statistic": None if test is None else test["t_statistic"],
            "p_value": None if test is None else test["p_value"],
            "significant": None if test is None else test["significant"],
        })
    return pd.DataFrame(rows, columns=PREVALENCE_HEADER)


def _scatter_frame(report: AuditReport) -> pd.DataFrame:
    rows = []
    for metric in METRICS:
        for record in report.records:
            real, synth = record.baselines["real"].test, record.baselines["synthetic"].test
            rows.append({"seed": record.seed, "metric": metric,
                         "real_value": real.value(metric), "synthetic_value": synth.value(metric),
                         "real_balanced_accuracy": real.balanced_accuracy,
                         "synthetic_balanced_accuracy": synth.balanced_accuracy})
    return pd.DataFrame(rows, columns=SCATTER_HEADER)


def _boxplot_frame(report: AuditReport) -> pd.DataFrame:
    rows = []
    for technique in [BASELINE] + list(report.techniques):
        for arm in ARMS:
            for metric in ALL_METRICS:
                values = [r.result(technique, arm).test.value(metric) for r in report.records]
                rows.append({"technique": technique, "arm": arm, "metric": metric,
                             **summarize(values).to_dict()})
    return pd.DataFrame(rows, columns=BOXPLOT_HEADER)


def _tradeoff_frame(report: AuditReport) -> pd.DataFrame:
    rows = []
    for technique in [BASELINE] + list(report.techniques):
        for arm in ARMS:
            points = []
            for record in report.records:
                test = record.result(technique, arm).test
                point = {m: test.value(m) for m in TRADEOFF_HEADER[3:]}
                points.append(point)
                rows.append({"technique": technique, "arm": arm, "seed": str(record.seed), **point})
            means = {m: sum(p[m] for p in points) / len(points) for m in TRADEOFF_HEADER[3:]}
            rows.append({"technique": technique, "arm": arm, "seed": "mean", **means})
    return pd.DataFrame(rows, columns=TRADEOFF_HEADER)


def write_report_json(report: AuditReport, path) -> None:
    """Write report.json with sorted keys."""
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def emit_outputs(report: AuditReport, directory) -> List[Path]:
    """Write report.json and the five CSV files.

    Args:
        report: Completed report
        directory: Output directory (created if missing)

    Returns:
        Paths written

    Raises:
        AuditError: If the directory cannot be written
    """
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / REPORT_FILE]
        write_report_json(report, written[0])
        frames = {
            "prevalence.csv": _prevalence_frame(report),
            "significance.csv": pd.DataFrame(report.significance, columns=SIGNIFICANCE_HEADER),
            "scatter_real_vs_synth.csv": _scatter_frame(report),
            "boxplot_mitigation.csv": _boxplot_frame(report),
            "tradeoff_scatter.csv": _tradeoff_frame(report),
        }
        for name, frame in frames.items():
            frame.to_csv(out / name, index=False, encoding="utf-8")
            written.append(out / name)
    except OSError as exc:
        raise AuditError(f"Cannot write outputs to {out}: {exc}") from exc
    logger.info("Wrote %d files to %s", len(written), out)
    return written


def load_report(directory) -> AuditReport:
    """Read report.json from an output directory.

    Raises:
        DataError: Missing file, invalid JSON or unsupported format
    """
    path = Path(directory) / REPORT_FILE
    if not path.is_file():
        raise DataError(f"No {REPORT_FILE} in {directory}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"Invalid JSON in {path}: {exc}") from exc
    return AuditReport.from_dict(data)
