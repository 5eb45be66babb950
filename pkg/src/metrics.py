#!/usr/bin/env python3
"""
Classification and streaming metrics

Phish is the positive class. Ratios whose denominator is zero are reported
as None rather than 0 so degenerate runs stay visible.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import EmptyRunError, PreconditionError
from src.fuzzy_inference import RuleBase, Verdict
from src.labels import Label
from src.schemas import REPORT_SCHEMA, REPORT_SCHEMA_ID, validate_document

HISTOGRAM_BINS = 10


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("Confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Label, Label]]) -> "ConfusionCounts":
        """Count (predicted, actual) label pairs"""
        tally = Counter((Label(p), Label(a)) for p, a in pairs)
        return cls(
            tp=tally[(Label.PHISH, Label.PHISH)],
            tn=tally[(Label.HAM, Label.HAM)],
            fp=tally[(Label.PHISH, Label.HAM)],
            fn=tally[(Label.HAM, Label.PHISH)],
        )

    @property
    def sensitivity(self) -> Optional[float]:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def precision(self) -> Optional[float]:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def specificity(self) -> Optional[float]:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> Optional[float]:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def fp_rate(self) -> Optional[float]:
        return _ratio(self.fp, self.fp + self.tn)

    @property
    def fn_rate(self) -> Optional[float]:
        return _ratio(self.fn, self.fn + self.tp)

    @property
    def f_measure(self) -> Optional[float]:
        p, r = self.precision, self.sensitivity
        if p is None or r is None:
            return None
        return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    sensitivity: Optional[float]
    precision: Optional[float]
    specificity: Optional[float]
    f_measure: Optional[float]
    accuracy: Optional[float]
    fp_rate: Optional[float]
    fn_rate: Optional[float]
    rule_count: int = 0
    latency_mean: float = 0.0
    latency_p95: float = 0.0
    rules_created: int = 0
    rules_updated: int = 0
    rules_deleted: int = 0
    version_counts: Dict[int, int] = field(default_factory=dict)
    histogram: Tuple[int, ...] = ()

    @property
    def total(self) -> int:
        return self.counts.total


@dataclass(frozen=True)
class RunComparison:
    accuracy_delta: Optional[float]
    f_measure_delta: Optional[float]
    rule_count_ratio: Optional[float]
    latency_ratio: Optional[float]


def report_from_counts(counts: ConfusionCounts, **extra) -> MetricsReport:
    if counts.total == 0:
        raise EmptyRunError("No scored samples in this run")
    return MetricsReport(
        counts=counts,
        sensitivity=counts.sensitivity,
        precision=counts.precision,
        specificity=counts.specificity,
        f_measure=counts.f_measure,
        accuracy=counts.accuracy,
        fp_rate=counts.fp_rate,
        fn_rate=counts.fn_rate,
        **extra,
    )


def score_run(verdicts: Sequence[Tuple[Verdict, Label]], rulebase: Optional[RuleBase] = None) -> MetricsReport:
    """Metrics over (verdict, true label) pairs"""
    if not verdicts:
        raise EmptyRunError("Cannot score an empty run")
    counts = ConfusionCounts.from_pairs((v.label, truth) for v, truth in verdicts)
    latencies = np.array([v.latency for v, _ in verdicts], dtype=float)
    scores = np.array([v.score for v, _ in verdicts], dtype=float)
    histogram, _ = np.histogram(scores, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    versions = Counter(v.profile_version for v, _ in verdicts)
    extra: Dict[str, Any] = dict(
        latency_mean=float(latencies.mean()),
        latency_p95=float(np.percentile(latencies, 95)),
        version_counts=dict(sorted(versions.items())),
        histogram=tuple(int(h) for h in histogram),
    )
    if rulebase is not None:
        extra.update(
            rule_count=len(rulebase.rules),
            rules_created=rulebase.stats.created,
            rules_updated=rulebase.stats.updated,
            rules_deleted=rulebase.stats.deleted,
        )
    return report_from_counts(counts, **extra)


def _delta(a: Optional[float], b: Optional[float]) -> Optional[float]:
    return None if a is None or b is None else a - b


def compare_runs(a: MetricsReport, b: MetricsReport) -> RunComparison:
    """Deltas a - b and ratios a / b of two runs over the same evaluation set"""
    if a.total != b.total:
        raise PreconditionError(f"Runs scored different sample counts ({a.total} vs {b.total})")
    return RunComparison(
        accuracy_delta=_delta(a.accuracy, b.accuracy),
        f_measure_delta=_delta(a.f_measure, b.f_measure),
        rule_count_ratio=_ratio(a.rule_count, b.rule_count),
        latency_ratio=_ratio(a.latency_mean, b.latency_mean),
    )


def report_to_record(report: MetricsReport, **context) -> Dict[str, Any]:
    """Structured record for live periodic reports and batch evaluations"""
    counts = report.counts
    record = {
        "schema": REPORT_SCHEMA_ID,
        "total": counts.total,
        "counts": {"tp": counts.tp, "tn": counts.tn, "fp": counts.fp, "fn": counts.fn},
        "metrics": {
            "sensitivity": report.sensitivity,
            "precision": report.precision,
            "specificity": report.specificity,
            "f_measure": report.f_measure,
            "accuracy": report.accuracy,
            "fp_rate": report.fp_rate,
            "fn_rate": report.fn_rate,
        },
        "rules": {
            "count": report.rule_count,
            "created": report.rules_created,
            "updated": report.rules_updated,
            "deleted": report.rules_deleted,
        },
        "latency": {"mean_seconds": report.latency_mean, "p95_seconds": report.latency_p95},
        "version_counts": {str(k): v for k, v in report.version_counts.items()},
        "score_histogram": list(report.histogram),
        **context,
    }
    validate_document(record, REPORT_SCHEMA, "metrics report")
    return record
