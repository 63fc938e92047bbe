# services/metrics_service.py
# Confusion matrices, macro-averaged precision / recall / F and the
# comparison rows against reference figures.

import csv
import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from core.errors import DataError, NumericError
from core.models import NUM_CLASSES, EvaluationReport
from utils import constants

logger = logging.getLogger(__name__)

_REFERENCE_METRICS = {
    "macro_f": "macro F-score",
    "macro_recall": "macro recall",
    "macro_precision": "macro precision",
    "accuracy": "accuracy",
}


class MetricsService:
    """Turns predictions into EvaluationReports; zero denominators give 0."""

    def __init__(self):
        logger.info("MetricsService initialized.")

    @staticmethod
    def confusion_counts(truth: Sequence[int], predicted: Sequence[int]) -> np.ndarray:
        """6x6 counts, row = true class, column = predicted class."""
        if len(truth) != len(predicted):
            raise DataError(f"{len(truth)} truths but {len(predicted)} predictions")
        if len(truth) == 0:
            return np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        return confusion_matrix(truth, predicted, labels=list(range(NUM_CLASSES))).astype(np.int64)

    @staticmethod
    def metrics(counts: np.ndarray, label: str = "",
                failures: Optional[List[Tuple[str, str]]] = None) -> EvaluationReport:
        """
        Per-class precision (diagonal over column sum) and recall (diagonal
        over row sum), their unweighted means, and macro-F as the harmonic
        mean of macro precision and macro recall.

        Raises:
            DataError: counts are not a non-negative 6x6 matrix.
            NumericError: every count is zero.
        """
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(counts < 0):
            raise DataError(f"confusion counts must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} matrix")
        total = counts.sum()
        if total <= 0:
            raise NumericError("confusion matrix is all zeros")
        diag = np.diag(counts)
        row_sums = counts.sum(axis=1)
        col_sums = counts.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            recall = np.where(row_sums > 0, diag / row_sums, 0.0)
            precision = np.where(col_sums > 0, diag / col_sums, 0.0)
            confusion = np.where(row_sums[:, None] > 0, 100.0 * counts / row_sums[:, None], 0.0)
        macro_p = float(precision.mean())
        macro_r = float(recall.mean())
        macro_f = 2.0 * macro_p * macro_r / (macro_p + macro_r) if macro_p + macro_r > 0 else 0.0
        return EvaluationReport(
            counts=counts.astype(np.int64), confusion=confusion, precision=precision, recall=recall,
            macro_precision=macro_p, macro_recall=macro_r, macro_f=macro_f,
            accuracy=float(diag.sum() / total), sample_counts=row_sums.astype(np.int64),
            failures=list(failures or []), label=label,
        )

    @staticmethod
    def counts_from_percentages(percent: np.ndarray, class_counts: Sequence[int]) -> np.ndarray:
        """Rebuilds integer counts from a row-percentage matrix, rounding half-up."""
        rows = np.asarray(percent, dtype=np.float64) * np.asarray(class_counts, dtype=np.float64)[:, None] / 100.0
        return np.floor(rows + 0.5).astype(np.int64)

    @staticmethod
    def average_reports(reports: Sequence[EvaluationReport], label: str = "") -> EvaluationReport:
        """Element-wise mean of the metric fields; counts and failures are pooled."""
        if not reports:
            raise DataError("no reports to average")
        mean = lambda name: np.mean([np.asarray(getattr(r, name), dtype=np.float64) for r in reports], axis=0)
        failures = [f for r in reports for f in r.failures]
        return EvaluationReport(
            counts=np.sum([r.counts for r in reports], axis=0).astype(np.int64),
            confusion=mean("confusion"), precision=mean("precision"), recall=mean("recall"),
            macro_precision=float(mean("macro_precision")), macro_recall=float(mean("macro_recall")),
            macro_f=float(mean("macro_f")), accuracy=float(mean("accuracy")),
            sample_counts=np.sum([r.sample_counts for r in reports], axis=0).astype(np.int64),
            failures=failures, label=label or reports[0].label,
        )

    @staticmethod
    def reference_comparison(report: EvaluationReport, tag: str) -> List[Tuple[str, float, float]]:
        """(metric, measured %, reference %) rows; informational only."""
        if tag not in constants.REFERENCE_VALUES:
            raise DataError(f"unknown reference tag '{tag}'; choose from {sorted(constants.REFERENCE_VALUES)}")
        rows = []
        for key, reference in constants.REFERENCE_VALUES[tag].items():
            rows.append((_REFERENCE_METRICS[key], 100.0 * float(getattr(report, key)), float(reference)))
        return rows

    @staticmethod
    def write_cdf_csv(path: str, thresholds: np.ndarray, cdf: np.ndarray) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["threshold", "fraction"])
            for t, f in zip(thresholds, cdf):
                writer.writerow([f"{t:.2f}", f"{f:.6f}"])
        logger.info(f"Landmark error CDF written to {path}")
