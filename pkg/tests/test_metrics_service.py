# tests/test_metrics_service.py
import os

import numpy as np
import pytest

from core.errors import DataError, NumericError
from services.metrics_service import MetricsService

# Reference CK+ confusion percentages (rows and columns in anger, fear,
# disgust, happiness, sadness, surprise order) and the per-class image counts.
CK_PERCENT = np.array([
    [87.8, 0, 0, 0, 7.32, 4.88],
    [0, 93.33, 0, 4.44, 0, 2.22],
    [0, 1.88, 94.33, 0, 1.88, 1.88],
    [1.44, 2.89, 0, 94.2, 0, 1.44],
    [1.78, 0, 0, 1.78, 96.42, 0],
    [0, 0, 0, 1.53, 0, 98.46],
])
CK_COUNTS = (41, 45, 53, 69, 56, 65)


@pytest.fixture
def metrics():
    return MetricsService()


class TestCounts:
    def test_perfect_predictions(self, metrics):
        truth = [0, 1, 2, 3, 4, 5, 5, 0]
        counts = metrics.confusion_counts(truth, truth)
        assert np.array_equal(counts, np.diag([2, 1, 1, 1, 1, 2]))
        report = metrics.metrics(counts)
        assert report.macro_f == 1.0 and report.accuracy == 1.0
        assert np.allclose(report.confusion, 100.0 * np.eye(6))

    def test_rows_are_truth(self, metrics):
        counts = metrics.confusion_counts([0, 0, 1], [0, 3, 1])
        assert counts[0, 3] == 1 and counts[3, 0] == 0

    def test_length_mismatch(self, metrics):
        with pytest.raises(DataError):
            metrics.confusion_counts([0, 1], [0])

    def test_empty(self, metrics):
        assert not metrics.confusion_counts([], []).any()


class TestMetrics:
    def test_reference_table(self, metrics):
        counts = metrics.counts_from_percentages(CK_PERCENT, CK_COUNTS)
        assert counts.sum(axis=1).tolist() == list(CK_COUNTS)
        report = metrics.metrics(counts, "ck")
        assert 100 * report.macro_recall == pytest.approx(94.1, abs=0.5)
        assert 100 * report.macro_precision == pytest.approx(94.69, abs=0.5)
        assert 100 * report.macro_f == pytest.approx(94.39, abs=0.5)
        assert np.allclose(report.confusion.sum(axis=1), 100.0, atol=0.01)

    def test_f_is_harmonic_mean_of_macro_values(self, metrics, rng):
        counts = rng.integers(0, 20, size=(6, 6))
        report = metrics.metrics(counts)
        p, r = report.macro_precision, report.macro_recall
        assert report.macro_f == pytest.approx(2 * p * r / (p + r))

    def test_never_predicted_class(self, metrics):
        counts = np.diag([5, 5, 5, 5, 5, 0]).astype(np.int64)
        counts[5, 0] = 3
        report = metrics.metrics(counts)
        assert report.precision[5] == 0.0
        assert report.recall[5] == 0.0
        assert report.sample_counts[5] == 3

    def test_empty_row(self, metrics):
        counts = np.diag([4, 4, 4, 4, 4, 0])
        report = metrics.metrics(counts)
        assert not report.confusion[5].any()
        assert report.accuracy == 1.0

    def test_all_zero(self, metrics):
        with pytest.raises(NumericError):
            metrics.metrics(np.zeros((6, 6)))

    def test_wrong_shape(self, metrics):
        with pytest.raises(DataError):
            metrics.metrics(np.ones((5, 5)))

    def test_average(self, metrics):
        a = metrics.metrics(np.diag([1, 1, 1, 1, 1, 1]), "a")
        b = metrics.metrics(np.ones((6, 6), dtype=np.int64), "b")
        mean = metrics.average_reports([a, b], "mean")
        assert mean.accuracy == pytest.approx((1.0 + 1 / 6) / 2)
        assert mean.counts.sum() == 42
        assert mean.label == "mean"

    def test_average_nothing(self, metrics):
        with pytest.raises(DataError):
            metrics.average_reports([])


class TestReference:
    def test_rows(self, metrics):
        report = metrics.metrics(metrics.counts_from_percentages(CK_PERCENT, CK_COUNTS))
        rows = metrics.reference_comparison(report, "ck")
        assert [name for name, _, _ in rows] == ["macro F-score", "macro recall", "macro precision"]
        assert rows[0][2] == 94.39

    def test_unknown_tag(self, metrics):
        report = metrics.metrics(np.eye(6))
        with pytest.raises(DataError):
            metrics.reference_comparison(report, "mmi")

    def test_cdf_csv(self, metrics, tmp_path):
        path = os.path.join(str(tmp_path), "cdf.csv")
        metrics.write_cdf_csv(path, np.array([0.0, 0.01]), np.array([0.0, 0.5]))
        with open(path, encoding="utf-8") as handle:
            assert handle.read() == "threshold,fraction\n0.00,0.000000\n0.01,0.500000\n"
