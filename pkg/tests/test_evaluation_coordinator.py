# tests/test_evaluation_coordinator.py
import dataclasses

import numpy as np
import pytest

from core.errors import DataError
from core.evaluation_coordinator import EvaluationCoordinator
from core.models import DatasetManifest
from utils import synthetic_faces


@pytest.fixture(scope="module")
def second_source(tmp_path_factory) -> str:
    out_dir = tmp_path_factory.mktemp("lab")
    return synthetic_faces.write_dataset(str(out_dir), per_class=4, seed=9, source="lab")


class TestCrossValidation:
    def test_ten_fold_macro_f(self, synthetic_features):
        orchestrator, _, feature_set = synthetic_features
        report = EvaluationCoordinator(orchestrator).cross_validate_blocks(feature_set, 10, 0)
        assert report.counts.sum() == feature_set.labels.size
        assert np.allclose(report.confusion.sum(axis=1), 100.0)
        assert report.macro_f >= 0.9
        assert report.label == "crossval"

    def test_same_seed_same_report(self, synthetic_features):
        orchestrator, _, feature_set = synthetic_features
        coordinator = EvaluationCoordinator(orchestrator)
        subset = feature_set.subset(np.flatnonzero(np.arange(feature_set.labels.size) % 2 == 0))
        first = coordinator.cross_validate_blocks(subset, 3, 4)
        second = coordinator.cross_validate_blocks(subset, 3, 4)
        assert np.array_equal(first.counts, second.counts)

    def test_from_manifest(self, synthetic_features):
        orchestrator, manifest, _ = synthetic_features
        part = DatasetManifest(tuple(r for i, r in enumerate(manifest.records) if i % 10 < 3))
        report = EvaluationCoordinator(orchestrator).cross_validate(part, folds=3)
        assert report.counts.sum() == 18
        assert np.array_equal(report.counts.sum(axis=1), np.full(6, 3))

    def test_too_many_folds(self, synthetic_features):
        orchestrator, _, feature_set = synthetic_features
        with pytest.raises(DataError, match="lower --folds"):
            EvaluationCoordinator(orchestrator).cross_validate_blocks(feature_set, 11, 0)


class TestFused:
    def test_split_holds_out_a_tenth_per_group(self, synthetic_features):
        orchestrator, _, feature_set = synthetic_features
        train, test = EvaluationCoordinator(orchestrator).fused_split(feature_set, 0, 0)
        assert train.size + test.size == feature_set.labels.size
        assert not set(train.tolist()) & set(test.tolist())
        assert np.array_equal(np.bincount(feature_set.labels[test], minlength=6), np.ones(6))

    def test_one_report_per_source(self, synthetic_features, synthetic_manifest, second_source):
        orchestrator, _, _ = synthetic_features
        manifest = orchestrator.datasets.load_many([synthetic_manifest, second_source])
        reports = EvaluationCoordinator(orchestrator).fused_protocol(manifest, repeats=1)
        assert sorted(reports) == ["lab", "synthetic"]
        assert reports["lab"].label == "fused-lab"
        assert reports["lab"].counts.sum() == 6
        assert reports["synthetic"].counts.sum() == 6

    def test_single_source_is_rejected(self, synthetic_features):
        orchestrator, manifest, _ = synthetic_features
        with pytest.raises(DataError, match="two sources"):
            EvaluationCoordinator(orchestrator).fused_protocol(manifest, repeats=1)


class TestHeldOut:
    def test_evaluate_trained_model(self, synthetic_features, synthetic_model):
        orchestrator, manifest, _ = synthetic_features
        part = DatasetManifest(manifest.records[::5])
        report = EvaluationCoordinator(orchestrator).evaluate(synthetic_model, part)
        assert report.counts.sum() == len(part.records)
        assert report.accuracy >= 0.9
        assert report.failures == []


class TestSweeps:
    def test_topk_rows(self, synthetic_features):
        orchestrator, manifest, _ = synthetic_features
        part = DatasetManifest(tuple(r for i, r in enumerate(manifest.records) if i % 10 < 4))
        rows = EvaluationCoordinator(orchestrator).topk_sweep(part, [1, 4], folds=3)
        assert [(k, dims) for k, dims, _ in rows] == [(1, 64), (4, 256)]
        assert all(0.0 <= f <= 1.0 for _, _, f in rows)


class TestLandmarkEvaluation:
    def test_errors_and_cdf(self, synthetic_features):
        orchestrator, manifest, _ = synthetic_features
        records = list(manifest.records[::6])
        records.append(dataclasses.replace(manifest.records[1], landmarks_path=None))
        evaluation = EvaluationCoordinator(orchestrator).evaluate_landmarks(DatasetManifest(tuple(records)))
        assert len(evaluation.errors) == 10
        assert evaluation.failures == [(manifest.records[1].path, "no ground-truth landmark file")]
        assert len(evaluation.thresholds) == 31
        assert np.all(np.diff(evaluation.cdf) >= 0)
        assert np.median([e for _, e in evaluation.errors]) < 0.25
        assert len(evaluation.timings_ms) == 10
        assert evaluation.max_time_ms >= evaluation.mean_time_ms > 0.0
