# core/evaluation_coordinator.py
# Evaluation protocols: k-fold cross-validation, the fused multi-source
# protocol, held-out evaluation, cross-dataset transfer, parameter sweeps and
# landmark accuracy.

import dataclasses
import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError, FerError
from core.models import DatasetManifest, EvaluationReport, ExpressionModel, LandmarkEvaluation, PipelineConfig
from core.pipeline_enums import LbpVariant
from core.pipeline_orchestrator import FeatureSet, PipelineOrchestrator
from utils import constants
from utils.rng import STREAM_CROSSVAL, STREAM_FUSED, make_rng, shuffled, stratified_folds

logger = logging.getLogger(__name__)


class EvaluationCoordinator:
    def __init__(self, orchestrator: PipelineOrchestrator):
        self.orchestrator = orchestrator
        self.metrics = orchestrator.metrics
        logger.info("EvaluationCoordinator initialized.")

    @property
    def config(self) -> PipelineConfig:
        return self.orchestrator.config

    # --- Shared helpers ---

    def _predict_set(self, model: ExpressionModel, feature_set: FeatureSet) -> List[int]:
        return [self.orchestrator.predict_blocks(model, blocks).label.index for blocks in feature_set.blocks]

    def _report(self, truth: Sequence[int], predicted: Sequence[int], label: str,
                failures: List[Tuple[str, str]]) -> EvaluationReport:
        counts = self.metrics.confusion_counts(truth, predicted)
        return self.metrics.metrics(counts, label, failures)

    # --- Cross-validation ---

    def cross_validate_blocks(self, feature_set: FeatureSet, folds: int, seed: int,
                              label: str = "crossval") -> EvaluationReport:
        labels = feature_set.labels
        counts = np.bincount(labels, minlength=6)
        if counts.min() < folds:
            raise DataError(f"{folds}-fold cross-validation needs at least {folds} usable images per class, "
                            f"smallest class has {int(counts.min())}; lower --folds")
        assignment = stratified_folds(labels, folds, make_rng(seed, STREAM_CROSSVAL))
        predicted = np.full(labels.size, -1, dtype=np.int64)
        for fold in range(folds):
            test = np.flatnonzero(assignment == fold)
            train = np.flatnonzero(assignment != fold)
            model = self.orchestrator.train_from_blocks(feature_set.subset(train))
            predicted[test] = self._predict_set(model, feature_set.subset(test))
            logger.info(f"Fold {fold + 1}/{folds}: {int(np.sum(predicted[test] == labels[test]))}/{test.size} correct")
        return self._report(labels, predicted, label, list(feature_set.failures))

    def cross_validate(self, manifest: DatasetManifest, folds: int = constants.DEFAULT_FOLDS,
                       seed: Optional[int] = None) -> EvaluationReport:
        """
        Stratified k-fold protocol: every usable image is tested exactly once
        by a model trained on the other folds. Confusion counts are pooled.
        """
        seed = self.config.seed if seed is None else seed
        return self.cross_validate_blocks(self.orchestrator.featurize(manifest), folds, seed)

    # --- Fused protocol ---

    def fused_split(self, feature_set: FeatureSet, repeat: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per (source, class) group: shuffle and hold out max(1, round(10%)) images."""
        rng = make_rng(seed, STREAM_FUSED, repeat)
        sources = np.asarray([r.source for r in feature_set.records])
        train, test = [], []
        for source in sorted(set(sources.tolist())):
            for cls in range(6):
                members = np.flatnonzero((sources == source) & (feature_set.labels == cls))
                if members.size == 0:
                    continue
                order = shuffled(members, rng)
                held = max(1, int(np.floor((1.0 - constants.FUSED_TRAIN_FRACTION) * members.size + 0.5)))
                test.extend(order[:held].tolist())
                train.extend(order[held:].tolist())
        return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))

    def fused_protocol(self, manifest: DatasetManifest, repeats: int = constants.DEFAULT_REPEATS,
                       seed: Optional[int] = None) -> Dict[str, EvaluationReport]:
        """
        Trains on 90% of every (source, class) group pooled together and tests
        the held-out 10% of each source separately; reports are averaged over
        the repeats.
        """
        seed = self.config.seed if seed is None else seed
        sources = manifest.sources()
        if len(sources) < 2:
            raise DataError(f"the fused protocol needs at least two sources, got {list(sources)}")
        feature_set = self.orchestrator.featurize(manifest)
        per_source: Dict[str, List[EvaluationReport]] = {s: [] for s in sources}
        record_sources = np.asarray([r.source for r in feature_set.records])
        for repeat in range(repeats):
            train, test = self.fused_split(feature_set, repeat, seed)
            model = self.orchestrator.train_from_blocks(feature_set.subset(train))
            for source in sources:
                idx = test[record_sources[test] == source]
                if idx.size == 0:
                    continue
                part = feature_set.subset(idx)
                predicted = self._predict_set(model, part)
                per_source[source].append(self._report(part.labels, predicted, source, []))
            logger.info(f"Fused repeat {repeat + 1}/{repeats} done")
        reports = {}
        for source, runs in per_source.items():
            if not runs:
                raise DataError(f"source '{source}' has no usable test images")
            averaged = self.metrics.average_reports(runs, f"fused-{source}")
            averaged.failures = [f for f in feature_set.failures
                                 if any(r.path == f[0] and r.source == source for r in manifest.records)]
            reports[source] = averaged
        return reports

    # --- Held-out evaluation ---

    def evaluate_features(self, model: ExpressionModel, feature_set: FeatureSet, label: str) -> EvaluationReport:
        predicted = self._predict_set(model, feature_set)
        return self._report(feature_set.labels, predicted, label, list(feature_set.failures))

    def evaluate(self, model: ExpressionModel, manifest: DatasetManifest) -> EvaluationReport:
        """Tests a trained model on every image of ``manifest``; images without a face are listed as failures."""
        feature_set = self.orchestrator.featurize(manifest)
        return self.evaluate_features(model, feature_set, "evaluate")

    def transfer(self, train_manifest: DatasetManifest, test_manifest: DatasetManifest) -> EvaluationReport:
        """Trains (saliency included) on one dataset and evaluates on the other."""
        model = self.orchestrator.train(train_manifest)
        return self.evaluate_features(model, self.orchestrator.featurize(test_manifest), "transfer")

    # --- Sweeps ---

    def resolution_variant_sweep(self, manifest: DatasetManifest, resolutions: Sequence[int],
                                 variants: Sequence[LbpVariant], folds: int = constants.DEFAULT_FOLDS,
                                 seed: Optional[int] = None) -> List[Tuple[int, LbpVariant, int, float]]:
        """(R, variant, feature dimension, macro-F) per combination; faces are aligned once per R."""
        seed = self.config.seed if seed is None else seed
        ordered_variants = [v for v in LbpVariant if v in set(variants)]
        rows = []
        for resolution in resolutions:
            base = dataclasses.replace(self.config, resolution=resolution)
            orchestrator = PipelineOrchestrator(base)
            results = orchestrator.preprocess_records(manifest.records)
            for variant in ordered_variants:
                config = dataclasses.replace(base, variant=variant)
                runner = EvaluationCoordinator(self._with_config(orchestrator, config))
                feature_set = orchestrator.blocks_from_results(manifest.records, results, variant)
                report = runner.cross_validate_blocks(feature_set, folds, seed, f"R{resolution}-{variant.value}")
                rows.append((resolution, variant, config.feature_dims(), report.macro_f))
                logger.info(f"R={resolution} {variant.value}: macro-F {report.macro_f:.4f}")
        return rows

    def topk_sweep(self, manifest: DatasetManifest, ks: Sequence[int], folds: int = constants.DEFAULT_FOLDS,
                   seed: Optional[int] = None) -> List[Tuple[int, int, float]]:
        """(k, feature dimension, macro-F) per patch count; features are computed once."""
        seed = self.config.seed if seed is None else seed
        feature_set = self.orchestrator.featurize(manifest)
        rows = []
        for k in ks:
            config = dataclasses.replace(self.config, top_k=k)
            runner = EvaluationCoordinator(self._with_config(self.orchestrator, config))
            report = runner.cross_validate_blocks(feature_set, folds, seed, f"k{k}")
            rows.append((k, config.feature_dims(), report.macro_f))
            logger.info(f"k={k}: macro-F {report.macro_f:.4f}")
        return rows

    @staticmethod
    def _with_config(orchestrator: PipelineOrchestrator, config: PipelineConfig) -> PipelineOrchestrator:
        clone = object.__new__(PipelineOrchestrator)
        clone.__dict__.update(orchestrator.__dict__)
        clone.config = config
        return clone

    # --- Landmarks ---

    def evaluate_landmarks(self, manifest: DatasetManifest) -> LandmarkEvaluation:
        """
        Normalised landmark error of every image with a ground-truth file,
        plus its cumulative distribution and the per-image localisation time.
        """
        orchestrator = self.orchestrator
        errors: List[Tuple[str, float]] = []
        timings: List[float] = []
        failures: List[Tuple[str, str]] = []
        for record in manifest.records:
            if not record.landmarks_path:
                failures.append((record.path, "no ground-truth landmark file"))
                logger.warning(f"Skipping {record.path}: no ground truth")
                continue
            try:
                truth = orchestrator.landmarks.read_landmarks(record.landmarks_path, self.config.resolution)
                img = orchestrator.image_io.read_image(record.path)
            except FerError as e:
                failures.append((record.path, str(e)))
                logger.warning(f"Skipping {record.path}: {e}")
                continue
            started = time.perf_counter()
            result = orchestrator.preprocess_image(img, None, record.path)
            timings.append((time.perf_counter() - started) * 1000.0)
            if not result.ok:
                failures.append((record.path, result.failure or "no face"))
                continue
            errors.append((record.path, orchestrator.landmarks.landmark_error(result.face.landmarks, truth)))

        thresholds = orchestrator.landmarks.cdf_thresholds()
        cdf = orchestrator.landmarks.error_cdf([e for _, e in errors], thresholds)
        return LandmarkEvaluation(errors, thresholds, cdf, timings, failures)
