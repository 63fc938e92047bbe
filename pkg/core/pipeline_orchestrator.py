# core/pipeline_orchestrator.py
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError, FerError
from core.models import (AlignedFace, BoundingBox, ExpressionModel, FaceResult, GrayImage, PipelineConfig,
                         Point, Prediction, SaliencyTable, SalientSelection, DatasetManifest, DatasetRecord)
from core.pipeline_enums import EyeSide, ExpressionLabel, LbpVariant
from services.dataset_service import DatasetService
from services.detection_service import DetectionService
from services.feature_service import FeatureService
from services.image_io_service import ImageIoService
from services.imaging_service import ImagingService
from services.landmark_service import LandmarkService
from services.metrics_service import MetricsService
from services.model_store_service import ModelStoreService
from services.patch_service import PatchService
from services.saliency_service import SaliencyService
from services.subspace_service import SubspaceService
from services.svm_service import SvmService
from utils import constants

logger = logging.getLogger(__name__)


@dataclass
class FeatureSet:
    """Block histograms of every usable image of a manifest."""
    blocks: np.ndarray  # (N, 19, 4, bins)
    labels: np.ndarray
    records: Tuple[DatasetRecord, ...]
    failures: List[Tuple[str, str]]

    def subset(self, indices: Sequence[int]) -> "FeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureSet(self.blocks[idx], self.labels[idx], tuple(self.records[i] for i in idx), [])


class PipelineOrchestrator:
    """
    Wires the services into the preprocessing, training and prediction
    chains for one PipelineConfig.
    """

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        logger.info(f"PipelineOrchestrator initializing (R={self.config.resolution}, "
                    f"{self.config.variant.value}, k={self.config.top_k}, seed={self.config.seed})...")
        self.imaging = ImagingService()
        self.image_io = ImageIoService()
        self.detection = DetectionService(self.imaging, self.config.cascade_dir, self.config.scale_step)
        self.landmarks = LandmarkService(self.imaging)
        self.patches = PatchService(self.imaging)
        self.features = FeatureService(self.patches)
        self.subspace = SubspaceService(self.config.pca_energy, self.config.pca_max_dims)
        self.saliency = SaliencyService(self.subspace, self.config.workers)
        self.svm = SvmService(self.subspace, self.config.workers)
        self.datasets = DatasetService()
        self.model_store = ModelStoreService()
        self.metrics = MetricsService()
        logger.info("PipelineOrchestrator initialized.")

    # --- Preprocessing ---

    def _source_fallback(self, box: BoundingBox, name: str) -> Point:
        fx, fy = constants.ANTHROPOMETRIC_TABLE[name]
        return Point(box.x + fx * box.w, box.y + fy * box.h)

    def preprocess_image(self, img: GrayImage, landmarks_path: Optional[str] = None,
                         path: str = "") -> FaceResult:
        """
        Blur, find the face and its eyes and nose, align to R x R with
        equalization, then locate the remaining landmarks. A landmark file
        replaces the located landmarks. Eye or nose misses fall back to the
        anthropometric table.
        """
        started = time.perf_counter()
        config = self.config
        resolution = config.resolution
        blurred = self.imaging.gaussian_blur_3x3(img)
        full = BoundingBox(0, 0, img.width, img.height)

        face_box = self.detection.detect_face(blurred) if config.use_cascades else full
        if face_box is None:
            if landmarks_path is None:
                logger.warning(f"No face found in {path or 'image'}")
                return FaceResult(path, None, "no face found", (time.perf_counter() - started) * 1000.0)
            face_box = full

        detected: Dict[str, Optional[Point]] = {"left_eye": None, "right_eye": None, "nose": None}
        if config.use_cascades:
            left = self.detection.detect_eye(blurred, EyeSide.LEFT, face_box)
            right = self.detection.detect_eye(blurred, EyeSide.RIGHT, face_box)
            nose = self.detection.detect_nose(blurred, face_box)
            detected = {
                "left_eye": left.center if left else None,
                "right_eye": right.center if right else None,
                "nose": nose.center if nose else None,
            }
        left_eye = detected["left_eye"] or self._source_fallback(face_box, "left_eye")
        right_eye = detected["right_eye"] or self._source_fallback(face_box, "right_eye")
        aligned = self.landmarks.align_face(blurred, face_box, left_eye, right_eye, resolution)

        if landmarks_path is not None:
            landmark_set = self.landmarks.read_landmarks(landmarks_path, resolution)
        elif not config.use_cascades:
            landmark_set = self.landmarks.fallback_landmarks(resolution)
        else:
            mapped = {name: aligned.transform.to_aligned(p) if p is not None else None
                      for name, p in detected.items()}
            landmark_set = self.landmarks.complete_landmarks(aligned, mapped)
        elapsed = (time.perf_counter() - started) * 1000.0
        return FaceResult(path, aligned.with_landmarks(landmark_set), None, elapsed)

    def preprocess(self, image_path: str, landmarks_path: Optional[str] = None) -> FaceResult:
        try:
            img = self.image_io.read_image(image_path)
            return self.preprocess_image(img, landmarks_path, image_path)
        except FerError as e:
            logger.warning(f"Skipping {image_path}: {e}")
            return FaceResult(image_path, None, str(e))

    def preprocess_records(self, records: Sequence[DatasetRecord], use_ground_truth: bool = True) -> List[FaceResult]:
        """Preprocesses records concurrently; results keep manifest order."""
        def job(record: DatasetRecord) -> FaceResult:
            return self.preprocess(record.path, record.landmarks_path if use_ground_truth else None)

        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(job, records))

    # --- Features ---

    def face_blocks(self, face: AlignedFace, variant: Optional[LbpVariant] = None) -> np.ndarray:
        return self.features.block_histograms(face, variant or self.config.variant)

    def blocks_from_results(self, records: Sequence[DatasetRecord], results: Sequence[FaceResult],
                            variant: Optional[LbpVariant] = None) -> FeatureSet:
        variant = variant or self.config.variant
        blocks, labels, kept, failures = [], [], [], []
        for record, result in zip(records, results):
            if not result.ok:
                failures.append((record.path, result.failure or "unknown failure"))
                continue
            blocks.append(self.face_blocks(result.face, variant))
            labels.append(record.label.index)
            kept.append(record)
        shape = (0, constants.NUM_PATCHES, 4, variant.bins)
        stacked = np.stack(blocks) if blocks else np.zeros(shape)
        return FeatureSet(stacked, np.asarray(labels, dtype=np.int64), tuple(kept), failures)

    def featurize(self, manifest: DatasetManifest, use_ground_truth: bool = True) -> FeatureSet:
        results = self.preprocess_records(manifest.records, use_ground_truth)
        feature_set = self.blocks_from_results(manifest.records, results)
        if feature_set.failures:
            logger.warning(f"{len(feature_set.failures)} of {len(manifest.records)} image(s) skipped")
        return feature_set

    def dump_features(self, feature_set: FeatureSet, path: str, patch_ids: Optional[Sequence[int]] = None) -> int:
        """Writes one CSV row per image with the histograms of ``patch_ids`` (all patches by default)."""
        ids = tuple(sorted(patch_ids)) if patch_ids else tuple(range(1, constants.NUM_PATCHES + 1))
        rows = ((record.path, record.label.display_name,
                 self.features.vector_from_blocks(blocks, ids, self.config.variant))
                for record, blocks in zip(feature_set.records, feature_set.blocks))
        return self.features.write_features_csv(path, rows)

    # --- Training ---

    @staticmethod
    def require_all_classes(labels: np.ndarray, minimum: int = 2) -> None:
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(ExpressionLabel))
        short = [label.display_name for label in ExpressionLabel.ordered() if counts[label.index] < minimum]
        if short:
            raise DataError(f"training needs at least {minimum} usable sample(s) of every class; short: {short}")

    def saliency_from_blocks(self, feature_set: FeatureSet) -> Tuple[SaliencyTable, SalientSelection]:
        self.require_all_classes(feature_set.labels)
        table = self.saliency.build_table(feature_set.blocks, feature_set.labels,
                                          self.config.saliency_folds, self.config.seed)
        return table, self.saliency.select(table, self.config.top_k)

    def train_from_blocks(self, feature_set: FeatureSet) -> ExpressionModel:
        _, selection = self.saliency_from_blocks(feature_set)
        ensemble = self.svm.oao_train(feature_set.blocks, feature_set.labels, selection, self.config)
        return ExpressionModel(self.config, selection, ensemble)

    def train(self, manifest: DatasetManifest) -> ExpressionModel:
        """Preprocess all images, select salient patches, train the pairwise SVMs."""
        self.datasets.require_classes(manifest, 2)
        feature_set = self.featurize(manifest)
        model = self.train_from_blocks(feature_set)
        logger.info(f"Training finished on {feature_set.labels.size} image(s).")
        return model

    # --- Prediction ---

    def predict_blocks(self, model: ExpressionModel, blocks: np.ndarray) -> Prediction:
        winner, votes, strength = self.svm.oao_predict(model.ensemble, blocks)
        return Prediction(ExpressionLabel(winner), votes, strength)

    def predict_face(self, model: ExpressionModel, result: FaceResult) -> Prediction:
        if not result.ok:
            return Prediction(None, (0,) * len(ExpressionLabel))
        return self.predict_blocks(model, self.face_blocks(result.face, model.config.variant))

    def predict(self, model: ExpressionModel, image_path: str) -> Prediction:
        """Label and vote vector for one image; an image without a face gives a no-face result."""
        return self.predict_face(model, self.preprocess(image_path))
