# services/saliency_service.py
# Per-pair patch saliency from cross-validated PCA-LDA accuracy, top-k patch
# selection and comparison against the reference top-4 sets.

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError, FerError
from core.models import CLASS_PAIRS, PATCH_IDS, SaliencyTable, SalientSelection, pair_key
from core.pipeline_enums import ExpressionLabel as E
from services.subspace_service import SubspaceService
from utils import constants
from utils.rng import STREAM_SALIENCY, effective_folds, make_rng, stratified_folds

logger = logging.getLogger(__name__)


def _pair(a: E, b: E) -> Tuple[int, int]:
    return tuple(sorted((a.index, b.index)))


# Reference top-4 salient patches per expression pair.
REFERENCE_TOP4: Dict[Tuple[int, int], Tuple[int, ...]] = {
    _pair(E.ANGER, E.FEAR): (1, 4, 9, 10),
    _pair(E.ANGER, E.DISGUST): (2, 4, 5, 6),
    _pair(E.ANGER, E.HAPPINESS): (1, 4, 9, 11),
    _pair(E.ANGER, E.SADNESS): (1, 9, 10, 18),
    _pair(E.ANGER, E.SURPRISE): (1, 4, 9, 10),
    _pair(E.FEAR, E.DISGUST): (1, 2, 4, 8),
    _pair(E.FEAR, E.HAPPINESS): (1, 4, 8, 9),
    _pair(E.FEAR, E.SADNESS): (1, 4, 8, 9),
    _pair(E.FEAR, E.SURPRISE): (1, 5, 11, 12),
    _pair(E.DISGUST, E.HAPPINESS): (1, 4, 5, 6),
    _pair(E.DISGUST, E.SADNESS): (1, 2, 9, 18),
    _pair(E.DISGUST, E.SURPRISE): (1, 2, 5, 6),
    _pair(E.HAPPINESS, E.SADNESS): (1, 7, 9, 11),
    _pair(E.HAPPINESS, E.SURPRISE): (2, 4, 5, 11),
    _pair(E.SADNESS, E.SURPRISE): (1, 9, 10, 11),
}


class SaliencyService:
    """
    Scores how well each single patch separates each expression pair.

    A patch's score for a pair is the pooled accuracy of a PCA-LDA
    classifier over stratified folds of that pair's samples. The fold
    partition of a pair is shared by all 19 patches.
    """

    def __init__(self, subspace: Optional[SubspaceService] = None, workers: int = 1):
        self.subspace = subspace or SubspaceService()
        self.workers = max(1, workers)
        logger.info(f"SaliencyService initialized (workers {self.workers}).")

    def pair_folds(self, labels: Sequence[int], pair: Tuple[int, int], folds: int, seed: int) -> np.ndarray:
        count = effective_folds(labels, folds)
        return stratified_folds(labels, count, make_rng(seed, STREAM_SALIENCY, *pair))

    def score_patch(self, X: np.ndarray, labels: Sequence[int], folds: int = constants.DEFAULT_SALIENCY_FOLDS,
                    seed: int = constants.DEFAULT_SEED, assignment: Optional[np.ndarray] = None) -> float:
        """
        Cross-validated two-class PCA-LDA accuracy of the features ``X``.

        A fold whose training data cannot be fitted predicts the lower class
        for all of its test samples.

        Raises:
            DataError: the labels do not hold exactly two classes.
        """
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        classes = np.unique(labels)
        if classes.size != 2:
            raise DataError(f"saliency scoring needs exactly two classes, got {classes.tolist()}")
        if assignment is None:
            assignment = self.pair_folds(labels, (int(classes[0]), int(classes[1])), folds, seed)

        correct = 0
        for fold in np.unique(assignment):
            test = assignment == fold
            train = ~test
            try:
                pca, lda = self.subspace.pca_lda_fit(X[train], labels[train])
                predicted = self.subspace.pca_lda_predict(pca, lda, X[test])
            except FerError as e:
                logger.debug(f"Fold {fold} could not be fitted ({e}); predicting class {classes[0]}")
                predicted = np.full(int(test.sum()), classes[0])
            correct += int(np.count_nonzero(predicted == labels[test]))
        return correct / float(labels.size)

    def build_table(self, blocks: np.ndarray, labels: Sequence[int],
                    folds: int = constants.DEFAULT_SALIENCY_FOLDS,
                    seed: int = constants.DEFAULT_SEED) -> SaliencyTable:
        """
        Scores all 15 x 19 (pair, patch) combinations.

        Args:
            blocks: per-sample block histograms, shape (N, 19, 4, bins).
            labels: class index per sample.
            folds: requested fold count (reduced for small classes).
            seed: run seed.
        """
        blocks = np.asarray(blocks, dtype=np.float64)
        labels = np.asarray(labels)
        missing = [E(c).display_name for c in range(len(E)) if not np.any(labels == c)]
        if missing:
            raise DataError(f"saliency needs samples of every class; missing {missing}")

        jobs = []
        for pair_index, pair in enumerate(CLASS_PAIRS):
            mask = np.isin(labels, pair)
            pair_labels = labels[mask]
            assignment = self.pair_folds(pair_labels, pair, folds, seed)
            for patch_id in PATCH_IDS:
                X = blocks[mask, patch_id - 1].reshape(int(mask.sum()), -1)
                jobs.append(((pair_index, patch_id - 1), X, pair_labels, assignment))

        scores = np.zeros((len(CLASS_PAIRS), constants.NUM_PATCHES), dtype=np.float64)
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [(key, pool.submit(self.score_patch, X, y, folds, seed, a)) for key, X, y, a in jobs]
            for key, future in futures:
                scores[key] = future.result()
        logger.info(f"Saliency table built over {labels.size} samples ({folds} requested folds, seed {seed}).")
        return SaliencyTable(scores, folds, seed)

    @staticmethod
    def select(table: SaliencyTable, k: int) -> SalientSelection:
        """Top-k patches per pair by descending score; ties go to the lower patch id."""
        if not 1 <= k <= constants.NUM_PATCHES:
            raise DataError(f"k must lie in [1, {constants.NUM_PATCHES}], got {k}")
        patches = {}
        for row, pair in enumerate(table.pairs):
            ranked = sorted(PATCH_IDS, key=lambda p: (-table.scores[row, p - 1], p))
            patches[pair] = tuple(ranked[:k])
        return SalientSelection(patches, k)

    @staticmethod
    def reference_overlap(selection: SalientSelection,
                          reference: Optional[Dict[Tuple[int, int], Tuple[int, ...]]] = None) -> Tuple[Dict[Tuple[int, int], int], float]:
        """Size of the intersection between each pair's top four and the reference set, plus the mean."""
        reference = reference or REFERENCE_TOP4
        overlaps = {}
        for pair in CLASS_PAIRS:
            top = set(selection.for_pair(pair)[:4])
            overlaps[pair] = len(top & set(reference[pair]))
        return overlaps, float(np.mean(list(overlaps.values())))

    # --- Output ---

    @staticmethod
    def write_table_csv(table: SaliencyTable, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["pair"] + [f"P{p}" for p in PATCH_IDS])
            for row, pair in enumerate(table.pairs):
                writer.writerow([pair_key(pair)] + [f"{v:.6f}" for v in table.scores[row]])
        logger.info(f"Saliency table written to {path}")

    @staticmethod
    def format_selection(selection: SalientSelection) -> List[str]:
        return [f"{pair_key(pair)}: " + ", ".join(f"P{p}" for p in selection.for_pair(pair))
                for pair in CLASS_PAIRS]
