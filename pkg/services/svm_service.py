# services/svm_service.py
# RBF soft-margin SVM trained by SMO and the one-against-one voting ensemble.

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from core.errors import ConvergenceError, DataError, NumericError
from core.models import (CLASS_PAIRS, NUM_CLASSES, OaoEnsemble, PipelineConfig, SalientSelection,
                         SvmModel, pair_key)
from services.subspace_service import SubspaceService
from utils import constants
from utils.rng import STREAM_GRID, effective_folds, make_rng, stratified_folds

logger = logging.getLogger(__name__)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


class SvmService:
    """
    Binary RBF SVMs and their pairwise voting ensemble.

    The dual is solved in the signed-coefficient form: beta_i = y_i alpha_i
    with beta_i between min(0, C y_i) and max(0, C y_i) and sum(beta) = 0.
    Each step takes i as the most violating up-movable sample, pairs it with
    the down-movable j of largest second-order gain and moves both along
    the equality constraint by the clipped Newton step.
    """

    def __init__(self, subspace: Optional[SubspaceService] = None, workers: int = 1):
        self.subspace = subspace or SubspaceService()
        self.workers = max(1, workers)
        logger.info(f"SvmService initialized (workers {self.workers}).")

    # --- Binary SVM ---

    def svm_train(self, X: np.ndarray, y: Sequence[int], c: float = constants.SVM_C,
                  gamma: Optional[float] = None, tol: float = constants.SVM_TOL,
                  max_passes: Optional[int] = None) -> SvmModel:
        """
        Trains a binary SVM on labels in {-1, +1}.

        Args:
            X: samples, shape (N, d).
            y: labels in {-1, +1}.
            c: box constraint.
            gamma: RBF width; defaults to 1/d.
            tol: stop once the maximal KKT violation is at most this.
            max_passes: number of sweeps of N working-set steps each, so the
                budget is max_passes * N steps. Defaults to 10 N sweeps
                (10 N^2 steps), raised to SVM_MIN_ITERATIONS for small N.

        Raises:
            DataError: one label is missing or shapes disagree.
            ConvergenceError: the budget runs out first.
            NumericError: the result breaks dual feasibility.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"SVM inputs disagree: X {X.shape}, y {y.shape}")
        if not (np.any(y == 1) and np.any(y == -1)) or np.any(np.abs(y) != 1):
            raise DataError("SVM training needs both labels -1 and +1 and nothing else")
        n, d = X.shape
        gamma = 1.0 / d if gamma is None else gamma
        if max_passes is None:
            max_iter = max(constants.SVM_PASSES_PER_SAMPLE * n * n, constants.SVM_MIN_ITERATIONS)
        else:
            max_iter = max_passes * n

        K = rbf_kernel(X, X, gamma)
        diag = np.diag(K).copy()
        lower = np.minimum(0.0, c * y)
        upper = np.maximum(0.0, c * y)
        beta = np.zeros(n)
        grad = y.copy()

        iteration = 0
        violation = np.inf
        while True:
            can_up = beta < upper
            can_down = beta > lower
            if not can_up.any() or not can_down.any():
                violation = 0.0
                break
            i = int(np.argmax(np.where(can_up, grad, -np.inf)))
            violation = grad[i] - float(grad[can_down].min())
            if violation <= tol:
                break
            if iteration >= max_iter:
                raise ConvergenceError(f"SMO did not converge within {max_iter} iterations", float(violation))
            # Second-order choice of j: largest objective gain b^2 / a among the
            # down-movable samples that violate together with i.
            gain = grad[i] - grad
            curvature = np.maximum(diag[i] + diag - 2.0 * K[i], constants.SVM_TAU)
            j = int(np.argmax(np.where(can_down & (gain > 0), gain * gain / curvature, -np.inf)))
            room_i = upper[i] - beta[i]
            room_j = beta[j] - lower[j]
            step = min(room_i, room_j, gain[j] / curvature[j])
            # Clipped coordinates land exactly on their bound.
            beta[i] = upper[i] if step == room_i else beta[i] + step
            beta[j] = lower[j] if step == room_j else beta[j] - step
            grad += step * (K[j] - K[i])
            iteration += 1

        alpha = beta * y
        if alpha.min() < -constants.DUAL_FEASIBILITY_TOL or alpha.max() > c + constants.DUAL_FEASIBILITY_TOL:
            raise NumericError("SMO left the box constraint")
        if abs(beta.sum()) > constants.DUAL_FEASIBILITY_TOL:
            raise NumericError(f"SMO broke the equality constraint (sum {beta.sum():.3e})")
        beta = np.clip(alpha, 0.0, c) * y

        free = (beta > lower + 1e-12) & (beta < upper - 1e-12)
        if free.any():
            bias = float(grad[free].mean())
        else:
            can_up, can_down = beta < upper, beta > lower
            top = grad[can_up].max() if can_up.any() else grad.max()
            bottom = grad[can_down].min() if can_down.any() else grad.min()
            bias = float((top + bottom) / 2.0)

        support = np.abs(beta) > 0
        logger.debug(f"SMO finished after {iteration} iterations, violation {violation:.2e}, "
                     f"{int(support.sum())}/{n} support vectors")
        return SvmModel(X[support].copy(), beta[support].copy(), bias, gamma, c)

    @staticmethod
    def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
        """sum_i beta_i exp(-gamma |x - x_i|^2) + b for one sample or a batch."""
        x = np.asarray(x, dtype=np.float64)
        batch = np.atleast_2d(x)
        if batch.shape[1] != model.input_dims:
            raise DataError(f"SVM expects {model.input_dims} features, got {batch.shape[1]}")
        scores = rbf_kernel(batch, model.support_vectors, model.gamma) @ model.dual_coef + model.bias
        return scores if x.ndim == 2 else scores[0]

    # --- Pair models ---

    def _inner_cv_accuracy(self, Z: np.ndarray, y: np.ndarray, c: float, gamma: float, tol: float,
                           assignment: np.ndarray) -> float:
        correct = 0
        for fold in np.unique(assignment):
            test = assignment == fold
            train = ~test
            if np.unique(y[train]).size < 2:
                continue
            try:
                model = self.svm_train(Z[train], y[train], c, gamma, tol)
            except (ConvergenceError, NumericError) as e:
                logger.debug(f"Grid point C={c}, gamma={gamma:.4g} failed on fold {fold}: {e}")
                continue
            predicted = np.where(self.svm_decision(model, Z[test]) >= 0, 1.0, -1.0)
            correct += int(np.count_nonzero(predicted == y[test]))
        return correct / float(y.size)

    def grid_search(self, Z: np.ndarray, y: np.ndarray, config: PipelineConfig,
                    pair: Tuple[int, int]) -> Tuple[float, float]:
        """Best (C, gamma) by inner stratified CV; the earliest grid point wins ties."""
        d = Z.shape[1]
        folds = effective_folds(y, config.inner_folds)
        assignment = stratified_folds(y, folds, make_rng(config.seed, STREAM_GRID, *pair))
        best: Tuple[float, float] = (config.svm_c, 1.0 / d)
        best_score = -1.0
        for c in constants.SVM_C_GRID:
            for multiple in constants.SVM_GAMMA_GRID:
                gamma = multiple / d
                score = self._inner_cv_accuracy(Z, y, c, gamma, config.svm_tol, assignment)
                if score > best_score:
                    best, best_score = (c, gamma), score
        logger.debug(f"{pair_key(pair)}: grid search chose C={best[0]}, gamma={best[1]:.4g} (accuracy {best_score:.3f})")
        return best

    def train_pair(self, X: np.ndarray, labels: Sequence[int], pair: Tuple[int, int],
                   patch_ids: Sequence[int], config: PipelineConfig) -> SvmModel:
        """
        PCA then SVM for one expression pair. The lower class index is the
        positive side.
        """
        labels = np.asarray(labels)
        a, b = pair
        counts = [int(np.count_nonzero(labels == a)), int(np.count_nonzero(labels == b))]
        if min(counts) < 2:
            raise DataError(f"{pair_key(pair)} needs at least two samples per class, got {counts}")
        y = np.where(labels == a, 1.0, -1.0)
        pca = self.subspace.pca_fit(X, config.pca_energy, config.pca_max_dims, n_classes=2)
        Z = self.subspace.pca_project(pca, X)
        if config.grid_search:
            c, gamma = self.grid_search(Z, y, config, pair)
        else:
            c = config.svm_c
            gamma = config.svm_gamma if config.svm_gamma is not None else 1.0 / Z.shape[1]
        model = self.svm_train(Z, y, c, gamma, config.svm_tol)
        return SvmModel(model.support_vectors, model.dual_coef, model.bias, model.gamma, model.c,
                        pair=pair, patch_ids=tuple(sorted(patch_ids)), pca=pca)

    @staticmethod
    def pair_features(blocks: np.ndarray, patch_ids: Sequence[int]) -> np.ndarray:
        """(N, 19, 4, bins) block histograms -> (N, k*4*bins) rows in (patch, block, bin) order."""
        ids = [p - 1 for p in sorted(patch_ids)]
        picked = np.asarray(blocks)[:, ids]
        return picked.reshape(picked.shape[0], -1)

    def oao_train(self, blocks: np.ndarray, labels: Sequence[int], selection: SalientSelection,
                  config: PipelineConfig) -> OaoEnsemble:
        """One model per unordered class pair, trained on that pair's salient patches."""
        labels = np.asarray(labels)
        missing = [c for c in range(NUM_CLASSES) if not np.any(labels == c)]
        if missing:
            raise DataError(f"one-against-one training needs all six classes; missing indices {missing}")

        def job(pair: Tuple[int, int]) -> SvmModel:
            mask = np.isin(labels, pair)
            ids = selection.for_pair(pair)
            return self.train_pair(self.pair_features(blocks[mask], ids), labels[mask], pair, ids, config)

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            models = list(pool.map(job, CLASS_PAIRS))
        logger.info(f"Trained {len(models)} pairwise SVMs on {labels.size} samples.")
        return OaoEnsemble(tuple(models))

    # --- Voting ---

    def pair_decision(self, model: SvmModel, blocks: np.ndarray) -> float:
        """Decision of ``model`` for one face's (19, 4, bins) block histograms."""
        features = self.pair_features(np.asarray(blocks)[None], model.patch_ids)[0]
        z = self.subspace.pca_project(model.pca, features) if model.pca is not None else features
        return float(self.svm_decision(model, z))

    @staticmethod
    def vote(decisions: Dict[Tuple[int, int], float], classes: Sequence[int]) -> Tuple[int, Tuple[int, ...], Tuple[float, ...]]:
        """
        Tallies pairwise decisions (>= 0 votes for the pair's lower class).

        Returns:
            (winner, votes per class, summed |decision| per class). A tie on
            votes goes to the larger summed |decision| and then to the lower
            class index.
        """
        index = {c: i for i, c in enumerate(classes)}
        votes = [0] * len(classes)
        strength = [0.0] * len(classes)
        for (a, b) in sorted(decisions):
            score = decisions[(a, b)]
            winner = a if score >= 0 else b
            votes[index[winner]] += 1
            strength[index[winner]] += abs(score)
        best = max(range(len(classes)), key=lambda i: (votes[i], strength[i], -i))
        return classes[best], tuple(votes), tuple(strength)

    def oao_predict(self, ensemble: OaoEnsemble, blocks: np.ndarray) -> Tuple[int, Tuple[int, ...], Tuple[float, ...]]:
        decisions = {model.pair: self.pair_decision(model, blocks) for model in ensemble.models}
        return self.vote(decisions, ensemble.classes)
