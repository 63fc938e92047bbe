# services/subspace_service.py
# PCA, Fisher LDA and the nearest-class-mean PCA-LDA classifier.

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.errors import DataError, NumericError
from core.models import LdaModel, PcaModel
from utils import constants

logger = logging.getLogger(__name__)

_POSITIVE_EIG_RTOL = 1e-10


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flips each column so its largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


class SubspaceService:
    """Fits and applies the linear projections used for saliency scoring and SVM inputs."""

    def __init__(self, energy: float = constants.PCA_ENERGY, max_dims: int = constants.PCA_MAX_DIMS):
        self.energy = energy
        self.max_dims = max_dims
        logger.info(f"SubspaceService initialized (energy {energy}, max dims {max_dims}).")

    # --- PCA ---

    def pca_fit(self, X: np.ndarray, energy: Optional[float] = None, d_max: Optional[int] = None,
                n_classes: int = 1) -> PcaModel:
        """
        Principal components of the sample covariance.

        Keeps the fewest leading components whose eigenvalues reach ``energy``
        of the total, capped at ``min(d_max, N - n_classes)`` and at the number
        of positive eigenvalues. The Gram matrix is decomposed instead when
        there are more dimensions than samples.

        Raises:
            DataError: fewer than two samples.
            NumericError: every sample is identical.
        """
        energy = self.energy if energy is None else energy
        d_max = self.max_dims if d_max is None else d_max
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise DataError(f"PCA needs at least two samples, got shape {X.shape}")
        n, d = X.shape
        mean = X.mean(axis=0)
        centered = X - mean

        if d <= n:
            eigvals, eigvecs = linalg.eigh(centered.T @ centered / (n - 1))
            order = np.argsort(eigvals)[::-1]
            eigvals, eigvecs = np.maximum(eigvals[order], 0.0), eigvecs[:, order]
        else:
            gram_vals, gram_vecs = linalg.eigh(centered @ centered.T / (n - 1))
            order = np.argsort(gram_vals)[::-1]
            gram_vals, gram_vecs = np.maximum(gram_vals[order], 0.0), gram_vecs[:, order]
            eigvals = gram_vals
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(gram_vals > 0, 1.0 / np.sqrt(gram_vals * (n - 1)), 0.0)
            eigvecs = centered.T @ gram_vecs * scale

        total = float(eigvals.sum())
        if total <= 0:
            raise NumericError("PCA: all samples are identical")
        positive = int(np.count_nonzero(eigvals > _POSITIVE_EIG_RTOL * eigvals[0]))
        fractions = np.cumsum(eigvals) / total
        keep = int(np.searchsorted(fractions, energy - 1e-12) + 1)
        cap = max(1, min(d_max, n - n_classes, positive))
        keep = max(1, min(keep, cap))

        components = _fix_signs(eigvecs[:, :keep])
        return PcaModel(mean, components, eigvals[:keep].copy())

    @staticmethod
    def pca_project(model: PcaModel, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != model.input_dims:
            raise DataError(f"PCA expects {model.input_dims} features, got {X.shape[-1]}")
        return (X - model.mean) @ model.components

    @staticmethod
    def pca_reconstruct(model: PcaModel, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) @ model.components.T + model.mean

    # --- LDA ---

    @staticmethod
    def scatter_matrices(X: np.ndarray, y: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(classes, S_w, S_b); each class scatter is scaled by 1/(N_c - 1)."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        classes = np.unique(y)
        overall = X.mean(axis=0)
        d = X.shape[1]
        s_w = np.zeros((d, d))
        s_b = np.zeros((d, d))
        for cls in classes:
            members = X[y == cls]
            if members.shape[0] < 2:
                raise DataError(f"LDA needs at least two samples of class {cls}")
            mean = members.mean(axis=0)
            centered = members - mean
            s_w += centered.T @ centered / (members.shape[0] - 1)
            diff = (mean - overall)[:, None]
            s_b += members.shape[0] * (diff @ diff.T)
        return classes, s_w, s_b

    def lda_fit(self, Xp: np.ndarray, y: Sequence[int]) -> LdaModel:
        """
        Fisher discriminant directions from the generalized problem
        S_b v = lambda (S_w + eps I) v, keeping at most n_classes - 1 columns.

        Raises:
            DataError: fewer than two classes.
            NumericError: both scatter matrices vanish or the solve fails.
        """
        Xp = np.asarray(Xp, dtype=np.float64)
        if Xp.ndim == 1:
            Xp = Xp[:, None]
        classes, s_w, s_b = self.scatter_matrices(Xp, y)
        if classes.size < 2:
            raise DataError("LDA needs at least two classes")
        d = Xp.shape[1]
        trace_w = float(np.trace(s_w))
        ridge = constants.LDA_RIDGE_FACTOR * trace_w / d
        if ridge <= 0:
            ridge = constants.LDA_RIDGE_FACTOR * float(np.trace(s_b)) / d
        if ridge <= 0:
            raise NumericError("LDA: both scatter matrices vanish")
        try:
            eigvals, eigvecs = linalg.eigh(s_b, s_w + ridge * np.eye(d))
        except linalg.LinAlgError as e:
            raise NumericError(f"LDA generalized eigenproblem failed: {e}") from e
        keep = min(classes.size - 1, d)
        order = np.argsort(eigvals)[::-1][:keep]
        projection = _fix_signs(eigvecs[:, order])

        y = np.asarray(y)
        projected = Xp @ projection
        means = np.vstack([projected[y == cls].mean(axis=0) for cls in classes])
        return LdaModel(projection, means, tuple(int(c) for c in classes), ridge)

    # --- Classification ---

    def pca_lda_fit(self, X: np.ndarray, y: Sequence[int]) -> Tuple[PcaModel, LdaModel]:
        n_classes = int(np.unique(np.asarray(y)).size)
        pca = self.pca_fit(X, n_classes=n_classes)
        return pca, self.lda_fit(self.pca_project(pca, X), y)

    def pca_lda_predict(self, pca: PcaModel, lda: LdaModel, X: np.ndarray) -> np.ndarray:
        """Nearest class mean in LDA space; equal distances go to the lower label."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        z = self.pca_project(pca, X) @ lda.projection
        dists = ((z[:, None, :] - lda.class_means[None, :, :]) ** 2).sum(axis=2)
        return np.asarray(lda.labels)[np.argmin(dists, axis=1)]

    def pca_lda_classify(self, pca: PcaModel, lda: LdaModel, x: np.ndarray) -> int:
        return int(self.pca_lda_predict(pca, lda, x)[0])
