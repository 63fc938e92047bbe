# utils/rng.py
"""
Seeded randomness for the whole pipeline.

Every random draw goes through ``make_rng``: a numpy ``Generator`` backed by
PCG64, a 64-bit permuted congruential generator. Each purpose (saliency folds,
cross-validation, fused splits, grid search, synthetic data) uses its own
stream id, so changing one procedure never shifts the draws of another.
"""

import logging
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

# --- Stream ids ---
STREAM_SALIENCY = 1
STREAM_CROSSVAL = 2
STREAM_FUSED = 3
STREAM_GRID = 4
STREAM_SYNTH = 5


def make_rng(seed: int, stream: int = 0, *extra: int) -> np.random.Generator:
    """PCG64 generator for (seed, stream, *extra); identical inputs give identical draws."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)] + [int(e) for e in extra]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def shuffled(indices: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Fisher-Yates shuffle (numpy's in-place ``shuffle``) of a copy of ``indices``."""
    out = np.array(indices, dtype=np.int64)
    rng.shuffle(out)
    return out


def stratified_folds(labels: Sequence[int], folds: int, rng: np.random.Generator) -> np.ndarray:
    """
    Assigns every sample a fold in [0, folds).

    Classes are visited in ascending order. The members of a class are
    shuffled and dealt round-robin, continuing from the fold where the
    previous class stopped, so fold sizes differ by at most one overall and
    every class is spread as evenly as possible.

    Args:
        labels: class label per sample.
        folds: number of folds, at least 2.
        rng: generator from ``make_rng``.

    Returns:
        Integer array of fold indices, one per sample.
    """
    labels = np.asarray(labels)
    assignment = np.full(labels.shape[0], -1, dtype=np.int64)
    cursor = 0
    for cls in np.unique(labels):
        members = shuffled(np.flatnonzero(labels == cls), rng)
        for member in members:
            assignment[member] = cursor % folds
            cursor += 1
    return assignment


def effective_folds(labels: Sequence[int], requested: int, floor: int = 2) -> int:
    """Reduces ``requested`` to the smallest class size (never below ``floor``)."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    smallest = int(counts.min()) if counts.size else 0
    if smallest >= requested:
        return requested
    reduced = max(floor, smallest)
    logger.warning(f"Smallest class has {smallest} samples; reducing folds from {requested} to {reduced}.")
    return reduced
