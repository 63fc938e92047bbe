# services/feature_service.py
# Local binary pattern labels, the five histogram binnings and assembly of
# block-histogram feature vectors from the active patches.

import csv
import logging
import os
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError
from core.models import AlignedFace, FeatureVector, GrayImage, PatchLayout
from core.pipeline_enums import LbpVariant
from services.patch_service import PatchService
from utils import constants

logger = logging.getLogger(__name__)

# (dx, dy) of neighbour n, starting east and turning counter-clockwise (y grows downward).
NEIGHBOR_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1),
)
UNLABELED = -1


def uniformity(label: int) -> int:
    """Circular count of 0/1 transitions in the 8-bit pattern."""
    label &= 0xFF
    rotated = ((label << 1) | (label >> 7)) & 0xFF
    return bin(label ^ rotated).count("1")


def _build_tables():
    labels = np.arange(256)
    uniform = np.array([uniformity(int(l)) <= 2 for l in labels])
    popcount = np.array([bin(int(l)).count("1") for l in labels])
    u2 = np.full(256, 58, dtype=np.int64)
    u2[uniform] = np.arange(int(uniform.sum()))
    riu2 = np.where(uniform, popcount, 9).astype(np.int64)
    return {
        LbpVariant.BINS256: labels.astype(np.int64),
        LbpVariant.BINS32: (labels // 8).astype(np.int64),
        LbpVariant.BINS16: (labels // 16).astype(np.int64),
        LbpVariant.U2: u2,
        LbpVariant.RIU2: riu2,
    }


BIN_TABLES = _build_tables()


def lbp_code(center: int, neighbors: Sequence[int]) -> int:
    if len(neighbors) != 8:
        raise ValueError(f"an LBP code needs 8 neighbours, got {len(neighbors)}")
    return sum(1 << n for n, value in enumerate(neighbors) if int(value) - int(center) >= 0)


def bin_index(label: int, variant: LbpVariant) -> int:
    if not 0 <= label <= 255:
        raise ValueError(f"LBP label out of range: {label}")
    return int(BIN_TABLES[variant][label])


class FeatureService:
    """
    Computes LBP block-histogram features. Only interior pixels are
    labeled; nothing is padded.
    """

    def __init__(self, patches: Optional[PatchService] = None):
        self.patches = patches or PatchService()
        logger.info("FeatureService initialized.")

    # --- Labels ---

    @staticmethod
    def lbp_map(img: GrayImage) -> np.ndarray:
        """Labels of the interior pixels, shape (height - 2, width - 2)."""
        if img.width < 3 or img.height < 3:
            raise DataError(f"LBP needs at least 3x3 pixels, got {img.width}x{img.height}")
        p = img.pixels.astype(np.int16)
        h, w = p.shape
        center = p[1:h - 1, 1:w - 1]
        labels = np.zeros(center.shape, dtype=np.int64)
        for n, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
            neighbor = p[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
            labels |= (neighbor >= center).astype(np.int64) << n
        return labels

    def face_label_map(self, img: GrayImage) -> np.ndarray:
        """Full-size label raster with the border marked UNLABELED."""
        labels = np.full((img.height, img.width), UNLABELED, dtype=np.int64)
        labels[1:-1, 1:-1] = self.lbp_map(img)
        return labels

    # --- Histograms ---

    @staticmethod
    def histogram(labels: np.ndarray, variant: LbpVariant, normalize: bool = True) -> np.ndarray:
        """
        Bin counts of ``labels`` under ``variant``; UNLABELED entries are
        ignored. Normalized histograms sum to 1 (all zeros when nothing is
        labeled).
        """
        flat = np.asarray(labels).ravel()
        flat = flat[flat >= 0]
        counts = np.bincount(BIN_TABLES[variant][flat], minlength=variant.bins).astype(np.float64)
        if not normalize:
            return counts
        total = counts.sum()
        return counts / total if total > 0 else counts

    def block_histograms(self, face: AlignedFace, variant: LbpVariant,
                         layout: Optional[PatchLayout] = None) -> np.ndarray:
        """
        Normalized histograms of all 19 patches, shape (19, 4, bins).

        Each block is labeled on its own by ``lbp_map``. Blocks narrower or
        shorter than 3 pixels (the 5-pixel patches at resolution 48) have no
        interior, so they take their labels from the whole-face map instead.
        """
        if layout is None:
            if face.landmarks is None:
                raise DataError("face has no landmarks to lay out patches")
            layout = self.patches.layout_patches(face.landmarks, face.resolution)
        pixels = face.image.pixels
        face_labels: Optional[np.ndarray] = None
        out = np.zeros((constants.NUM_PATCHES, 4, variant.bins), dtype=np.float64)
        for p_index, box in enumerate(layout.boxes):
            for b_index, block in enumerate(self.patches.block_boxes(box)):
                if block.w >= 3 and block.h >= 3:
                    labels = self.lbp_map(GrayImage(pixels[block.y:block.bottom, block.x:block.right]))
                else:
                    if face_labels is None:
                        face_labels = self.face_label_map(face.image)
                    labels = face_labels[block.y:block.bottom, block.x:block.right]
                out[p_index, b_index] = self.histogram(labels, variant)
        return out

    @staticmethod
    def vector_from_blocks(blocks: np.ndarray, patch_ids: Sequence[int], variant: LbpVariant) -> FeatureVector:
        ids = tuple(int(i) for i in patch_ids)
        if not ids:
            raise DataError("a feature vector needs at least one patch")
        if list(ids) != sorted(set(ids)) or ids[0] < 1 or ids[-1] > constants.NUM_PATCHES:
            raise DataError(f"patch ids must be distinct, ascending and within 1..19: {ids}")
        values = blocks[[i - 1 for i in ids]].reshape(-1)
        return FeatureVector(values.copy(), ids, variant)

    def feature_vector(self, face: AlignedFace, patch_ids: Sequence[int], variant: LbpVariant,
                       layout: Optional[PatchLayout] = None) -> FeatureVector:
        """Concatenated block histograms in (patch, block, bin) order."""
        return self.vector_from_blocks(self.block_histograms(face, variant, layout), patch_ids, variant)

    # --- Export ---

    @staticmethod
    def csv_header(patch_ids: Sequence[int], variant: LbpVariant) -> list:
        columns = ["path", "label"]
        for patch in patch_ids:
            for block in range(4):
                columns.extend(f"P{patch}_b{block}_{b}" for b in range(variant.bins))
        return columns

    def write_features_csv(self, path: str, rows: Iterable[Tuple[str, str, FeatureVector]]) -> int:
        """Writes (image path, label name, vector) rows; returns the row count."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        count = 0
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            for image_path, label, vector in rows:
                if count == 0:
                    writer.writerow(self.csv_header(vector.patch_ids, vector.variant))
                writer.writerow([image_path, label] + [repr(float(v)) for v in vector.values])
                count += 1
        logger.info(f"Wrote {count} feature row(s) to {path}")
        return count
