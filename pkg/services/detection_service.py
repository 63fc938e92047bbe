# services/detection_service.py
# Haar cascade evaluation over integral images, neighbour grouping and the
# coarse face-relative search regions for eyes and nose.

import logging
import os
import threading
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from core.errors import CascadeFormatError, DataError, UsageError
from core.models import (BoundingBox, CascadeStage, GrayImage, HaarCascade, HaarRect,
                         IntegralImage, WeakClassifier)
from core.pipeline_enums import EyeSide
from services.imaging_service import ImagingService, round_half_up
from utils import constants

logger = logging.getLogger(__name__)

_CASCADE_MAGIC = ("CASCADE", "v1")


def _half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def coarse_roi(face_box: BoundingBox, fractions: Tuple[float, float, float, float],
               width: Optional[int] = None, height: Optional[int] = None) -> BoundingBox:
    """Face-relative region from (row0, row1, col0, col1) fractions, clipped to the raster."""
    r0, r1, c0, c1 = fractions
    x0 = face_box.x + _half_up(c0 * face_box.w)
    x1 = face_box.x + _half_up(c1 * face_box.w)
    y0 = face_box.y + _half_up(r0 * face_box.h)
    y1 = face_box.y + _half_up(r1 * face_box.h)
    if width is not None:
        x0, x1 = max(0, x0), min(width, x1)
    if height is not None:
        y0, y1 = max(0, y0), min(height, y1)
    return BoundingBox(x0, y0, max(1, x1 - x0), max(1, y1 - y0))


class DetectionService:
    """
    Viola-Jones style detection with cascades loaded from text files.

    A window's feature value is the weighted sum of its rectangle sums divided
    by (window area * window standard deviation), the deviation floored at 1.
    A weak classifier contributes ``left`` when the value is below its
    threshold and ``right`` otherwise; a window passes when every stage sum
    reaches the stage threshold.
    """

    def __init__(self, imaging: Optional[ImagingService] = None,
                 cascade_dir: str = constants.CASCADE_DIR,
                 scale_step: float = constants.DEFAULT_SCALE_STEP,
                 min_neighbors: int = constants.MIN_NEIGHBORS):
        if scale_step <= 1.0:
            raise UsageError(f"scale step must exceed 1, got {scale_step}")
        self.imaging = imaging or ImagingService()
        self.cascade_dir = cascade_dir
        self.scale_step = scale_step
        self.min_neighbors = min_neighbors
        self._cascades: Dict[str, HaarCascade] = {}
        self._lock = threading.Lock()
        logger.info(f"DetectionService initialized (cascades: {cascade_dir}, scale step {scale_step}).")

    # --- Cascade files ---

    def load_cascade(self, path: str) -> HaarCascade:
        """
        Parses the line-oriented cascade format::

            CASCADE v1 <w> <h> <nstages>
            STAGE <threshold> <nweak>
            WEAK <thr> <left> <right> <nrect>
            RECT <x> <y> <w> <h> <weight>

        Blank lines and lines starting with ``#`` are ignored.

        Raises:
            CascadeFormatError: malformed or truncated content (names the line),
                or a rectangle outside the canonical window.
        """
        if not os.path.exists(path):
            raise DataError(f"cascade file not found: {path}")
        with open(path, "r", encoding="utf-8") as handle:
            raw_lines = handle.readlines()
        lines = [(i, line.split()) for i, line in enumerate(raw_lines, start=1)
                 if line.strip() and not line.lstrip().startswith("#")]
        last_line = len(raw_lines)
        cursor = 0

        def take(keyword: str, count: int) -> Tuple[int, List[str]]:
            nonlocal cursor
            if cursor >= len(lines):
                raise CascadeFormatError(f"unexpected end of file, expected {keyword}", last_line)
            number, tokens = lines[cursor]
            cursor += 1
            if not tokens or tokens[0] != keyword or len(tokens) != count + 1:
                raise CascadeFormatError(f"expected '{keyword}' with {count} values, got '{' '.join(tokens)}'", number)
            return number, tokens[1:]

        def number_of(text: str, kind, line: int):
            try:
                return kind(text)
            except ValueError:
                raise CascadeFormatError(f"'{text}' is not a valid {kind.__name__}", line) from None

        line_no, header = take("CASCADE", 4)
        if header[0] != _CASCADE_MAGIC[1]:
            raise CascadeFormatError(f"unsupported cascade version '{header[0]}'", line_no)
        width, height, n_stages = (number_of(t, int, line_no) for t in header[1:])
        if width < 1 or height < 1 or n_stages < 1:
            raise CascadeFormatError("window size and stage count must be positive", line_no)

        stages: List[CascadeStage] = []
        for _ in range(n_stages):
            line_no, fields = take("STAGE", 2)
            stage_thr = number_of(fields[0], float, line_no)
            n_weak = number_of(fields[1], int, line_no)
            if n_weak < 1:
                raise CascadeFormatError("a stage needs at least one weak classifier", line_no)
            weak: List[WeakClassifier] = []
            for _ in range(n_weak):
                line_no, fields = take("WEAK", 4)
                thr, left, right = (number_of(t, float, line_no) for t in fields[:3])
                n_rect = number_of(fields[3], int, line_no)
                if not 2 <= n_rect <= 3:
                    raise CascadeFormatError(f"a weak classifier has 2 or 3 rectangles, got {n_rect}", line_no)
                rects = []
                for _ in range(n_rect):
                    line_no, fields = take("RECT", 5)
                    x, y, w, h = (number_of(t, int, line_no) for t in fields[:4])
                    weight = number_of(fields[4], float, line_no)
                    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
                        raise CascadeFormatError(
                            f"rectangle ({x},{y},{w},{h}) lies outside the {width}x{height} window", line_no)
                    rects.append(HaarRect(x, y, w, h, weight))
                weak.append(WeakClassifier(thr, left, right, tuple(rects)))
            stages.append(CascadeStage(stage_thr, tuple(weak)))
        if cursor != len(lines):
            raise CascadeFormatError("trailing content after the last stage", lines[cursor][0])

        cascade = HaarCascade(width, height, tuple(stages), name=os.path.basename(path))
        logger.debug(f"Loaded cascade {cascade.name}: {width}x{height}, {n_stages} stage(s)")
        return cascade

    def cascade(self, filename: str) -> HaarCascade:
        with self._lock:
            if filename not in self._cascades:
                self._cascades[filename] = self.load_cascade(os.path.join(self.cascade_dir, filename))
            return self._cascades[filename]

    # --- Window evaluation ---

    @staticmethod
    def scaled_rect(rect: HaarRect, scale: float, win_w: int, win_h: int) -> Tuple[int, int, int, int]:
        x = min(_half_up(rect.x * scale), win_w - 1)
        y = min(_half_up(rect.y * scale), win_h - 1)
        w = min(max(1, _half_up(rect.w * scale)), win_w - x)
        h = min(max(1, _half_up(rect.h * scale)), win_h - y)
        return x, y, w, h

    @staticmethod
    def _rect_sums(table: np.ndarray, xs: np.ndarray, ys: np.ndarray, w: int, h: int) -> np.ndarray:
        return (table[ys + h, xs + w] - table[ys, xs + w] - table[ys + h, xs] + table[ys, xs]).astype(np.float64)

    def evaluate_windows(self, ii: IntegralImage, ii_sq: IntegralImage, cascade: HaarCascade,
                         xs: np.ndarray, ys: np.ndarray, scale: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Runs the cascade on windows with top-left corners (xs, ys) at ``scale``.

        Returns:
            (passed mask, per-stage sums with shape (n_stages, n_windows)).
        """
        win_w = _half_up(cascade.width * scale)
        win_h = _half_up(cascade.height * scale)
        area = float(win_w * win_h)
        total = self._rect_sums(ii.table, xs, ys, win_w, win_h)
        total_sq = self._rect_sums(ii_sq.table, xs, ys, win_w, win_h)
        mean = total / area
        std = np.sqrt(np.maximum(total_sq / area - mean * mean, 0.0))
        std = np.maximum(std, constants.WINDOW_STD_FLOOR)
        # Rect sums grow with the window area; dividing by it too keeps feature
        # values and thresholds the same at every scale.
        norm = std * area

        passed = np.ones(xs.shape, dtype=bool)
        stage_sums = np.zeros((len(cascade.stages),) + xs.shape, dtype=np.float64)
        for s_index, stage in enumerate(cascade.stages):
            stage_sum = np.zeros(xs.shape, dtype=np.float64)
            for weak in stage.weak:
                value = np.zeros(xs.shape, dtype=np.float64)
                for rect in weak.rects:
                    rx, ry, rw, rh = self.scaled_rect(rect, scale, win_w, win_h)
                    value += rect.weight * self._rect_sums(ii.table, xs + rx, ys + ry, rw, rh)
                value /= norm
                stage_sum += np.where(value < weak.threshold, weak.left, weak.right)
            stage_sums[s_index] = stage_sum
            passed &= stage_sum >= stage.threshold
        return passed, stage_sums

    # --- Detection ---

    def detect(self, img: GrayImage, cascade: HaarCascade, roi: Optional[BoundingBox] = None,
               scale_step: Optional[float] = None, min_size: Optional[float] = None) -> List[BoundingBox]:
        """
        Multi-scale sliding-window search inside ``roi``.

        Args:
            img: image to scan.
            cascade: loaded cascade.
            roi: search region (defaults to the whole image); every returned
                box lies inside it.
            scale_step: ratio between successive window scales; must exceed 1.
            min_size: smallest window side scanned; defaults to a fifth of
                the ROI's smaller side.

        Returns:
            Grouped boxes sorted by area, largest first. Empty when nothing passes.
        """
        roi = roi or BoundingBox(0, 0, img.width, img.height)
        if roi.x < 0 or roi.y < 0 or roi.right > img.width or roi.bottom > img.height:
            raise DataError(f"ROI {roi} exceeds the {img.width}x{img.height} image")
        step = self.scale_step if scale_step is None else scale_step
        if step <= 1.0:
            raise UsageError(f"scale step must exceed 1, got {step}")
        if min_size is None:
            min_size = constants.MIN_SIZE_FRACTION * min(roi.w, roi.h)

        ii = self.imaging.integral(img)
        ii_sq = self.imaging.integral(img, squared=True)
        hits: List[Tuple[int, int, int, int]] = []
        scale = 1.0
        while True:
            win_w = _half_up(cascade.width * scale)
            win_h = _half_up(cascade.height * scale)
            if win_w > roi.w or win_h > roi.h:
                break
            if min(win_w, win_h) >= min_size:
                stride = max(1, _half_up(scale))
                gx = np.arange(roi.x, roi.right - win_w + 1, stride)
                gy = np.arange(roi.y, roi.bottom - win_h + 1, stride)
                ys, xs = np.meshgrid(gy, gx, indexing="ij")
                xs, ys = xs.ravel(), ys.ravel()
                passed, _ = self.evaluate_windows(ii, ii_sq, cascade, xs, ys, scale)
                hits.extend((int(x), int(y), win_w, win_h) for x, y in zip(xs[passed], ys[passed]))
            scale *= step

        boxes = self.group_boxes(hits, roi)
        logger.debug(f"{cascade.name or 'cascade'}: {len(hits)} raw hits -> {len(boxes)} grouped box(es) in {roi}")
        return boxes

    def group_boxes(self, hits: List[Tuple[int, int, int, int]], roi: BoundingBox) -> List[BoundingBox]:
        """Clusters similar windows; clusters with enough members become their mean box."""
        if len(hits) < self.min_neighbors:
            return []
        arr = np.asarray(hits, dtype=np.float64)
        x, y, w, h = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
        delta = constants.GROUP_EPS * 0.5 * (np.minimum.outer(w, w) + np.minimum.outer(h, h))
        similar = ((np.abs(np.subtract.outer(x, x)) <= delta)
                   & (np.abs(np.subtract.outer(y, y)) <= delta)
                   & (np.abs(np.subtract.outer(x + w, x + w)) <= delta)
                   & (np.abs(np.subtract.outer(y + h, y + h)) <= delta))
        n_groups, labels = connected_components(csr_matrix(similar), directed=False)

        boxes: List[BoundingBox] = []
        for group in range(n_groups):
            members = arr[labels == group]
            if members.shape[0] < self.min_neighbors:
                continue
            mx, my, mw, mh = (int(v) for v in round_half_up(members.mean(axis=0)))
            mx = min(max(mx, roi.x), roi.right - 1)
            my = min(max(my, roi.y), roi.bottom - 1)
            mw = max(1, min(mw, roi.right - mx))
            mh = max(1, min(mh, roi.bottom - my))
            boxes.append(BoundingBox(mx, my, mw, mh))
        boxes.sort(key=lambda b: (-b.area, b.y, b.x))
        return boxes

    # --- Face parts ---

    def detect_face(self, img: GrayImage, cascade: Optional[HaarCascade] = None) -> Optional[BoundingBox]:
        cascade = cascade or self.cascade(constants.FACE_CASCADE_FILENAME)
        boxes = self.detect(img, cascade)
        return boxes[0] if boxes else None

    def eye_roi(self, img: GrayImage, side: EyeSide, face_box: BoundingBox) -> BoundingBox:
        fractions = constants.LEFT_EYE_ROI if side == EyeSide.LEFT else constants.RIGHT_EYE_ROI
        return coarse_roi(face_box, fractions, img.width, img.height)

    def nose_roi(self, img: GrayImage, face_box: BoundingBox) -> BoundingBox:
        return coarse_roi(face_box, constants.NOSE_ROI, img.width, img.height)

    def detect_eye(self, img: GrayImage, side: EyeSide, face_box: BoundingBox,
                   cascade: Optional[HaarCascade] = None) -> Optional[BoundingBox]:
        cascade = cascade or self.cascade(constants.EYE_CASCADE_FILENAME)
        boxes = self.detect(img, cascade, self.eye_roi(img, side, face_box))
        return boxes[0] if boxes else None

    def detect_nose(self, img: GrayImage, face_box: BoundingBox,
                    cascade: Optional[HaarCascade] = None) -> Optional[BoundingBox]:
        cascade = cascade or self.cascade(constants.NOSE_CASCADE_FILENAME)
        boxes = self.detect(img, cascade, self.nose_roi(img, face_box))
        return boxes[0] if boxes else None
