# services/landmark_service.py
# Face alignment from eye centres, lip and inner-brow corner detection on the
# aligned face, the anthropometric fallback table and the landmark error metric.

import logging
import math
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import AlignmentError, DataError, LandmarkFailure
from core.models import (AlignedFace, BinaryImage, BoundingBox, FaceTransform, GrayImage,
                         LandmarkSet, Point, Region)
from core.pipeline_enums import EyeSide, Provenance
from services.imaging_service import ImagingService
from utils import constants

logger = logging.getLogger(__name__)


def _half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _clipped_roi(x0: float, x1: float, y0: float, y1: float, size: int) -> Optional[BoundingBox]:
    left, right = max(0, _half_up(x0)), min(size, _half_up(x1))
    top, bottom = max(0, _half_up(y0)), min(size, _half_up(y1))
    if right - left < 1 or bottom - top < 1:
        return None
    return BoundingBox(left, top, right - left, bottom - top)


def brow_threshold_window(resolution: int) -> int:
    window = max(3, resolution // 8)
    return window if window % 2 == 1 else window - 1


class LandmarkService:
    """
    Learning-free landmark localisation on an aligned R x R face.

    Lip corners come from the upper-lip edge component below the nose; inner
    brow corners from the largest edge component above each eye. Any point a
    detector cannot find is taken from the anthropometric table instead.
    """

    def __init__(self, imaging: Optional[ImagingService] = None):
        self.imaging = imaging or ImagingService()
        logger.info("LandmarkService initialized.")

    # --- Alignment ---

    def align_face(self, img: GrayImage, face: BoundingBox, left_eye: Point, right_eye: Point,
                   resolution: int) -> AlignedFace:
        """
        Levels the eye line, crops the face box and resizes to R x R in one
        bilinear resampling pass, then equalizes the histogram.

        Eyes given in the wrong order are swapped.

        Raises:
            AlignmentError: the two eye points coincide.
        """
        if left_eye.x > right_eye.x:
            logger.debug("Eye points arrived right-to-left; swapping.")
            left_eye, right_eye = right_eye, left_eye
        dx, dy = right_eye.x - left_eye.x, right_eye.y - left_eye.y
        if math.hypot(dx, dy) < 1e-9:
            raise AlignmentError(f"eye points coincide at ({left_eye.x:.2f}, {left_eye.y:.2f})")
        angle = math.atan2(dy, dx)
        transform = FaceTransform(left_eye.midpoint(right_eye), angle, face, resolution)

        axis = np.arange(resolution, dtype=np.float64)
        grid_v, grid_u = np.meshgrid(axis, axis, indexing="ij")
        sx, sy = transform.scale()
        bx = grid_u / sx + face.x
        by = grid_v / sy + face.y
        c, s = math.cos(angle), math.sin(angle)
        ox, oy = bx - transform.center.x, by - transform.center.y
        src_x = transform.center.x + c * ox - s * oy
        src_y = transform.center.y + s * ox + c * oy

        sampled = self.imaging.sample(img, src_x, src_y)
        equalized = self.imaging.equalize_histogram(sampled)
        logger.debug(f"Aligned face {face} at {math.degrees(angle):.2f} deg to {resolution}x{resolution}")
        return AlignedFace(equalized, resolution, None, transform)

    # --- Edge components ---

    def _edge_components(self, bits: BinaryImage, resolution: int) -> List[Region]:
        dilated = self.imaging.dilate(bits, constants.DILATION_RADIUS)
        area_min = constants.AREA_MIN_FRACTION * resolution * resolution
        regions = [r for r in self.imaging.connected_components(dilated, 8) if r.area >= area_min]
        return regions

    @staticmethod
    def _core_pixels(region: Region, bits: BinaryImage) -> np.ndarray:
        """Undilated edge pixels of ``region`` as (x, y) rows."""
        xs, ys = region.pixels[:, 0], region.pixels[:, 1]
        keep = bits.bits[ys, xs]
        core = region.pixels[keep]
        return core if core.shape[0] else region.pixels

    @staticmethod
    def _column_point(pixels: np.ndarray, column: int, roi: BoundingBox) -> Point:
        rows = pixels[pixels[:, 0] == column, 1]
        return Point(float(column + roi.x), float(rows.mean()) + roi.y)

    # --- Lip corners ---

    def mouth_roi(self, nose: Point, resolution: int) -> Optional[BoundingBox]:
        r0, r1 = constants.MOUTH_ROI_ROWS
        half = constants.MOUTH_ROI_HALF_WIDTH * resolution
        return _clipped_roi(nose.x - half, nose.x + half,
                            nose.y + r0 * resolution, nose.y + r1 * resolution, resolution)

    def detect_lip_corners(self, face: GrayImage, nose: Point) -> Tuple[Point, Point]:
        """
        Upper-lip corners below ``nose``.

        The mouth region is blurred, filtered for horizontal edges, binarized
        with Otsu and dilated; small components are dropped and the top-most
        remaining one is the upper lip. When its corners are too close for
        their distance from the vertical midline, the next component down is
        merged before taking the extremes again.

        Raises:
            LandmarkFailure: no component survives, or the corners collapse.
        """
        resolution = face.width
        roi = self.mouth_roi(nose, resolution)
        if roi is None:
            raise LandmarkFailure("mouth region lies outside the face")
        patch = self.imaging.crop(face, roi)
        edges = self.imaging.sobel_horizontal(self.imaging.gaussian_blur_3x3(patch))
        _, bits = self.imaging.otsu_threshold(edges)
        regions = self._edge_components(bits, resolution)
        if not regions:
            raise LandmarkFailure("no lip component in the mouth region")
        regions.sort(key=lambda r: (r.top, -r.area))

        core = self._core_pixels(regions[0], bits)
        left, right = self._extremes(core, roi)
        midline = (resolution - 1) / 2.0
        spread = max(abs(left.x - midline), abs(right.x - midline))
        ratio = left.distance_to(right) / spread if spread > 0 else 0.0
        if ratio < constants.SYMMETRY_RATIO_MIN and len(regions) > 1:
            logger.debug(f"Lip corner ratio {ratio:.2f} below {constants.SYMMETRY_RATIO_MIN}; merging second component.")
            core = np.vstack([core, self._core_pixels(regions[1], bits)])
            left, right = self._extremes(core, roi)
        if not left.x < right.x:
            raise LandmarkFailure(f"lip corners collapse at x={left.x:.1f}")
        return left, right

    def _extremes(self, pixels: np.ndarray, roi: BoundingBox) -> Tuple[Point, Point]:
        xs = pixels[:, 0]
        return (self._column_point(pixels, int(xs.min()), roi),
                self._column_point(pixels, int(xs.max()), roi))

    # --- Inner brow corners ---

    def brow_roi(self, eye: Point, resolution: int) -> Optional[BoundingBox]:
        above, below = constants.BROW_ROI_ROWS
        half = constants.BROW_ROI_HALF_WIDTH * resolution
        return _clipped_roi(eye.x - half, eye.x + half,
                            eye.y - above * resolution, eye.y - below * resolution, resolution)

    def detect_brow_corner(self, face: GrayImage, eye: Point, side: EyeSide) -> Point:
        """
        Inner corner of the brow above ``eye``: the pixel of the largest edge
        component nearest the vertical midline.

        Raises:
            LandmarkFailure: the region is empty or holds no component.
        """
        resolution = face.width
        roi = self.brow_roi(eye, resolution)
        if roi is None:
            raise LandmarkFailure(f"{side.value} brow region lies outside the face")
        patch = self.imaging.gaussian_blur_3x3(self.imaging.crop(face, roi))
        window = min(brow_threshold_window(resolution), 2 * (min(roi.w, roi.h) // 2) + 1)
        if window < 3:
            raise LandmarkFailure(f"{side.value} brow region is too small")
        dark = self.imaging.adaptive_threshold(patch, window, constants.BROW_THRESHOLD_OFFSET)
        edges = self.imaging.sobel_horizontal(dark.to_gray())
        _, bits = self.imaging.otsu_threshold(edges)
        regions = self._edge_components(bits, resolution)
        if not regions:
            raise LandmarkFailure(f"no {side.value} brow component")
        brow = max(regions, key=lambda r: r.area)  # first encountered wins ties
        core = self._core_pixels(brow, bits)
        column = int(core[:, 0].max()) if side == EyeSide.LEFT else int(core[:, 0].min())
        return self._column_point(core, column, roi)

    def detect_eyebrow_corners(self, face: GrayImage, eye_left: Point, eye_right: Point) -> Tuple[Point, Point]:
        return (self.detect_brow_corner(face, eye_left, EyeSide.LEFT),
                self.detect_brow_corner(face, eye_right, EyeSide.RIGHT))

    # --- Fallback & assembly ---

    @staticmethod
    def anthropometric_fallback(resolution: int, missing: Iterable[str]) -> Dict[str, Point]:
        points = {}
        for name in missing:
            if name not in constants.ANTHROPOMETRIC_TABLE:
                raise DataError(f"unknown landmark name '{name}'")
            fx, fy = constants.ANTHROPOMETRIC_TABLE[name]
            points[name] = Point(float(_half_up(fx * resolution)), float(_half_up(fy * resolution)))
        return points

    def fallback_landmarks(self, resolution: int) -> LandmarkSet:
        """Every point from the anthropometric table."""
        return LandmarkSet({}, {}).merged(self.anthropometric_fallback(resolution, constants.LANDMARK_NAMES),
                                          Provenance.FALLBACK)

    def complete_landmarks(self, face: AlignedFace, eyes_nose: Dict[str, Optional[Point]]) -> LandmarkSet:
        """
        Builds the full LandmarkSet for an aligned face from the eye and nose
        points already mapped into it (None for a missed detection), running
        the lip and brow detectors and filling gaps from the fallback table.
        """
        resolution = face.resolution
        image = face.image
        landmarks = LandmarkSet({}, {})
        found = {n: p for n, p in eyes_nose.items() if p is not None and self._inside(p, resolution)}
        if "left_eye" in found and "right_eye" in found and not found["left_eye"].x < found["right_eye"].x:
            found.pop("left_eye")
            found.pop("right_eye")
        landmarks = landmarks.merged(found, Provenance.DETECTED)
        missing = [n for n in ("left_eye", "right_eye", "nose") if n not in found]
        landmarks = landmarks.merged(self.anthropometric_fallback(resolution, missing), Provenance.FALLBACK)
        if not landmarks["left_eye"].x < landmarks["right_eye"].x:
            landmarks = landmarks.merged(self.anthropometric_fallback(resolution, ("left_eye", "right_eye")),
                                         Provenance.FALLBACK)

        try:
            lip_left, lip_right = self.detect_lip_corners(image, landmarks["nose"])
            landmarks = landmarks.merged({"lip_left": lip_left, "lip_right": lip_right}, Provenance.DETECTED)
        except LandmarkFailure as e:
            logger.debug(f"Lip corners fall back: {e}")
            landmarks = landmarks.merged(self.anthropometric_fallback(resolution, ("lip_left", "lip_right")),
                                         Provenance.FALLBACK)

        for side, eye_name, brow_name in ((EyeSide.LEFT, "left_eye", "brow_inner_left"),
                                          (EyeSide.RIGHT, "right_eye", "brow_inner_right")):
            try:
                point = self.detect_brow_corner(image, landmarks[eye_name], side)
                landmarks = landmarks.merged({brow_name: point}, Provenance.DETECTED)
            except LandmarkFailure as e:
                logger.debug(f"{brow_name} falls back: {e}")
                landmarks = landmarks.merged(self.anthropometric_fallback(resolution, (brow_name,)),
                                             Provenance.FALLBACK)
        landmarks.check_invariants(resolution)
        return landmarks

    @staticmethod
    def _inside(p: Point, resolution: int) -> bool:
        return 0 <= p.x <= resolution - 1 and 0 <= p.y <= resolution - 1

    # --- Evaluation ---

    @staticmethod
    def landmark_error(pred: LandmarkSet, truth: LandmarkSet, n: Optional[int] = None) -> float:
        """
        Mean point distance normalised by the true inter-pupil distance:
        e = sum(d_i) / (n * s).
        """
        names = truth.names()
        if set(pred.names()) != set(names):
            raise DataError(f"landmark names differ: {sorted(pred.names())} vs {sorted(names)}")
        s = truth["left_eye"].distance_to(truth["right_eye"])
        if s <= 0:
            raise DataError("ground-truth eye pupils coincide")
        count = len(names) if n is None else n
        if count < 1:
            raise DataError("landmark error needs at least one point")
        total = sum(pred[name].distance_to(truth[name]) for name in names)
        return total / (count * s)

    @staticmethod
    def cdf_thresholds(step: float = constants.LANDMARK_CDF_STEP,
                       maximum: float = constants.LANDMARK_CDF_MAX) -> np.ndarray:
        count = int(round(maximum / step)) + 1
        return np.round(np.arange(count) * step, 10)

    @staticmethod
    def error_cdf(errors: Sequence[float], thresholds: np.ndarray) -> np.ndarray:
        """Fraction of errors at or below each threshold (zeros when no errors)."""
        values = np.sort(np.asarray(errors, dtype=np.float64))
        if values.size == 0:
            return np.zeros_like(thresholds, dtype=np.float64)
        return np.searchsorted(values, thresholds, side="right") / float(values.size)

    # --- Landmark files ---

    def read_landmarks(self, path: str, resolution: Optional[int] = None) -> LandmarkSet:
        """
        Reads ``<name> <x> <y>`` lines; every point is marked as ground truth.

        A ``# resolution <R>`` comment declares the face size the points refer
        to. When it differs from ``resolution`` the points are rescaled
        corner-to-corner.
        """
        if not os.path.exists(path):
            raise DataError(f"landmark file not found: {path}")
        points: Dict[str, Point] = {}
        declared: Optional[int] = None
        with open(path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                text = line.strip()
                if text.startswith("#"):
                    words = text[1:].split()
                    if len(words) == 2 and words[0] == "resolution" and words[1].isdigit():
                        declared = int(words[1])
                    continue
                if not text:
                    continue
                parts = text.split()
                if len(parts) != 3:
                    raise DataError(f"{path}: line {number}: expected '<name> <x> <y>'")
                name = parts[0]
                if name not in constants.LANDMARK_NAMES:
                    raise DataError(f"{path}: line {number}: unknown landmark '{name}'")
                if name in points:
                    raise DataError(f"{path}: line {number}: duplicate landmark '{name}'")
                try:
                    points[name] = Point(float(parts[1]), float(parts[2]))
                except ValueError:
                    raise DataError(f"{path}: line {number}: non-numeric coordinate") from None
        missing = [n for n in constants.LANDMARK_NAMES if n not in points]
        if missing:
            raise DataError(f"{path}: missing landmarks {missing}")
        if declared and resolution and declared != resolution and declared > 1:
            factor = (resolution - 1) / (declared - 1)
            points = {n: Point(p.x * factor, p.y * factor) for n, p in points.items()}
        return LandmarkSet(points, {n: Provenance.GROUND_TRUTH for n in points})

    @staticmethod
    def format_landmarks(landmarks: LandmarkSet, resolution: Optional[int] = None) -> str:
        header = f"# resolution {resolution}\n" if resolution else ""
        return header + "".join(f"{name} {landmarks[name].x:.3f} {landmarks[name].y:.3f}\n"
                                for name in landmarks.names())

    def write_landmarks(self, landmarks: LandmarkSet, path: str, resolution: Optional[int] = None) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(self.format_landmarks(landmarks, resolution))
        logger.debug(f"Wrote {len(landmarks.names())} landmarks to {path}")
