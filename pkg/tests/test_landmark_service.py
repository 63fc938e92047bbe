# tests/test_landmark_service.py
"""Alignment, lip and brow corner detection, fallback table, error metric and landmark files."""

import math
import os

import numpy as np
import pytest

from conftest import plain_face, symmetric_landmarks
from core.errors import AlignmentError, DataError, LandmarkFailure
from core.models import BoundingBox, GrayImage, LandmarkSet, Point
from core.pipeline_enums import EyeSide, Provenance
from services.landmark_service import LandmarkService, brow_threshold_window
from utils import constants, synthetic_faces

NOSE = Point(*synthetic_faces.TRUTH["nose"])


@pytest.fixture
def landmarks():
    return LandmarkService()


def close_to(p: Point, x: float, y: float, tol: float = 3.0) -> bool:
    return abs(p.x - x) <= tol and abs(p.y - y) <= tol


class TestAlignment:
    def test_level_eyes_keep_the_crop(self, landmarks, rng):
        img = GrayImage(rng.integers(0, 256, size=(96, 96), dtype=np.uint8))
        aligned = landmarks.align_face(img, BoundingBox(0, 0, 96, 96), Point(30, 40), Point(65, 40), 96)
        assert aligned.transform.angle == 0.0
        assert aligned.image.pixels.shape == (96, 96)
        assert np.array_equal(aligned.image.pixels, landmarks.imaging.equalize_histogram(img).pixels)

    def test_tilted_eyes_are_levelled(self, landmarks):
        img = GrayImage(np.full((120, 120), 90, dtype=np.uint8))
        left, right = Point(40, 40), Point(70, 70)
        aligned = landmarks.align_face(img, BoundingBox(10, 10, 100, 100), left, right, 48)
        assert aligned.transform.angle == pytest.approx(math.pi / 4)
        a, b = aligned.transform.to_aligned(left), aligned.transform.to_aligned(right)
        assert a.y == pytest.approx(b.y)
        assert a.x < b.x

    def test_transform_round_trip(self, landmarks):
        img = GrayImage(np.zeros((80, 80), dtype=np.uint8))
        aligned = landmarks.align_face(img, BoundingBox(5, 8, 60, 50), Point(20, 30), Point(50, 24), 96)
        p = Point(33.0, 41.0)
        back = aligned.transform.to_source(aligned.transform.to_aligned(p))
        assert back.x == pytest.approx(p.x) and back.y == pytest.approx(p.y)

    def test_swapped_eyes(self, landmarks, rng):
        img = GrayImage(rng.integers(0, 256, size=(64, 64), dtype=np.uint8))
        box = BoundingBox(4, 4, 50, 50)
        forward = landmarks.align_face(img, box, Point(15, 22), Point(45, 26), 48)
        swapped = landmarks.align_face(img, box, Point(45, 26), Point(15, 22), 48)
        assert forward.transform.angle == swapped.transform.angle
        assert np.array_equal(forward.image.pixels, swapped.image.pixels)

    def test_coincident_eyes(self, landmarks):
        img = GrayImage(np.zeros((20, 20), dtype=np.uint8))
        with pytest.raises(AlignmentError):
            landmarks.align_face(img, BoundingBox(0, 0, 20, 20), Point(5, 5), Point(5, 5), 48)


class TestLipCorners:
    def test_mouth_roi(self, landmarks):
        assert landmarks.mouth_roi(NOSE, 96) == BoundingBox(19, 62, 57, 34)

    def test_corners_at_bar_ends(self, landmarks):
        left, right = landmarks.detect_lip_corners(plain_face(), NOSE)
        # the corner row may sit anywhere on the bar's edge band
        assert abs(left.x - 34) <= 3 and 71 <= left.y <= 79
        assert abs(right.x - 61) <= 3 and 71 <= right.y <= 79

    def test_off_centre_lip_merges_second_component(self, landmarks):
        face = np.full((96, 96), 180, dtype=np.uint8)
        face[73:78, 30:43] = 30
        face[75:80, 53:66] = 30
        left, right = landmarks.detect_lip_corners(GrayImage(face), NOSE)
        assert left.x < 35
        assert right.x > 60

    def test_blank_region_fails(self, landmarks):
        with pytest.raises(LandmarkFailure):
            landmarks.detect_lip_corners(GrayImage(np.full((96, 96), 150, dtype=np.uint8)), NOSE)

    def test_nose_at_bottom_edge_fails(self, landmarks):
        with pytest.raises(LandmarkFailure):
            landmarks.detect_lip_corners(plain_face(), Point(47.5, 95.0))


class TestBrowCorners:
    @pytest.mark.parametrize("resolution,window", [(48, 5), (96, 11), (144, 17), (192, 23), (16, 3)])
    def test_threshold_window(self, resolution, window):
        assert brow_threshold_window(resolution) == window

    def test_brow_roi(self, landmarks):
        eye = Point(*synthetic_faces.TRUTH["left_eye"])
        assert landmarks.brow_roi(eye, 96) == BoundingBox(14, 10, 29, 22)

    def test_inner_corners(self, landmarks):
        face = plain_face()
        left_eye = Point(*synthetic_faces.TRUTH["left_eye"])
        right_eye = Point(*synthetic_faces.TRUTH["right_eye"])
        left, right = landmarks.detect_eyebrow_corners(face, left_eye, right_eye)
        assert close_to(left, 38, 21)
        assert close_to(right, 57, 21)

    def test_blank_region_fails(self, landmarks):
        face = GrayImage(np.full((96, 96), 150, dtype=np.uint8))
        with pytest.raises(LandmarkFailure):
            landmarks.detect_brow_corner(face, Point(28.5, 33.5), EyeSide.LEFT)


class TestMirroring:
    @pytest.fixture
    def lopsided(self):
        """Plain face with a longer right mouth end and a longer left brow."""
        pixels = plain_face().pixels.copy()
        pixels[73:78, 62:65] = synthetic_faces.DARK
        pixels[20:23, 39:41] = synthetic_faces.DARK
        return GrayImage(pixels)

    @staticmethod
    def mirror(p: Point) -> Point:
        return Point(95 - p.x, p.y)

    def test_flip_mirrors_lip_corners(self, landmarks, lopsided):
        flipped = GrayImage(np.fliplr(lopsided.pixels))
        left, right = landmarks.detect_lip_corners(lopsided, NOSE)
        flip_left, flip_right = landmarks.detect_lip_corners(flipped, self.mirror(NOSE))
        assert close_to(flip_left, self.mirror(right).x, self.mirror(right).y, tol=1.0)
        assert close_to(flip_right, self.mirror(left).x, self.mirror(left).y, tol=1.0)

    def test_flip_mirrors_brow_corners(self, landmarks, lopsided):
        flipped = GrayImage(np.fliplr(lopsided.pixels))
        for eye_name, side, other in (("left_eye", EyeSide.LEFT, EyeSide.RIGHT),
                                      ("right_eye", EyeSide.RIGHT, EyeSide.LEFT)):
            eye = Point(*synthetic_faces.TRUTH[eye_name])
            corner = landmarks.detect_brow_corner(lopsided, eye, side)
            flip_corner = landmarks.detect_brow_corner(flipped, self.mirror(eye), other)
            assert close_to(flip_corner, self.mirror(corner).x, self.mirror(corner).y, tol=1.0)

    def test_hair_stripe_does_not_move_the_brow_corner(self, landmarks):
        pixels = plain_face().pixels.copy()
        pixels[:, 23:25] = synthetic_faces.DARK
        eye = Point(*synthetic_faces.TRUTH["left_eye"])
        corner = landmarks.detect_brow_corner(GrayImage(pixels), eye, EyeSide.LEFT)
        assert close_to(corner, *synthetic_faces.TRUTH["brow_inner_left"])


class TestAssembly:
    def test_fallback_table(self, landmarks):
        points = landmarks.anthropometric_fallback(96, ["nose", "lip_left", "right_eye"])
        assert points["nose"] == Point(48.0, 53.0)
        assert points["lip_left"] == Point(34.0, 75.0)
        assert points["right_eye"] == Point(67.0, 34.0)

    def test_fallback_unknown_name(self, landmarks):
        with pytest.raises(DataError):
            landmarks.anthropometric_fallback(96, ["chin"])

    def test_fallback_landmarks_are_complete(self, landmarks):
        lm = landmarks.fallback_landmarks(48)
        assert lm.is_complete()
        assert all(lm.provenance_of(n) == Provenance.FALLBACK for n in constants.LANDMARK_NAMES)
        lm.check_invariants(48)

    def test_complete_on_plain_face(self, landmarks):
        face = plain_face()
        aligned = landmarks.align_face(face, BoundingBox(0, 0, 96, 96), Point(28.5, 33.5), Point(66.5, 33.5), 96)
        found = {n: Point(*synthetic_faces.TRUTH[n]) for n in ("left_eye", "right_eye", "nose")}
        lm = landmarks.complete_landmarks(aligned, found)
        assert lm.all_detected()
        for name in ("lip_left", "lip_right"):
            truth = synthetic_faces.TRUTH[name]
            assert abs(lm[name].x - truth[0]) <= 3 and 71 <= lm[name].y <= 79
        for name in ("brow_inner_left", "brow_inner_right"):
            assert close_to(lm[name], *synthetic_faces.TRUTH[name])

    def test_missing_detections_fall_back(self, landmarks):
        blank = GrayImage(np.full((48, 48), 120, dtype=np.uint8))
        aligned = landmarks.align_face(blank, BoundingBox(0, 0, 48, 48), Point(14, 17), Point(33, 17), 48)
        lm = landmarks.complete_landmarks(aligned, {"left_eye": None, "right_eye": None, "nose": None})
        assert lm.is_complete()
        assert lm.provenance_of("lip_left") == Provenance.FALLBACK
        assert lm.provenance_of("brow_inner_right") == Provenance.FALLBACK
        assert lm["nose"] == Point(24.0, 26.0)

    def test_crossed_eyes_are_replaced(self, landmarks):
        blank = GrayImage(np.full((48, 48), 120, dtype=np.uint8))
        aligned = landmarks.align_face(blank, BoundingBox(0, 0, 48, 48), Point(14, 17), Point(33, 17), 48)
        lm = landmarks.complete_landmarks(aligned, {"left_eye": Point(30, 17), "right_eye": Point(15, 17),
                                                    "nose": Point(24, 26)})
        assert lm.provenance_of("left_eye") == Provenance.FALLBACK
        assert lm["left_eye"].x < lm["right_eye"].x


class TestError:
    def test_identical_sets(self, landmarks):
        truth = symmetric_landmarks()
        assert landmarks.landmark_error(truth, truth) == 0.0

    def test_uniform_shift(self, landmarks):
        truth = symmetric_landmarks()
        s = truth["left_eye"].distance_to(truth["right_eye"])
        shifted = LandmarkSet({n: p.offset(0.1 * s, 0.0) for n, p in truth.points.items()})
        assert landmarks.landmark_error(shifted, truth) == pytest.approx(0.1)

    @pytest.mark.parametrize("factor", [0.5, 2.0, 3.7])
    def test_error_ignores_scale(self, landmarks, rng, factor):
        truth = symmetric_landmarks()
        pred = LandmarkSet({n: p.offset(*rng.normal(scale=2.0, size=2)) for n, p in truth.points.items()})

        def scaled(lm: LandmarkSet) -> LandmarkSet:
            return LandmarkSet({n: Point(p.x * factor, p.y * factor) for n, p in lm.points.items()})

        expected = landmarks.landmark_error(pred, truth)
        assert landmarks.landmark_error(scaled(pred), scaled(truth)) == pytest.approx(expected)

    def test_name_mismatch(self, landmarks):
        truth = symmetric_landmarks()
        partial = LandmarkSet({n: p for n, p in truth.points.items() if n != "nose"})
        with pytest.raises(DataError):
            landmarks.landmark_error(partial, truth)

    def test_cdf(self, landmarks):
        thresholds = landmarks.cdf_thresholds()
        assert thresholds.size == 31
        assert thresholds[0] == 0.0 and thresholds[-1] == pytest.approx(0.30)
        cdf = landmarks.error_cdf([0.05, 0.1, 0.5, 0.02], thresholds)
        assert np.all(np.diff(cdf) >= 0)
        assert cdf[10] == pytest.approx(0.75)
        assert cdf[-1] == pytest.approx(0.75)
        assert not landmarks.error_cdf([], thresholds).any()


class TestLandmarkFiles:
    def test_round_trip(self, landmarks, tmp_path):
        truth = synthetic_faces.truth_landmarks()
        path = os.path.join(str(tmp_path), "face.pts")
        landmarks.write_landmarks(truth, path, 96)
        read = landmarks.read_landmarks(path, 96)
        for name in constants.LANDMARK_NAMES:
            assert read[name].x == pytest.approx(truth[name].x, abs=1e-3)
            assert read.provenance_of(name) == Provenance.GROUND_TRUTH

    def test_rescaled_to_another_resolution(self, landmarks, tmp_path):
        truth = synthetic_faces.truth_landmarks()
        path = os.path.join(str(tmp_path), "face.pts")
        landmarks.write_landmarks(truth, path, 96)
        read = landmarks.read_landmarks(path, 48)
        assert read["nose"].x == pytest.approx(47.5 * 47 / 95, abs=1e-3)
        assert read["nose"].y == pytest.approx(52.5 * 47 / 95, abs=1e-3)

    @pytest.mark.parametrize("body,message", [
        ("left_eye 1 2\nleft_eye 3 4\n", "duplicate"),
        ("chin 1 2\n", "unknown"),
        ("left_eye 1\n", "expected"),
        ("left_eye 1 a\n", "non-numeric"),
        ("left_eye 1 2\n", "missing"),
    ])
    def test_malformed_files(self, landmarks, tmp_path, body, message):
        path = os.path.join(str(tmp_path), "bad.pts")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(body)
        with pytest.raises(DataError, match=message):
            landmarks.read_landmarks(path)

    def test_missing_file(self, landmarks, tmp_path):
        with pytest.raises(DataError):
            landmarks.read_landmarks(os.path.join(str(tmp_path), "absent.pts"))
