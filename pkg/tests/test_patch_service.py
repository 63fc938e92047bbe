# tests/test_patch_service.py
import numpy as np
import pytest

from conftest import symmetric_landmarks
from core.errors import DataError
from core.models import BoundingBox, GrayImage, LandmarkSet, Point
from services.patch_service import MIRROR_PAIRS, PatchService, patch_centers, patch_side


@pytest.fixture
def patches():
    return PatchService()


class TestLayout:
    @pytest.mark.parametrize("resolution,side", [(48, 5), (96, 11), (144, 16), (192, 21)])
    def test_side(self, resolution, side):
        assert patch_side(resolution) == side

    def test_centre_patches(self, patches):
        lm = symmetric_landmarks()
        layout = patches.layout_patches(lm, 96)
        p16 = layout.box(16)
        mid = lm["left_eye"].midpoint(lm["right_eye"])
        assert p16.center.x == pytest.approx(mid.x, abs=0.5)
        assert p16.center.y == pytest.approx(mid.y, abs=0.5)
        assert layout.box(17).y == p16.y - 11
        assert layout.box(1).center.x == pytest.approx(lm["lip_left"].x, abs=0.5)

    def test_every_box_has_the_patch_side(self, patches):
        layout = patches.layout_patches(symmetric_landmarks(), 96)
        assert len(layout.boxes) == 19
        assert all(b.w == b.h == layout.side == 11 for b in layout.boxes)

    def test_mirror_symmetry(self):
        centers = patch_centers(symmetric_landmarks(), 11)
        for a, b in MIRROR_PAIRS:
            assert centers[b].x == pytest.approx(95 - centers[a].x)
            assert centers[b].y == pytest.approx(centers[a].y)
        for patch_id in (10, 16, 17):
            assert centers[patch_id].x == pytest.approx(47.5)

    def test_mirrored_boxes_within_one_pixel(self, patches):
        layout = patches.layout_patches(symmetric_landmarks(), 96)
        for a, b in MIRROR_PAIRS:
            assert abs(layout.box(b).x - (96 - 11 - layout.box(a).x)) <= 1
            assert layout.box(b).y == layout.box(a).y

    def test_translation_moves_every_box(self, patches):
        lm = symmetric_landmarks()
        moved = LandmarkSet({n: p.offset(2, 3) for n, p in lm.points.items()})
        before = patches.layout_patches(lm, 96)
        after = patches.layout_patches(moved, 96)
        for a, b in zip(before.boxes, after.boxes):
            assert (b.x - a.x, b.y - a.y) == (2, 3)

    def test_boxes_are_shifted_inside(self, patches):
        lm = symmetric_landmarks()
        low = LandmarkSet({n: Point(p.x, p.y + 12) for n, p in lm.points.items()})
        layout = patches.layout_patches(low, 96)
        for box in layout.boxes:
            assert box.w == 11
            assert 0 <= box.y and box.bottom <= 96
        assert layout.box(9).bottom == 96

    def test_tiny_resolution_is_rejected(self, patches):
        with pytest.raises(DataError):
            patches.layout_patches(symmetric_landmarks(9), 9)

    def test_format(self, patches):
        layout = patches.layout_patches(symmetric_landmarks(), 96)
        lines = patches.format_layout(layout).splitlines()
        assert len(lines) == 19
        box = layout.box(1)
        assert lines[0] == f"P1 {box.x} {box.y} 11"


class TestBlocks:
    def test_even_split(self):
        blocks = PatchService.block_boxes(BoundingBox(0, 0, 10, 10))
        assert [(b.x, b.y, b.w, b.h) for b in blocks] == [(0, 0, 5, 5), (5, 0, 5, 5), (0, 5, 5, 5), (5, 5, 5, 5)]

    def test_odd_split(self):
        blocks = PatchService.block_boxes(BoundingBox(3, 4, 11, 11))
        assert [(b.x, b.y, b.w, b.h) for b in blocks] == [(3, 4, 5, 5), (8, 4, 6, 5), (3, 9, 5, 6), (8, 9, 6, 6)]

    def test_blocks_tile_the_patch(self, patches, rng):
        patch = GrayImage(rng.integers(0, 256, size=(11, 11), dtype=np.uint8))
        blocks = patches.split_blocks(patch)
        assert sum(b.width * b.height for b in blocks) == 121
        assert np.array_equal(patches.assemble_blocks(blocks).pixels, patch.pixels)

    def test_side_one_cannot_split(self):
        with pytest.raises(DataError):
            PatchService.block_boxes(BoundingBox(0, 0, 1, 1))

    def test_extract_outside_face(self, patches):
        with pytest.raises(DataError):
            patches.extract_patch(GrayImage(np.zeros((20, 20), dtype=np.uint8)), BoundingBox(15, 15, 11, 11))

    def test_extract(self, patches):
        face = GrayImage(np.arange(400).reshape(20, 20) % 256)
        out = patches.extract_patch(face, BoundingBox(2, 3, 4, 4))
        assert out.pixels[0, 0] == 62
