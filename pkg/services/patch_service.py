# services/patch_service.py
# Placement of the 19 active facial patches from landmarks, patch crops and
# the fixed 2x2 block split.

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.errors import DataError
from core.models import BoundingBox, GrayImage, LandmarkSet, PatchLayout, Point
from services.imaging_service import ImagingService
from utils import constants

logger = logging.getLogger(__name__)

# Left/right partners about the vertical face midline.
MIRROR_PAIRS: Tuple[Tuple[int, int], ...] = (
    (1, 4), (9, 11), (2, 5), (7, 12), (8, 13), (3, 6), (14, 15), (18, 19),
)


def patch_side(resolution: int) -> int:
    """Roughly one ninth of the face width, rounded half-up."""
    return int(math.floor(resolution / 9.0 + 0.5))


def patch_centers(lm: LandmarkSet, side: int) -> Dict[int, Point]:
    """Centres of P1..P19; offsets are whole patch sides."""
    s = float(side)
    c: Dict[int, Point] = {
        1: lm["lip_left"],
        4: lm["lip_right"],
        18: lm["brow_inner_left"],
        19: lm["brow_inner_right"],
        16: lm["left_eye"].midpoint(lm["right_eye"]),
        3: lm["left_eye"].midpoint(lm["nose"]),
        6: lm["right_eye"].midpoint(lm["nose"]),
        14: lm["left_eye"].offset(0, s),
        15: lm["right_eye"].offset(0, s),
        2: lm["nose"].offset(-s, 0),
        5: lm["nose"].offset(s, 0),
    }
    c[17] = c[16].offset(0, -s)
    c[7] = c[2].offset(0, -s)
    c[8] = c[2].offset(-s, 0)
    c[12] = c[5].offset(0, -s)
    c[13] = c[5].offset(s, 0)
    c[9] = c[1].offset(0, s)
    c[11] = c[4].offset(0, s)
    c[10] = c[9].midpoint(c[11])
    return c


class PatchService:
    """Lays out, crops and splits the active patches of an aligned face."""

    def __init__(self, imaging: Optional[ImagingService] = None):
        self.imaging = imaging or ImagingService()
        logger.info("PatchService initialized.")

    def layout_patches(self, lm: LandmarkSet, resolution: int) -> PatchLayout:
        """
        Square boxes of side round(R/9) centred on the patch centres. Boxes
        that would leave the raster are shifted back inside, never shrunk.
        """
        side = patch_side(resolution)
        if side < 2 or side > resolution:
            raise DataError(f"resolution {resolution} gives an unusable patch side {side}")
        centers = patch_centers(lm, side)
        half = (side - 1) / 2.0
        boxes: List[BoundingBox] = []
        for patch_id in range(1, constants.NUM_PATCHES + 1):
            center = centers[patch_id]
            x = int(math.floor(center.x - half + 0.5))
            y = int(math.floor(center.y - half + 0.5))
            clipped_x = min(max(x, 0), resolution - side)
            clipped_y = min(max(y, 0), resolution - side)
            if (clipped_x, clipped_y) != (x, y):
                logger.debug(f"P{patch_id} shifted inside the face by ({clipped_x - x}, {clipped_y - y})")
            boxes.append(BoundingBox(clipped_x, clipped_y, side, side))
        return PatchLayout(tuple(boxes), side)

    def extract_patch(self, face: GrayImage, box: BoundingBox) -> GrayImage:
        try:
            return self.imaging.crop(face, box)
        except ValueError as e:
            raise DataError(str(e)) from e

    @staticmethod
    def block_boxes(box: BoundingBox) -> Tuple[BoundingBox, BoundingBox, BoundingBox, BoundingBox]:
        """Top-left, top-right, bottom-left, bottom-right; the split falls at floor(side/2)."""
        if box.w < 2 or box.h < 2:
            raise DataError(f"a patch needs side >= 2 to split into blocks, got {box.w}x{box.h}")
        hw, hh = box.w // 2, box.h // 2
        return (
            BoundingBox(box.x, box.y, hw, hh),
            BoundingBox(box.x + hw, box.y, box.w - hw, hh),
            BoundingBox(box.x, box.y + hh, hw, box.h - hh),
            BoundingBox(box.x + hw, box.y + hh, box.w - hw, box.h - hh),
        )

    def split_blocks(self, patch: GrayImage) -> Tuple[GrayImage, GrayImage, GrayImage, GrayImage]:
        full = BoundingBox(0, 0, patch.width, patch.height)
        return tuple(self.imaging.crop(patch, b) for b in self.block_boxes(full))

    @staticmethod
    def assemble_blocks(blocks: Tuple[GrayImage, GrayImage, GrayImage, GrayImage]) -> GrayImage:
        tl, tr, bl, br = (b.pixels for b in blocks)
        return GrayImage(np.vstack([np.hstack([tl, tr]), np.hstack([bl, br])]))

    @staticmethod
    def format_layout(layout: PatchLayout) -> str:
        """One ``P<k> <x> <y> <s>`` line per patch, (x, y) the top-left corner."""
        return "".join(f"P{i} {box.x} {box.y} {layout.side}\n" for i, box in enumerate(layout.boxes, start=1))
