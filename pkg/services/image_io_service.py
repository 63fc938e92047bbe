# services/image_io_service.py
# Reads PGM (P5) and PNG into GrayImage; writes PGM and landmark overlays.

import logging
import os
from typing import Iterable

import numpy as np

try:
    from PIL import Image

    PILLOW_AVAILABLE = True
except ImportError:
    Image = None
    PILLOW_AVAILABLE = False
    logging.error("ImageIoService: Pillow library not found. Install: pip install Pillow")

from core.errors import DataError
from core.models import GrayImage, Point
from services.imaging_service import round_half_up

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = {"PPM", "PNG"}  # Pillow reports binary PGM as PPM
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ImageIoService:
    """Loads 8-bit grayscale rasters and writes PGM files."""

    def __init__(self):
        if not PILLOW_AVAILABLE:
            logger.critical("Pillow library not available. Image I/O is disabled.")
        logger.info("ImageIoService initialized.")

    def read_image(self, file_path: str) -> GrayImage:
        """
        Loads an 8-bit PGM or PNG. RGB input is reduced to luma
        0.299R + 0.587G + 0.114B, rounded half-up.

        Raises:
            DataError: missing file, unsupported format or bit depth.
        """
        if not PILLOW_AVAILABLE:
            raise DataError("Pillow is required to read images")
        if not os.path.exists(file_path):
            raise DataError(f"image file not found: {file_path}")
        try:
            with Image.open(file_path) as img:
                if img.format not in SUPPORTED_FORMATS:
                    raise DataError(f"unsupported image format {img.format!r} for {file_path}; use PGM or PNG")
                if img.format == "PPM" and img.mode != "L":
                    raise DataError(f"{file_path} is not an 8-bit grayscale PGM (mode {img.mode})")
                return self._to_gray(img, file_path)
        except DataError:
            raise
        except Exception as e:
            logger.exception(f"Failed to read image {file_path}")
            raise DataError(f"cannot read image {file_path}: {e}") from e

    def _to_gray(self, img, file_path: str) -> GrayImage:
        mode = img.mode
        if mode == "L":
            return GrayImage(np.array(img, dtype=np.uint8))
        if mode == "LA":
            return GrayImage(np.array(img.getchannel("L"), dtype=np.uint8))
        if mode in ("RGB", "RGBA", "P"):
            rgb = np.array(img.convert("RGB"), dtype=np.float64)
            luma = rgb @ LUMA_WEIGHTS
            return GrayImage(np.clip(round_half_up(luma), 0, 255).astype(np.uint8))
        raise DataError(f"unsupported pixel mode {mode!r} in {file_path}; only 8-bit images are read")

    def write_pgm(self, image: GrayImage, file_path: str) -> None:
        if not PILLOW_AVAILABLE:
            raise DataError("Pillow is required to write images")
        directory = os.path.dirname(os.path.abspath(file_path))
        os.makedirs(directory, exist_ok=True)
        Image.fromarray(image.pixels).save(file_path, format="PPM")
        logger.debug(f"Wrote {image.width}x{image.height} PGM to {file_path}")

    def draw_crosses(self, image: GrayImage, points: Iterable[Point], value: int = 255) -> GrayImage:
        """Copy of ``image`` with a 3x3 cross at each point."""
        pixels = image.pixels.copy()
        for p in points:
            cx, cy = int(round_half_up(p.x)), int(round_half_up(p.y))
            for dx, dy in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
                x, y = cx + dx, cy + dy
                if 0 <= x < image.width and 0 <= y < image.height:
                    pixels[y, x] = value
        return GrayImage(pixels)

    def draw_boxes(self, image: GrayImage, boxes, value: int = 255) -> GrayImage:
        """Copy of ``image`` with one-pixel outlines of ``boxes``."""
        pixels = image.pixels.copy()
        for box in boxes:
            pixels[box.y, box.x:box.right] = value
            pixels[box.bottom - 1, box.x:box.right] = value
            pixels[box.y:box.bottom, box.x] = value
            pixels[box.y:box.bottom, box.right - 1] = value
        return GrayImage(pixels)
