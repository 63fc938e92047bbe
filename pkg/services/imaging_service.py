# services/imaging_service.py
# Classical raster operations used by detection, landmarks and features.

import logging
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from core.models import BinaryImage, BoundingBox, GrayImage, IntegralImage, Region

logger = logging.getLogger(__name__)

_GAUSS_3X3 = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0
_SOBEL_HORIZONTAL_EDGE = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)
_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def round_half_up(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def to_uint8(values) -> np.ndarray:
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


class ImagingService:
    """
    Pure image operations. Convolutions replicate edge pixels and every
    produced intensity is rounded half-up.
    """

    def __init__(self):
        logger.info("ImagingService initialized.")

    # --- Filters ---

    def gaussian_blur_3x3(self, img: GrayImage) -> GrayImage:
        out = ndimage.correlate(img.pixels.astype(np.float64), _GAUSS_3X3, mode="nearest")
        return GrayImage(to_uint8(out))

    def equalize_histogram(self, img: GrayImage) -> GrayImage:
        """CDF remap: level v goes to round(255 * cdf(v) / N)."""
        hist = np.bincount(img.pixels.ravel(), minlength=256)
        cdf = np.cumsum(hist).astype(np.float64)
        lut = to_uint8(255.0 * cdf / cdf[-1])
        return GrayImage(lut[img.pixels])

    def resize(self, img: GrayImage, w: int, h: int) -> GrayImage:
        """Bilinear resampling with corner pixels aligned."""
        if w < 1 or h < 1:
            raise ValueError(f"target size must be positive, got {w}x{h}")
        if (w, h) == (img.width, img.height):
            return GrayImage(img.pixels.copy())
        ys = self._sample_axis(img.height, h)
        xs = self._sample_axis(img.width, w)
        grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
        out = ndimage.map_coordinates(img.pixels.astype(np.float64), [grid_y, grid_x], order=1, mode="nearest")
        return GrayImage(to_uint8(out))

    @staticmethod
    def _sample_axis(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))

    def sample(self, img: GrayImage, grid_x: np.ndarray, grid_y: np.ndarray) -> GrayImage:
        """Bilinear lookup at arbitrary source coordinates (edge replicated)."""
        out = ndimage.map_coordinates(img.pixels.astype(np.float64), [grid_y, grid_x], order=1, mode="nearest")
        return GrayImage(to_uint8(out))

    def sobel_horizontal(self, img: GrayImage) -> GrayImage:
        out = ndimage.correlate(img.pixels.astype(np.float64), _SOBEL_HORIZONTAL_EDGE, mode="nearest")
        return GrayImage(np.clip(np.abs(out), 0, 255).astype(np.uint8))

    # --- Thresholds ---

    def otsu_threshold(self, img: GrayImage) -> Tuple[int, BinaryImage]:
        """
        Exhaustive Otsu over the 256 levels.

        Returns:
            (threshold, bits) where bits are ``pixels > threshold``. A constant
            image yields its own value and no set bits.
        """
        hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.float64)
        levels = np.arange(256, dtype=np.float64)
        total = hist.sum()
        n0 = np.cumsum(hist)
        s0 = np.cumsum(hist * levels)
        n1 = total - n0
        s1 = s0[-1] - s0
        with np.errstate(divide="ignore", invalid="ignore"):
            between = np.where((n0 > 0) & (n1 > 0), (n0 * s1 - n1 * s0) ** 2 / (n0 * n1), 0.0)
        if not np.any(between > 0):
            threshold = int(img.pixels.flat[0])
            return threshold, BinaryImage(np.zeros_like(img.pixels, dtype=bool))
        threshold = int(np.argmax(between))
        return threshold, BinaryImage(img.pixels > threshold)

    def adaptive_threshold(self, img: GrayImage, window: int, offset: float) -> BinaryImage:
        """Sets pixels darker than (local window mean - offset)."""
        if window < 3 or window % 2 == 0:
            raise ValueError(f"window must be odd and at least 3, got {window}")
        local_mean = ndimage.uniform_filter(img.pixels.astype(np.float64), size=window, mode="nearest")
        return BinaryImage(img.pixels.astype(np.float64) < local_mean - offset)

    # --- Morphology ---

    def dilate(self, img: BinaryImage, radius: int = 1) -> BinaryImage:
        if radius < 1:
            raise ValueError(f"radius must be at least 1, got {radius}")
        structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        return BinaryImage(ndimage.binary_dilation(img.bits, structure=structure))

    def connected_components(self, img: BinaryImage, connectivity: int = 8) -> List[Region]:
        """Regions labelled in order of first encounter in a row-major scan."""
        if connectivity not in _STRUCTURE:
            raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
        labels, count = ndimage.label(img.bits, structure=_STRUCTURE[connectivity])
        regions: List[Region] = []
        if count == 0:
            return regions
        slices = ndimage.find_objects(labels)
        for index, (sy, sx) in enumerate(slices, start=1):
            ys, xs = np.nonzero(labels[sy, sx] == index)
            ys = ys + sy.start
            xs = xs + sx.start
            bbox = BoundingBox(int(sx.start), int(sy.start), int(sx.stop - sx.start), int(sy.stop - sy.start))
            regions.append(Region(index, int(xs.size), bbox, np.column_stack([xs, ys])))
        return regions

    # --- Integral images & crops ---

    def integral(self, img: GrayImage, squared: bool = False) -> IntegralImage:
        values = img.pixels.astype(np.int64)
        if squared:
            values = values * values
        table = np.zeros((img.height + 1, img.width + 1), dtype=np.int64)
        table[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
        return IntegralImage(table)

    def crop(self, img: GrayImage, box: BoundingBox) -> GrayImage:
        if box.x < 0 or box.y < 0 or box.right > img.width or box.bottom > img.height:
            raise ValueError(f"crop box {box} exceeds the {img.width}x{img.height} raster")
        return GrayImage(img.pixels[box.y:box.bottom, box.x:box.right].copy())
