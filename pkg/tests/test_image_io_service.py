# tests/test_image_io_service.py
import os

import numpy as np
import pytest
from PIL import Image

from core.errors import DataError
from core.models import BoundingBox, GrayImage, Point
from services.image_io_service import ImageIoService


@pytest.fixture
def io_service():
    return ImageIoService()


class TestReadWrite:
    def test_pgm_round_trip(self, io_service, tmp_path, rng):
        img = GrayImage(rng.integers(0, 256, size=(9, 13), dtype=np.uint8))
        path = os.path.join(str(tmp_path), "nested", "face.pgm")
        io_service.write_pgm(img, path)
        assert np.array_equal(io_service.read_image(path).pixels, img.pixels)

    def test_png_gray(self, io_service, tmp_path):
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4)
        path = os.path.join(str(tmp_path), "gray.png")
        Image.fromarray(pixels).save(path)
        assert np.array_equal(io_service.read_image(path).pixels, pixels)

    def test_png_rgb_is_reduced_to_luma(self, io_service, tmp_path):
        rgb = np.zeros((1, 3, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        rgb[0, 1] = (0, 255, 0)
        rgb[0, 2] = (10, 20, 30)
        path = os.path.join(str(tmp_path), "rgb.png")
        Image.fromarray(rgb, mode="RGB").save(path)
        # 0.299*255 = 76.245, 0.587*255 = 149.685, 2.99+11.74+3.42 = 18.15
        assert io_service.read_image(path).pixels.tolist() == [[76, 150, 18]]

    def test_missing_file(self, io_service, tmp_path):
        with pytest.raises(DataError, match="not found"):
            io_service.read_image(os.path.join(str(tmp_path), "absent.pgm"))

    def test_unsupported_format(self, io_service, tmp_path):
        path = os.path.join(str(tmp_path), "face.bmp")
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(path, format="BMP")
        with pytest.raises(DataError, match="unsupported"):
            io_service.read_image(path)

    def test_jpeg_is_rejected(self, io_service, tmp_path):
        path = os.path.join(str(tmp_path), "face.jpg")
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8)).save(path, format="JPEG")
        with pytest.raises(DataError, match="use PGM or PNG"):
            io_service.read_image(path)

    def test_garbage_file(self, io_service, tmp_path):
        path = os.path.join(str(tmp_path), "junk.pgm")
        with open(path, "wb") as handle:
            handle.write(b"not an image at all")
        with pytest.raises(DataError):
            io_service.read_image(path)


class TestOverlays:
    def test_crosses(self, io_service):
        img = GrayImage(np.zeros((5, 5), dtype=np.uint8))
        out = io_service.draw_crosses(img, [Point(2.4, 2.0), Point(0.0, 0.0)])
        assert out.pixels[2, 2] == out.pixels[1, 2] == out.pixels[2, 3] == 255
        assert out.pixels[0, 0] == out.pixels[0, 1] == 255
        assert out.pixels[4, 4] == 0
        assert not img.pixels.any()

    def test_boxes(self, io_service):
        img = GrayImage(np.zeros((6, 6), dtype=np.uint8))
        out = io_service.draw_boxes(img, [BoundingBox(1, 1, 4, 3)]).pixels
        assert out[1, 1:5].all() and out[3, 1:5].all()
        assert out[2, 1] == out[2, 4] == 255
        assert out[2, 2] == 0
