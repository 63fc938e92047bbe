# utils/synthetic_faces.py
"""
Deterministic synthetic face fixtures.

A rendered image holds a bright square face on a dark background with dark
eye blobs, brows, nostrils and a mouth bar. Each expression paints its own
mean-preserving texture into a fixed subset of patches, so the six classes
are separable from patch features alone while detection and landmark
localisation see the same geometry for every class.

The geometry is defined on the left half of a 96-pixel face and mirrored
(x -> 95 - x) for the right half.
"""

import logging
import os
from typing import Dict, List, Tuple

import numpy as np

from core.models import DatasetRecord, GrayImage, LandmarkSet, Point
from core.pipeline_enums import ExpressionLabel, Provenance
from utils import constants
from utils.rng import STREAM_SYNTH, make_rng

logger = logging.getLogger(__name__)

FACE = constants.SYNTH_FACE_SIZE
BACKGROUND = 20
SKIN = 180
SKIN_JITTER = 8
DARK = 30
TEXTURE_AMPLITUDE = 30
MAX_SHIFT = 1

# (col0, col1, row0, row1) inclusive, left half of the face.
EYE_BLOB = (25, 32, 30, 37)
BROW = (17, 38, 20, 22)
NOSTRIL = (41, 44, 51, 54)
MOUTH = (34, 61, 73, 77)

TRUTH: Dict[str, Tuple[float, float]] = {
    "left_eye": (28.5, 33.5),
    "right_eye": (66.5, 33.5),
    "nose": (47.5, 52.5),
    "lip_left": (34.0, 73.0),
    "lip_right": (61.0, 73.0),
    "brow_inner_left": (38.0, 21.0),
    "brow_inner_right": (57.0, 21.0),
}

TEXTURED_PATCHES = (2, 3, 5, 6, 7, 8, 12, 13, 14, 15)

# Cascades keyed to the rendered geometry: (comment, width, height,
# stage threshold, [(threshold, left, right, [(x, y, w, h, weight), ...]), ...]).
CASCADE_DEFINITIONS = {
    constants.FACE_CASCADE_FILENAME: (
        "Frontal face: dark eyes, nostril row and mouth against bright skin.",
        48, 48, 7, [
            (1.0, 0, 1, [(22, 15, 3, 3, 256), (13, 15, 3, 3, -256)]),
            (1.0, 0, 1, [(22, 15, 3, 3, 256), (32, 15, 3, 3, -256)]),
            (1.0, 0, 1, [(20, 31, 8, 2, 144), (20, 36, 8, 2, -144)]),
            (1.0, 0, 1, [(0, 16, 2, 16, 72), (13, 15, 3, 3, -256)]),
            (1.0, 0, 1, [(46, 16, 2, 16, 72), (32, 15, 3, 3, -256)]),
            (1.0, 0, 1, [(16, 0, 16, 2, 72), (13, 15, 3, 3, -256)]),
            (1.0, 0, 1, [(16, 46, 16, 2, 72), (20, 36, 8, 2, -144)]),
        ]),
    constants.EYE_CASCADE_FILENAME: (
        "Eye blob: dark centre, bright surround on all four sides.",
        12, 12, 4, [
            (0.75, 0, 1, [(0, 4, 2, 4, 18), (3, 4, 2, 4, -18)]),
            (0.75, 0, 1, [(10, 4, 2, 4, 18), (7, 4, 2, 4, -18)]),
            (0.75, 0, 1, [(4, 0, 4, 2, 18), (4, 3, 4, 2, -18)]),
            (0.75, 0, 1, [(4, 10, 4, 2, 18), (4, 7, 4, 2, -18)]),
        ]),
    constants.NOSE_CASCADE_FILENAME: (
        "Nostril pair: two dark squares split by a bright bridge.",
        20, 10, 4, [
            (0.75, 0, 1, [(8, 3, 4, 4, 12.5), (3, 3, 4, 4, -12.5)]),
            (0.75, 0, 1, [(8, 3, 4, 4, 12.5), (13, 3, 4, 4, -12.5)]),
            (0.75, 0, 1, [(3, 0, 4, 2, 25), (3, 4, 4, 2, -25)]),
            (0.75, 0, 1, [(13, 8, 4, 2, 25), (13, 4, 4, 2, -25)]),
        ]),
}


def _number(value) -> str:
    return str(int(value)) if float(value).is_integer() and not isinstance(value, float) else repr(value)


def cascade_text(filename: str) -> str:
    comment, width, height, stage_threshold, weak = CASCADE_DEFINITIONS[filename]
    lines = [f"# {comment}", f"CASCADE v1 {width} {height} 1", f"STAGE {stage_threshold} {len(weak)}"]
    for threshold, left, right, rects in weak:
        lines.append(f"WEAK {_number(threshold)} {left} {right} {len(rects)}")
        lines.extend(f"RECT {x} {y} {w} {h} {_number(wt)}" for x, y, w, h, wt in rects)
    return "\n".join(lines) + "\n"


def write_cascades(out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for filename in CASCADE_DEFINITIONS:
        path = os.path.join(out_dir, filename)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(cascade_text(filename))
        paths.append(path)
    logger.info(f"Wrote {len(paths)} cascades to {out_dir}")
    return paths


def truth_landmarks() -> LandmarkSet:
    points = {name: Point(*xy) for name, xy in TRUTH.items()}
    return LandmarkSet(points, {name: Provenance.GROUND_TRUTH for name in points})


def _texture(label: ExpressionLabel, shape: Tuple[int, int], origin: Tuple[int, int], phase: int) -> np.ndarray:
    """+-1 band pattern with period 4; all zeros for the flat class."""
    ys, xs = np.indices(shape)
    xs = xs + origin[0]
    ys = ys + origin[1]
    if label == ExpressionLabel.ANGER:
        bands = (xs + phase) // 2
    elif label == ExpressionLabel.DISGUST:
        bands = (ys + phase) // 2
    elif label == ExpressionLabel.FEAR:
        bands = (xs + ys + phase) // 2
    elif label == ExpressionLabel.HAPPINESS:
        bands = (xs - ys + phase + 4 * FACE) // 2
    elif label == ExpressionLabel.SADNESS:
        bands = xs // 2 + ys // 2 + phase
    else:
        return np.zeros(shape)
    return np.where(bands % 2 == 0, 1.0, -1.0)


def _fill(face: np.ndarray, region: Tuple[int, int, int, int], value: float, mirror: bool = True) -> None:
    c0, c1, r0, r1 = region
    face[r0:r1 + 1, c0:c1 + 1] = value
    if mirror:
        face[r0:r1 + 1, FACE - 1 - c1:FACE - c0] = value


def render_face(label: ExpressionLabel, variant: int, size: int = constants.SYNTH_IMAGE_SIZE,
                seed: int = constants.DEFAULT_SEED) -> Tuple[GrayImage, LandmarkSet]:
    """
    Renders one face. ``variant`` selects the skin tone, texture phase and
    a shift of at most one pixel.

    Returns:
        (image, landmarks) with landmarks in 96-pixel face coordinates.
    """
    from services.patch_service import PatchService

    if size < FACE + 2 * MAX_SHIFT:
        raise ValueError(f"image size must be at least {FACE + 2 * MAX_SHIFT}, got {size}")
    rng = make_rng(seed, STREAM_SYNTH, label.index, variant)
    skin = SKIN + int(rng.integers(-SKIN_JITTER, SKIN_JITTER + 1))
    phase = int(rng.integers(0, 4))
    dx, dy = (int(v) for v in rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2))

    face = np.full((FACE, FACE), float(skin))
    truth = truth_landmarks()
    layout = PatchService().layout_patches(truth, FACE)
    for patch_id in TEXTURED_PATCHES:
        box = layout.box(patch_id)
        pattern = _texture(label, (box.h, box.w), (box.x, box.y), phase)
        face[box.y:box.bottom, box.x:box.right] = skin + TEXTURE_AMPLITUDE * pattern
    for region in (EYE_BLOB, BROW, NOSTRIL):
        _fill(face, region, DARK)
    _fill(face, MOUTH, DARK, mirror=False)

    image = np.full((size, size), float(BACKGROUND))
    ox = (size - FACE) // 2 + dx
    oy = (size - FACE) // 2 + dy
    image[oy:oy + FACE, ox:ox + FACE] = face
    return GrayImage(np.clip(image, 0, 255).astype(np.uint8)), truth


def write_dataset(out_dir: str, per_class: int = constants.SYNTH_PER_CLASS, seed: int = constants.DEFAULT_SEED,
                  size: int = constants.SYNTH_IMAGE_SIZE, source: str = "synthetic") -> str:
    """
    Writes PGM images, landmark files and ``manifest.csv`` under ``out_dir``.

    Returns:
        Path of the manifest.
    """
    from services.dataset_service import DatasetService
    from services.image_io_service import ImageIoService
    from services.landmark_service import LandmarkService

    io_service = ImageIoService()
    landmark_service = LandmarkService()
    records = []
    for label in ExpressionLabel.ordered():
        for variant in range(per_class):
            image, truth = render_face(label, variant, size, seed)
            stem = f"{label.display_name}_{variant:03d}"
            image_path = os.path.join(out_dir, "images", f"{stem}.pgm")
            landmark_path = os.path.join(out_dir, "landmarks", f"{stem}.pts")
            io_service.write_pgm(image, image_path)
            landmark_service.write_landmarks(truth, landmark_path, FACE)
            records.append(DatasetRecord(image_path, label, landmark_path, source))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    DatasetService().write_manifest(manifest_path, records)
    logger.info(f"Synthetic dataset: {len(records)} images in {out_dir}")
    return manifest_path
