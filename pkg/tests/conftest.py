# tests/conftest.py
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.models import GrayImage, LandmarkSet, PipelineConfig, Point  # noqa: E402
from core.pipeline_enums import LbpVariant, Provenance  # noqa: E402
from utils import constants  # noqa: E402
from utils import synthetic_faces  # noqa: E402
from utils.rng import make_rng  # noqa: E402


def plain_face(size: int = synthetic_faces.FACE, skin: int = synthetic_faces.SKIN) -> GrayImage:
    """Untextured synthetic face filling the whole raster (face coordinates = image coordinates)."""
    face = np.full((size, size), skin, dtype=np.uint8)
    for region, mirror in ((synthetic_faces.EYE_BLOB, True), (synthetic_faces.BROW, True),
                           (synthetic_faces.NOSTRIL, True), (synthetic_faces.MOUTH, False)):
        c0, c1, r0, r1 = region
        face[r0:r1 + 1, c0:c1 + 1] = synthetic_faces.DARK
        if mirror:
            face[r0:r1 + 1, size - 1 - c1:size - c0] = synthetic_faces.DARK
    return GrayImage(face)


def symmetric_landmarks(size: int = 96) -> LandmarkSet:
    """Landmarks mirror-symmetric about the vertical midline of a size x size face."""
    mid = (size - 1) / 2.0
    half = {
        "left_eye": (mid - 0.2 * size, 0.35 * size),
        "lip_left": (mid - 0.15 * size, 0.75 * size),
        "brow_inner_left": (mid - 0.1 * size, 0.25 * size),
    }
    points = {"nose": Point(mid, 0.55 * size)}
    for name, (x, y) in half.items():
        points[name] = Point(x, y)
        points[name.replace("left", "right")] = Point(2 * mid - x, y)
    return LandmarkSet(points, {n: Provenance.GROUND_TRUTH for n in points})


@pytest.fixture
def rng():
    return make_rng(1234, 99)


@pytest.fixture
def fast_config() -> PipelineConfig:
    return PipelineConfig(resolution=96, variant=LbpVariant.BINS16, top_k=4, seed=0, saliency_folds=5,
                          cascade_dir=constants.CASCADE_DIR, workers=2)


@pytest.fixture(scope="session")
def synthetic_manifest(tmp_path_factory) -> str:
    out_dir = tmp_path_factory.mktemp("synthetic")
    return synthetic_faces.write_dataset(str(out_dir), per_class=10, seed=0)


@pytest.fixture(scope="session")
def synthetic_features(synthetic_manifest):
    """(orchestrator, manifest, feature set) for the synthetic set, featurized once per session."""
    from core.pipeline_orchestrator import PipelineOrchestrator

    config = PipelineConfig(resolution=96, variant=LbpVariant.BINS16, top_k=4, seed=0, saliency_folds=5,
                            cascade_dir=constants.CASCADE_DIR, workers=2)
    orchestrator = PipelineOrchestrator(config)
    manifest = orchestrator.datasets.load_manifest(synthetic_manifest)
    return orchestrator, manifest, orchestrator.featurize(manifest, use_ground_truth=False)


@pytest.fixture(scope="session")
def synthetic_model(synthetic_features):
    orchestrator, _, feature_set = synthetic_features
    return orchestrator.train_from_blocks(feature_set)
