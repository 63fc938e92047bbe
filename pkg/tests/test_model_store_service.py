# tests/test_model_store_service.py
import os

import numpy as np
import pytest

from core.errors import ModelFormatError
from core.models import CLASS_PAIRS, ExpressionModel, PipelineConfig, SalientSelection
from core.pipeline_enums import LbpVariant
from services.model_store_service import ModelStoreService
from services.subspace_service import SubspaceService
from services.svm_service import SvmService
from utils.rng import make_rng


@pytest.fixture(scope="module")
def model() -> ExpressionModel:
    rng = make_rng(7, 99)
    labels = np.repeat(np.arange(6), 5)
    blocks = rng.uniform(0.0, 0.1, size=(labels.size, 19, 4, 16))
    for i, c in enumerate(labels):
        blocks[i, 0, c % 4, c] += 1.0
        blocks[i, 1, 3 - c % 4, 15 - c] += 1.0
    config = PipelineConfig(resolution=96, variant=LbpVariant.BINS16, top_k=2, seed=5, svm_gamma=0.125)
    selection = SalientSelection({pair: (1, 2) for pair in CLASS_PAIRS}, 2)
    ensemble = SvmService(SubspaceService(config.pca_energy, config.pca_max_dims)).oao_train(
        blocks, labels, selection, config)
    return ExpressionModel(config, selection, ensemble)


@pytest.fixture
def store():
    return ModelStoreService()


class TestRoundTrip:
    def test_text_is_stable(self, store, model):
        text = store.dumps(model)
        assert text.startswith("FERSPM 1\n[config]\n")
        assert store.dumps(store.loads(text)) == text

    def test_loaded_model_decides_identically(self, store, model, tmp_path, rng):
        path = os.path.join(str(tmp_path), "models", "m.fer")
        store.save(model, path)
        loaded = store.load(path)
        svm = SvmService()
        for blocks in rng.uniform(0.0, 1.0, size=(5, 19, 4, 16)):
            assert svm.oao_predict(loaded.ensemble, blocks) == svm.oao_predict(model.ensemble, blocks)

    def test_config_survives(self, store, model):
        loaded = store.loads(store.dumps(model))
        assert loaded.config.svm_gamma == 0.125
        assert loaded.config.variant == LbpVariant.BINS16
        assert loaded.config.top_k == 2 and loaded.config.seed == 5
        assert loaded.selection.for_pair((0, 1)) == (1, 2)

    def test_with_runtime(self, store, model):
        copy = store.with_runtime(model, workers=3)
        assert copy.config.workers == 3
        assert copy.ensemble is model.ensemble


class TestBadFiles:
    def test_bad_magic(self, store, model):
        text = store.dumps(model).replace("FERSPM", "NOTFER", 1)
        with pytest.raises(ModelFormatError, match="magic"):
            store.loads(text)

    def test_future_version(self, store, model):
        text = store.dumps(model).replace("FERSPM 1", "FERSPM 2", 1)
        with pytest.raises(ModelFormatError, match="version"):
            store.loads(text)

    def test_truncated(self, store, model):
        text = store.dumps(model)
        with pytest.raises(ModelFormatError, match="truncated"):
            store.loads(text[: len(text) // 2])

    def test_missing_model_section(self, store, model):
        lines = store.dumps(model).splitlines()
        start = lines.index("[model anger-disgust]")
        end = lines.index("[model anger-fear]")
        with pytest.raises(ModelFormatError, match="anger-disgust"):
            store.loads("\n".join(lines[:start] + lines[end:]) + "\n")

    def test_corrupt_array(self, store, model):
        lines = store.dumps(model).splitlines()
        index = next(i for i, line in enumerate(lines) if line.startswith("array dual_coef"))
        lines[index] = lines[index][:-8] + "!!!!!!!!"
        with pytest.raises(ModelFormatError):
            store.loads("\n".join(lines) + "\n")

    def test_dimension_mismatch(self, store, model):
        text = store.dumps(model).replace("top_k 2", "top_k 3", 1)
        with pytest.raises(ModelFormatError):
            store.loads(text)

    def test_empty(self, store):
        with pytest.raises(ModelFormatError):
            store.loads("")

    def test_missing_file(self, store, tmp_path):
        with pytest.raises(ModelFormatError, match="not found"):
            store.load(os.path.join(str(tmp_path), "absent.fer"))
