# tests/test_main.py
import json
import os

import pytest

import main
from services.dataset_service import DatasetService
from services.model_store_service import ModelStoreService
from utils import constants


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(main, "USER_DATA_DIR", str(tmp_path / "logs"))


class TestExitCodes:
    def test_no_command(self):
        assert main.main([]) == constants.EXIT_USAGE

    def test_unknown_option(self, capsys):
        assert main.main(["train", "--bogus"]) == constants.EXIT_USAGE
        assert "error:" in capsys.readouterr().err

    def test_bad_bins(self):
        assert main.main(["crossval", "--data", "m.csv", "--bins", "12"]) == constants.EXIT_USAGE

    def test_unsupported_resolution(self, synthetic_manifest):
        assert main.main(["crossval", "--data", synthetic_manifest, "--resolution", "50"]) == constants.EXIT_USAGE

    def test_missing_manifest(self, tmp_path):
        code = main.main(["train", "--data", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "m.fer")])
        assert code == constants.EXIT_DATA

    def test_topk_out_of_range(self, synthetic_manifest):
        assert main.main(["topk", "--data", synthetic_manifest, "--ks", "0,4"]) == constants.EXIT_USAGE

    def test_corrupt_model(self, tmp_path, synthetic_manifest):
        model_path = tmp_path / "bad.fer"
        model_path.write_text("NOTAMODEL\n", encoding="utf-8")
        image = DatasetService().load_manifest(synthetic_manifest).records[0].path
        assert main.main(["predict", "--model", str(model_path), "--image", image]) == constants.EXIT_DATA


class TestArgumentHelpers:
    def test_int_list(self):
        assert main._int_list("1,4-6, 9") == [1, 4, 5, 6, 9]

    def test_variant_aliases(self):
        assert main._variant("16").value == main._variant("bins16").value


class TestCommands:
    def test_synth(self, tmp_path):
        out_dir = str(tmp_path / "synth")
        assert main.main(["synth", "--out", out_dir, "--per-class", "1", "--seed", "3"]) == constants.EXIT_OK
        manifest = DatasetService().load_manifest(os.path.join(out_dir, "manifest.csv"))
        assert len(manifest.records) == 6

    def test_predict_json(self, synthetic_features, synthetic_model, tmp_path, capsys):
        _, manifest, _ = synthetic_features
        model_path = str(tmp_path / "model.fer")
        ModelStoreService().save(synthetic_model, model_path)
        record = manifest.records[0]
        capsys.readouterr()
        assert main.main(["predict", "--model", model_path, "--image", record.path, "--json"]) == 0
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert payload["image"] == record.path
        assert payload["label"] == record.label.display_name
        assert payload["no_face"] is False
        assert sum(payload["votes"]) == 15

    def test_layout(self, synthetic_features, capsys):
        _, manifest, _ = synthetic_features
        record = manifest.records[0]
        capsys.readouterr()
        code = main.main(["layout", "--image", record.path, "--landmarks", record.landmarks_path,
                          "--resolution", "96"])
        assert code == 0
        lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("P")]
        assert len(lines) == constants.NUM_PATCHES
        assert lines[0].split()[3] == "11"
