# services/model_store_service.py
"""
Versioned text serialization of trained expression models.

Layout::

    FERSPM 1
    [config]
    resolution 96
    ...
    [selection]
    anger-disgust 2 3 5 6
    ...
    [model anger-disgust]
    pair 0 1
    patches 2 3 5 6
    c <float hex>
    array support_vectors 40x12 <base64 of little-endian float64>
    ...
    [end]

Floats are written with ``float.hex`` and arrays as raw little-endian bytes,
so a save/load cycle is bit-exact and equal models give equal files.
"""

import base64
import dataclasses
import logging
import os
from typing import Dict, List, Tuple

import numpy as np

from core.errors import ModelFormatError
from core.models import (CLASS_PAIRS, ExpressionModel, OaoEnsemble, PcaModel, PipelineConfig,
                         SalientSelection, SvmModel, pair_key)
from core.pipeline_enums import LbpVariant
from utils import constants

logger = logging.getLogger(__name__)

# PipelineConfig fields stored in the file; machine-local fields are left out.
_CONFIG_FIELDS = (
    ("resolution", int), ("variant", LbpVariant.from_name), ("top_k", int), ("seed", int),
    ("saliency_folds", int), ("pca_energy", float.fromhex), ("pca_max_dims", int),
    ("svm_c", float.fromhex), ("svm_gamma", None), ("svm_tol", float.fromhex),
    ("grid_search", None), ("inner_folds", int), ("scale_step", float.fromhex), ("use_cascades", None),
)


def _encode_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, LbpVariant):
        return value.value
    if value is None:
        return "none"
    if isinstance(value, float):
        return float(value).hex()
    return str(value)


def _parse_bool(text: str) -> bool:
    if text not in ("true", "false"):
        raise ValueError(f"expected true/false, got {text!r}")
    return text == "true"


def _encode_array(name: str, arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
    payload = base64.b64encode(arr.tobytes()).decode("ascii")
    return f"array {name} {shape} {payload}"


def _decode_array(tokens: List[str], line_no: int) -> Tuple[str, np.ndarray]:
    if len(tokens) not in (3, 4):
        raise ModelFormatError(f"line {line_no}: malformed array entry")
    name, shape_text = tokens[1], tokens[2]
    payload = tokens[3] if len(tokens) == 4 else ""
    try:
        shape = tuple(int(s) for s in shape_text.split("x")) if shape_text != "scalar" else ()
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return name, arr.reshape(shape)
    except (ValueError, TypeError) as e:
        raise ModelFormatError(f"line {line_no}: cannot decode array '{name}': {e}") from None


class ModelStoreService:
    """Saves and loads ExpressionModel files."""

    def __init__(self):
        logger.info("ModelStoreService initialized.")

    # --- Writing ---

    def dumps(self, model: ExpressionModel) -> str:
        config = model.config
        lines = [f"{constants.MODEL_MAGIC} {model.version}", "[config]"]
        for name, parser in _CONFIG_FIELDS:
            value = getattr(config, name)
            if parser is float.fromhex or (name == "svm_gamma" and value is not None):
                value = float(value)
            lines.append(f"{name} {_encode_value(value)}")
        lines.append("[selection]")
        lines.append(f"k {model.selection.k}")
        for pair in CLASS_PAIRS:
            lines.append(f"{pair_key(pair)} " + " ".join(str(p) for p in model.selection.for_pair(pair)))
        for svm in sorted(model.ensemble.models, key=lambda m: m.pair):
            lines.append(f"[model {pair_key(svm.pair)}]")
            lines.append(f"pair {svm.pair[0]} {svm.pair[1]}")
            lines.append("patches " + " ".join(str(p) for p in svm.patch_ids))
            lines.append(f"c {_encode_value(float(svm.c))}")
            lines.append(f"gamma {_encode_value(float(svm.gamma))}")
            lines.append(f"bias {_encode_value(float(svm.bias))}")
            lines.append(_encode_array("pca_mean", svm.pca.mean))
            lines.append(_encode_array("pca_components", svm.pca.components))
            lines.append(_encode_array("pca_eigenvalues", svm.pca.eigenvalues))
            lines.append(_encode_array("support_vectors", svm.support_vectors))
            lines.append(_encode_array("dual_coef", svm.dual_coef))
        lines.append("[end]")
        return "\n".join(lines) + "\n"

    def save(self, model: ExpressionModel, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="ascii", newline="\n") as handle:
            handle.write(self.dumps(model))
        logger.info(f"Model saved to {path}")

    # --- Reading ---

    def load(self, path: str) -> ExpressionModel:
        if not os.path.exists(path):
            raise ModelFormatError(f"model file not found: {path}")
        try:
            with open(path, "r", encoding="ascii") as handle:
                text = handle.read()
        except (OSError, UnicodeDecodeError) as e:
            raise ModelFormatError(f"cannot read model file {path}: {e}") from e
        model = self.loads(text)
        logger.info(f"Model loaded from {path}")
        return model

    def loads(self, text: str) -> ExpressionModel:
        """
        Raises:
            ModelFormatError: wrong magic or version, missing sections, or
                dimensions that do not agree with each other.
        """
        lines = text.splitlines()
        if not lines:
            raise ModelFormatError("empty model file")
        header = lines[0].split()
        if len(header) != 2 or header[0] != constants.MODEL_MAGIC:
            raise ModelFormatError("not an expression model file (bad magic)")
        if header[1] != str(constants.MODEL_FORMAT_VERSION):
            raise ModelFormatError(f"unsupported model format version {header[1]}")

        sections: Dict[str, List[Tuple[int, List[str]]]] = {}
        order: List[str] = []
        current = None
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                if current in sections:
                    raise ModelFormatError(f"line {line_no}: duplicate section [{current}]")
                sections[current] = []
                order.append(current)
                continue
            if current is None:
                raise ModelFormatError(f"line {line_no}: entry outside any section")
            sections[current].append((line_no, line.split()))
        if not order or order[-1] != "end":
            raise ModelFormatError("model file is truncated (no [end] section)")

        config = self._read_config(sections.get("config"))
        selection = self._read_selection(sections.get("selection"))
        models = []
        for pair in CLASS_PAIRS:
            key = f"model {pair_key(pair)}"
            if key not in sections:
                raise ModelFormatError(f"missing section [{key}]")
            models.append(self._read_svm(sections[key], pair))
        model = ExpressionModel(config, selection, OaoEnsemble(tuple(models)), int(header[1]))
        self.validate(model)
        return model

    @staticmethod
    def _entries(entries, section: str) -> Dict[str, Tuple[int, List[str]]]:
        if entries is None:
            raise ModelFormatError(f"missing section [{section}]")
        out = {}
        for line_no, tokens in entries:
            key = tokens[1] if tokens[0] == "array" and len(tokens) > 1 else tokens[0]
            out[key] = (line_no, tokens)
        return out

    def _read_config(self, entries) -> PipelineConfig:
        found = self._entries(entries, "config")
        values = {}
        for name, parser in _CONFIG_FIELDS:
            if name not in found:
                raise ModelFormatError(f"config is missing '{name}'")
            line_no, tokens = found[name]
            if len(tokens) != 2:
                raise ModelFormatError(f"line {line_no}: malformed config entry '{name}'")
            text = tokens[1]
            try:
                if name == "svm_gamma":
                    values[name] = None if text == "none" else float.fromhex(text)
                elif parser is None:
                    values[name] = _parse_bool(text)
                else:
                    values[name] = parser(text)
            except ValueError as e:
                raise ModelFormatError(f"line {line_no}: bad value for '{name}': {e}") from None
        try:
            return PipelineConfig(**values)
        except Exception as e:
            raise ModelFormatError(f"stored configuration is invalid: {e}") from e

    def _read_selection(self, entries) -> SalientSelection:
        found = self._entries(entries, "selection")
        if "k" not in found:
            raise ModelFormatError("selection is missing 'k'")
        try:
            k = int(found["k"][1][1])
            patches = {}
            for pair in CLASS_PAIRS:
                line_no, tokens = found[pair_key(pair)]
                ids = tuple(int(t) for t in tokens[1:])
                if len(ids) != k or len(set(ids)) != k or not all(1 <= p <= constants.NUM_PATCHES for p in ids):
                    raise ModelFormatError(f"line {line_no}: selection for {pair_key(pair)} is not {k} distinct patches")
                patches[pair] = ids
        except KeyError as e:
            raise ModelFormatError(f"selection is missing {e}") from None
        except (ValueError, IndexError) as e:
            raise ModelFormatError(f"malformed selection: {e}") from None
        return SalientSelection(patches, k)

    def _read_svm(self, entries, pair: Tuple[int, int]) -> SvmModel:
        arrays = {}
        scalars = {}
        for line_no, tokens in entries:
            if tokens[0] == "array":
                name, arr = _decode_array(tokens, line_no)
                arrays[name] = arr
            else:
                scalars[tokens[0]] = (line_no, tokens[1:])
        try:
            stored_pair = tuple(int(t) for t in scalars["pair"][1])
            patch_ids = tuple(int(t) for t in scalars["patches"][1])
            c = float.fromhex(scalars["c"][1][0])
            gamma = float.fromhex(scalars["gamma"][1][0])
            bias = float.fromhex(scalars["bias"][1][0])
            pca = PcaModel(arrays["pca_mean"], arrays["pca_components"], arrays["pca_eigenvalues"])
            return SvmModel(arrays["support_vectors"], arrays["dual_coef"], bias, gamma, c,
                            pair=stored_pair, patch_ids=patch_ids, pca=pca)
        except KeyError as e:
            raise ModelFormatError(f"model {pair_key(pair)} is missing {e}") from None
        except (ValueError, IndexError) as e:
            raise ModelFormatError(f"model {pair_key(pair)} is malformed: {e}") from None

    @staticmethod
    def validate(model: ExpressionModel) -> None:
        config = model.config
        if model.selection.k != config.top_k:
            raise ModelFormatError(f"selection k={model.selection.k} disagrees with top_k={config.top_k}")
        expected_in = config.feature_dims()
        pairs = [m.pair for m in model.ensemble.models]
        if sorted(pairs) != list(CLASS_PAIRS):
            raise ModelFormatError("the ensemble must hold one model per class pair")
        for svm in model.ensemble.models:
            name = pair_key(svm.pair)
            if tuple(sorted(model.selection.for_pair(svm.pair))) != svm.patch_ids:
                raise ModelFormatError(f"{name}: patches disagree with the selection")
            pca = svm.pca
            if pca.components.ndim != 2 or pca.components.shape[0] != expected_in:
                raise ModelFormatError(f"{name}: PCA input dimension is not {expected_in}")
            if pca.mean.shape != (expected_in,) or pca.eigenvalues.shape != (pca.dims,):
                raise ModelFormatError(f"{name}: PCA mean or eigenvalues have the wrong shape")
            if svm.support_vectors.ndim != 2 or svm.support_vectors.shape[1] != pca.dims:
                raise ModelFormatError(f"{name}: support vectors do not match the PCA output dimension")
            if svm.dual_coef.shape != (svm.support_vectors.shape[0],):
                raise ModelFormatError(f"{name}: dual coefficients do not match the support vectors")

    @staticmethod
    def with_runtime(model: ExpressionModel, **overrides) -> ExpressionModel:
        """Copy with machine-local config fields (workers, cascade_dir) replaced."""
        return dataclasses.replace(model, config=dataclasses.replace(model.config, **overrides))
