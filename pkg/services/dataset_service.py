# services/dataset_service.py
# Reads and writes dataset manifests: CSV rows of path,label[,landmarks[,source]].

import csv
import logging
import os
from typing import Iterable, List, Optional, Sequence

from core.errors import DataError, ManifestError
from core.models import DatasetManifest, DatasetRecord
from core.pipeline_enums import ExpressionLabel

logger = logging.getLogger(__name__)

_HEADER_FIRST_FIELD = "path"


class DatasetService:
    """Loads manifests; relative paths resolve against the manifest's own directory."""

    def __init__(self):
        logger.info("DatasetService initialized.")

    def load_manifest(self, manifest_path: str, source: Optional[str] = None) -> DatasetManifest:
        """
        Parses a UTF-8 manifest. Lines starting with ``#`` and blank lines are
        skipped, as is a leading ``path,label,...`` header row.

        Args:
            manifest_path: the CSV file.
            source: tag for rows without a fourth column; defaults to the
                manifest file name without extension.

        Raises:
            ManifestError: unknown label, duplicate or missing image path,
                missing landmark file, or an empty manifest. The message
                names the line.
        """
        if not os.path.exists(manifest_path):
            raise DataError(f"manifest not found: {manifest_path}")
        base_dir = os.path.dirname(os.path.abspath(manifest_path))
        default_source = source or os.path.splitext(os.path.basename(manifest_path))[0]

        records: List[DatasetRecord] = []
        seen = {}
        with open(manifest_path, "r", encoding="utf-8", newline="") as handle:
            for number, row in enumerate(csv.reader(handle), start=1):
                if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                    continue
                fields = [f.strip() for f in row]
                if not records and not seen and fields[0].lower() == _HEADER_FIRST_FIELD:
                    continue
                if len(fields) < 2 or len(fields) > 4:
                    raise ManifestError(f"expected 2 to 4 fields, got {len(fields)}", number)
                image_path = self._resolve(base_dir, fields[0])
                try:
                    label = ExpressionLabel.from_name(fields[1])
                except ValueError as e:
                    raise ManifestError(str(e), number) from None
                if image_path in seen:
                    raise ManifestError(f"duplicate image path (first listed on line {seen[image_path]})", number)
                if not os.path.exists(image_path):
                    raise ManifestError(f"image not found: {image_path}", number)
                landmarks = None
                if len(fields) >= 3 and fields[2]:
                    landmarks = self._resolve(base_dir, fields[2])
                    if not os.path.exists(landmarks):
                        raise ManifestError(f"landmark file not found: {landmarks}", number)
                tag = fields[3] if len(fields) == 4 and fields[3] else default_source
                seen[image_path] = number
                records.append(DatasetRecord(image_path, label, landmarks, tag, number))

        if not records:
            raise ManifestError(f"manifest {manifest_path} lists no images")
        manifest = DatasetManifest(tuple(records), manifest_path)
        counts = ", ".join(f"{label.display_name}={n}" for label, n in manifest.class_counts().items())
        logger.info(f"Loaded {len(records)} records from {manifest_path} ({counts})")
        return manifest

    def load_many(self, paths: Sequence[str]) -> DatasetManifest:
        """Concatenates manifests, each file's rows tagged with its own source unless given."""
        records: List[DatasetRecord] = []
        for path in paths:
            records.extend(self.load_manifest(path).records)
        seen = set()
        for record in records:
            if record.path in seen:
                raise ManifestError(f"image {record.path} appears in more than one manifest", record.line)
            seen.add(record.path)
        return DatasetManifest(tuple(records), ";".join(paths))

    @staticmethod
    def _resolve(base_dir: str, path: str) -> str:
        return os.path.normpath(path if os.path.isabs(path) else os.path.join(base_dir, path))

    @staticmethod
    def require_classes(manifest: DatasetManifest, minimum: int = 1) -> None:
        short = [label.display_name for label, n in manifest.class_counts().items() if n < minimum]
        if short:
            raise DataError(f"classes with fewer than {minimum} sample(s): {short}")

    def write_manifest(self, path: str, records: Iterable[DatasetRecord]) -> None:
        """Writes records with paths relative to the manifest directory."""
        base_dir = os.path.dirname(os.path.abspath(path))
        os.makedirs(base_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["path", "label", "landmarks", "source"])
            for record in records:
                landmarks = os.path.relpath(record.landmarks_path, base_dir) if record.landmarks_path else ""
                writer.writerow([os.path.relpath(record.path, base_dir), record.label.display_name,
                                 landmarks, record.source])
        logger.debug(f"Manifest written to {path}")
