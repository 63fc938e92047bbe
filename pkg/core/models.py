# core/models.py
# Domain types shared by every service. Arrays are numpy; containers are
# immutable once built so they can be shared across worker threads.

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import APP_CONFIG
from core.errors import DataError, UsageError
from core.pipeline_enums import ExpressionLabel, LbpVariant, Provenance
from utils import constants

NUM_CLASSES = len(ExpressionLabel)
# Unordered class pairs in lexicographic order; index i of every 15-row table.
CLASS_PAIRS: Tuple[Tuple[int, int], ...] = tuple(combinations(range(NUM_CLASSES), 2))
PATCH_IDS: Tuple[int, ...] = tuple(range(1, constants.NUM_PATCHES + 1))


def pair_key(pair: Tuple[int, int]) -> str:
    a, b = pair
    return f"{ExpressionLabel(a).display_name}-{ExpressionLabel(b).display_name}"


# --- Rasters ---

@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster stored as a (height, width) uint8 array."""
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise DataError("GrayImage intensities must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating):
                arr = np.clip(np.floor(arr + 0.5), 0, 255)
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class BinaryImage:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise DataError(f"BinaryImage needs a 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def to_gray(self) -> GrayImage:
        return GrayImage(np.where(self.bits, 255, 0).astype(np.uint8))


@dataclass(frozen=True)
class IntegralImage:
    """(height+1, width+1) table; entry [y, x] sums all pixels above and left of (x, y)."""
    table: np.ndarray

    @property
    def width(self) -> int:
        return int(self.table.shape[1]) - 1

    @property
    def height(self) -> int:
        return int(self.table.shape[0]) - 1

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        if w <= 0 or h <= 0:
            return 0
        t = self.table
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DataError(f"BoundingBox needs positive size, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def center(self) -> "Point":
        # Mean of the four corner pixel coordinates.
        return Point(self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)

    def contains(self, other: "BoundingBox") -> bool:
        return (other.x >= self.x and other.y >= self.y
                and other.right <= self.right and other.bottom <= self.bottom)

    def shifted(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def midpoint(self, other: "Point") -> "Point":
        return Point((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)

    def offset(self, dx: float, dy: float) -> "Point":
        return Point(self.x + dx, self.y + dy)


@dataclass(frozen=True)
class Region:
    """A connected set of pixels; ``pixels`` holds (x, y) rows in row-major scan order."""
    label: int
    area: int
    bbox: BoundingBox
    pixels: np.ndarray

    @property
    def top(self) -> int:
        return self.bbox.y


# --- Detection ---

@dataclass(frozen=True)
class HaarRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class WeakClassifier:
    threshold: float
    left: float  # taken when feature < threshold
    right: float
    rects: Tuple[HaarRect, ...]


@dataclass(frozen=True)
class CascadeStage:
    threshold: float
    weak: Tuple[WeakClassifier, ...]


@dataclass(frozen=True)
class HaarCascade:
    width: int
    height: int
    stages: Tuple[CascadeStage, ...]
    name: str = ""


# --- Landmarks ---

@dataclass(frozen=True)
class LandmarkSet:
    points: Dict[str, Point]
    provenance: Dict[str, Provenance] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Point:
        return self.points[name]

    def names(self) -> Tuple[str, ...]:
        return tuple(n for n in constants.LANDMARK_NAMES if n in self.points)

    def is_complete(self) -> bool:
        return all(n in self.points for n in constants.LANDMARK_NAMES)

    def provenance_of(self, name: str) -> Provenance:
        return self.provenance.get(name, Provenance.DETECTED)

    def all_detected(self) -> bool:
        return self.is_complete() and all(
            self.provenance_of(n) == Provenance.DETECTED for n in constants.LANDMARK_NAMES)

    def merged(self, points: Dict[str, Point], provenance: Provenance) -> "LandmarkSet":
        new_points = dict(self.points)
        new_prov = dict(self.provenance)
        for name, point in points.items():
            new_points[name] = point
            new_prov[name] = provenance
        return LandmarkSet(new_points, new_prov)

    def mirrored(self, size: int) -> "LandmarkSet":
        """Horizontal mirror about the raster midline, swapping left/right names."""
        swap = {"left_eye": "right_eye", "lip_left": "lip_right", "brow_inner_left": "brow_inner_right"}
        swap.update({v: k for k, v in swap.items()})
        points = {}
        prov = {}
        for name, p in self.points.items():
            target = swap.get(name, name)
            points[target] = Point(size - 1 - p.x, p.y)
            prov[target] = self.provenance_of(name)
        return LandmarkSet(points, prov)

    def check_invariants(self, size: int) -> None:
        if not self.is_complete():
            missing = [n for n in constants.LANDMARK_NAMES if n not in self.points]
            raise DataError(f"landmark set is missing {missing}")
        for name in constants.LANDMARK_NAMES:
            p = self.points[name]
            if not (0 <= p.x <= size - 1 and 0 <= p.y <= size - 1):
                raise DataError(f"landmark {name} at ({p.x:.2f}, {p.y:.2f}) lies outside the {size}x{size} face")
        if not self.points["left_eye"].x < self.points["right_eye"].x:
            raise DataError("left_eye must lie left of right_eye")
        if not self.points["lip_left"].x < self.points["lip_right"].x:
            raise DataError("lip_left must lie left of lip_right")


@dataclass(frozen=True)
class FaceTransform:
    """Maps source-image coordinates into the aligned R x R face."""
    center: Point
    angle: float  # eye-line angle in radians; the face is rotated by -angle
    box: BoundingBox
    resolution: int

    def scale(self) -> Tuple[float, float]:
        r = self.resolution - 1
        sx = r / (self.box.w - 1) if self.box.w > 1 else 1.0
        sy = r / (self.box.h - 1) if self.box.h > 1 else 1.0
        return sx, sy

    def to_aligned(self, p: Point) -> Point:
        c, s = math.cos(-self.angle), math.sin(-self.angle)
        dx, dy = p.x - self.center.x, p.y - self.center.y
        rx = self.center.x + c * dx - s * dy
        ry = self.center.y + s * dx + c * dy
        sx, sy = self.scale()
        return Point((rx - self.box.x) * sx, (ry - self.box.y) * sy)

    def to_source(self, p: Point) -> Point:
        sx, sy = self.scale()
        rx = p.x / sx + self.box.x
        ry = p.y / sy + self.box.y
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = rx - self.center.x, ry - self.center.y
        return Point(self.center.x + c * dx - s * dy, self.center.y + s * dx + c * dy)


@dataclass(frozen=True)
class AlignedFace:
    image: GrayImage
    resolution: int
    landmarks: Optional[LandmarkSet] = None
    transform: Optional[FaceTransform] = None

    def with_landmarks(self, landmarks: LandmarkSet) -> "AlignedFace":
        return AlignedFace(self.image, self.resolution, landmarks, self.transform)


# --- Patches & features ---

@dataclass(frozen=True)
class PatchLayout:
    boxes: Tuple[BoundingBox, ...]
    side: int

    def __post_init__(self):
        if len(self.boxes) != constants.NUM_PATCHES:
            raise DataError(f"a patch layout holds {constants.NUM_PATCHES} boxes, got {len(self.boxes)}")

    def box(self, patch_id: int) -> BoundingBox:
        return self.boxes[patch_id - 1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    patch_ids: Tuple[int, ...]
    variant: LbpVariant

    @property
    def blocks_per_patch(self) -> int:
        return 4

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def position(self, index: int) -> Tuple[int, int, int]:
        """(patch id, block index, bin) for one entry of the vector."""
        bins = self.variant.bins
        per_patch = self.blocks_per_patch * bins
        patch = self.patch_ids[index // per_patch]
        rest = index % per_patch
        return patch, rest // bins, rest % bins


# --- Subspace & classifiers ---

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d_in, d_pca), orthonormal columns
    eigenvalues: np.ndarray

    @property
    def input_dims(self) -> int:
        return int(self.components.shape[0])

    @property
    def dims(self) -> int:
        return int(self.components.shape[1])


@dataclass(frozen=True)
class LdaModel:
    projection: np.ndarray  # (d_pca, n_components)
    class_means: np.ndarray  # (n_classes, n_components)
    labels: Tuple[int, ...]
    ridge: float = 0.0


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    c: float
    pair: Optional[Tuple[int, int]] = None
    patch_ids: Tuple[int, ...] = ()
    pca: Optional[PcaModel] = None

    @property
    def input_dims(self) -> int:
        return int(self.support_vectors.shape[1])


@dataclass(frozen=True)
class OaoEnsemble:
    models: Tuple[SvmModel, ...]
    classes: Tuple[int, ...] = tuple(range(NUM_CLASSES))


@dataclass(frozen=True)
class SaliencyTable:
    scores: np.ndarray  # (len(CLASS_PAIRS), NUM_PATCHES)
    folds: int
    seed: int
    pairs: Tuple[Tuple[int, int], ...] = CLASS_PAIRS

    def score(self, pair: Tuple[int, int], patch_id: int) -> float:
        return float(self.scores[self.pairs.index(pair), patch_id - 1])


@dataclass(frozen=True)
class SalientSelection:
    patches: Dict[Tuple[int, int], Tuple[int, ...]]
    k: int

    def for_pair(self, pair: Tuple[int, int]) -> Tuple[int, ...]:
        return self.patches[pair]


# --- Data & configuration ---

@dataclass(frozen=True)
class DatasetRecord:
    path: str
    label: ExpressionLabel
    landmarks_path: Optional[str] = None
    source: str = ""
    line: int = 0


@dataclass(frozen=True)
class DatasetManifest:
    records: Tuple[DatasetRecord, ...]
    path: str = ""

    def labels(self) -> List[int]:
        return [r.label.index for r in self.records]

    def class_counts(self) -> Dict[ExpressionLabel, int]:
        counts = {label: 0 for label in ExpressionLabel.ordered()}
        for record in self.records:
            counts[record.label] += 1
        return counts

    def sources(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for record in self.records:
            if record.source not in seen:
                seen.append(record.source)
        return tuple(seen)


def _default_variant() -> LbpVariant:
    try:
        return LbpVariant.from_name(APP_CONFIG.get("variant", constants.DEFAULT_VARIANT))
    except ValueError:
        return LbpVariant.from_name(constants.DEFAULT_VARIANT)


@dataclass(frozen=True)
class PipelineConfig:
    resolution: int = field(default_factory=lambda: APP_CONFIG.get("resolution", constants.DEFAULT_RESOLUTION))
    variant: LbpVariant = field(default_factory=_default_variant)
    top_k: int = field(default_factory=lambda: APP_CONFIG.get("top_k", constants.DEFAULT_TOP_K))
    seed: int = field(default_factory=lambda: APP_CONFIG.get("seed", constants.DEFAULT_SEED))
    saliency_folds: int = constants.DEFAULT_SALIENCY_FOLDS
    pca_energy: float = constants.PCA_ENERGY
    pca_max_dims: int = constants.PCA_MAX_DIMS
    svm_c: float = constants.SVM_C
    svm_gamma: Optional[float] = None  # None means 1/d
    svm_tol: float = constants.SVM_TOL
    grid_search: bool = False
    inner_folds: int = constants.SVM_INNER_FOLDS
    scale_step: float = constants.DEFAULT_SCALE_STEP
    use_cascades: bool = True
    cascade_dir: str = field(default_factory=lambda: APP_CONFIG.get("cascade_dir", constants.CASCADE_DIR))
    workers: int = field(default_factory=lambda: APP_CONFIG.get("workers", constants.DEFAULT_WORKERS))

    def __post_init__(self):
        if self.resolution not in constants.SUPPORTED_RESOLUTIONS:
            raise UsageError(f"resolution must be one of {constants.SUPPORTED_RESOLUTIONS}, got {self.resolution}")
        if not 1 <= self.top_k <= constants.NUM_PATCHES:
            raise UsageError(f"top_k must lie in [1, {constants.NUM_PATCHES}], got {self.top_k}")
        if self.saliency_folds < 2 or self.inner_folds < 2:
            raise UsageError("fold counts must be at least 2")
        if not 0.0 < self.pca_energy <= 1.0:
            raise UsageError(f"pca_energy must lie in (0, 1], got {self.pca_energy}")
        if self.scale_step <= 1.0:
            raise UsageError(f"scale_step must exceed 1, got {self.scale_step}")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")

    @property
    def patch_side(self) -> int:
        return int(math.floor(self.resolution / 9.0 + 0.5))

    def feature_dims(self, k: Optional[int] = None) -> int:
        return (self.top_k if k is None else k) * 4 * self.variant.bins


@dataclass(frozen=True)
class ExpressionModel:
    config: PipelineConfig
    selection: SalientSelection
    ensemble: OaoEnsemble
    version: int = constants.MODEL_FORMAT_VERSION


# --- Results ---

@dataclass(frozen=True)
class FaceResult:
    path: str
    face: Optional[AlignedFace]
    failure: Optional[str] = None
    elapsed_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return self.face is not None


@dataclass(frozen=True)
class Prediction:
    label: Optional[ExpressionLabel]
    votes: Tuple[int, ...]
    scores: Tuple[float, ...] = ()

    @property
    def no_face(self) -> bool:
        return self.label is None


@dataclass
class EvaluationReport:
    counts: np.ndarray  # 6x6, row = truth
    confusion: np.ndarray  # row percentages
    precision: np.ndarray
    recall: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f: float
    accuracy: float
    sample_counts: np.ndarray
    failures: List[Tuple[str, str]] = field(default_factory=list)
    label: str = ""


@dataclass
class LandmarkEvaluation:
    errors: List[Tuple[str, float]]
    thresholds: np.ndarray
    cdf: np.ndarray
    timings_ms: List[float] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def mean_time_ms(self) -> float:
        return float(np.mean(self.timings_ms)) if self.timings_ms else 0.0

    @property
    def max_time_ms(self) -> float:
        return float(np.max(self.timings_ms)) if self.timings_ms else 0.0
