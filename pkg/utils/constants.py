# utils/constants.py

import logging
import os
import sys

logger = logging.getLogger(__name__)

# --- Core Application Settings ---
APP_NAME = "PatchFER"
APP_VERSION = "1.0"

# --- File Paths & Storage ---
if getattr(sys, 'frozen', False):
    APP_BASE_DIR = os.path.dirname(sys.executable)
else:
    APP_BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))  # utils/ lives one level down

USER_DATA_DIR = os.path.join(os.path.expanduser("~"), ".patchfer_data")

ASSETS_DIR_NAME = "assets"
ASSETS_PATH = os.path.join(APP_BASE_DIR, ASSETS_DIR_NAME)
CASCADE_DIR = os.path.join(ASSETS_PATH, "cascades")
FACE_CASCADE_FILENAME = "face.txt"
EYE_CASCADE_FILENAME = "eye.txt"
NOSE_CASCADE_FILENAME = "nose.txt"

# --- Logging Configuration ---
LOG_LEVEL = "DEBUG"  # File log level
LOG_FILE_NAME = "patchfer.log"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s [%(module)s.%(funcName)s:%(lineno)d] - %(message)s'
CONSOLE_LOG_FORMAT = '%(levelname)s: [%(name)s.%(funcName)s] %(message)s'

# --- Pipeline Defaults ---
SUPPORTED_RESOLUTIONS = (48, 96, 144, 192)
DEFAULT_RESOLUTION = 96
DEFAULT_VARIANT = "bins16"
DEFAULT_TOP_K = 4
DEFAULT_SEED = 0
DEFAULT_FOLDS = 10
DEFAULT_SALIENCY_FOLDS = 10
DEFAULT_REPEATS = 10
DEFAULT_WORKERS = 1
NUM_PATCHES = 19

# --- Detection ---
DEFAULT_SCALE_STEP = 1.1
MIN_NEIGHBORS = 3
GROUP_EPS = 0.2
MIN_SIZE_FRACTION = 0.2  # of the ROI's smaller side
WINDOW_STD_FLOOR = 1.0

# Coarse ROIs as (row_start, row_end, col_start, col_end) fractions of the face box.
LEFT_EYE_ROI = (0.20, 0.55, 0.05, 0.50)
RIGHT_EYE_ROI = (0.20, 0.55, 0.50, 0.95)
NOSE_ROI = (0.35, 0.75, 0.25, 0.75)

# --- Landmarks ---
MOUTH_ROI_ROWS = (0.10, 0.45)  # below nose, fractions of R
MOUTH_ROI_HALF_WIDTH = 0.30
BROW_ROI_ROWS = (0.25, 0.02)  # above eye, fractions of R
BROW_ROI_HALF_WIDTH = 0.15
AREA_MIN_FRACTION = 0.001  # of R^2
SYMMETRY_RATIO_MIN = 1.2
DILATION_RADIUS = 1
BROW_THRESHOLD_OFFSET = 10
LANDMARK_CDF_STEP = 0.01
LANDMARK_CDF_MAX = 0.30

LANDMARK_NAMES = (
    "left_eye", "right_eye", "nose",
    "lip_left", "lip_right",
    "brow_inner_left", "brow_inner_right",
)

ANTHROPOMETRIC_TABLE = {
    "left_eye": (0.30, 0.35),
    "right_eye": (0.70, 0.35),
    "nose": (0.50, 0.55),
    "lip_left": (0.35, 0.78),
    "lip_right": (0.65, 0.78),
    "brow_inner_left": (0.40, 0.25),
    "brow_inner_right": (0.60, 0.25),
}

# --- Subspace ---
PCA_ENERGY = 0.95
PCA_MAX_DIMS = 64
LDA_RIDGE_FACTOR = 1e-6

# --- SVM ---
SVM_C = 10.0
SVM_TOL = 1e-3
SVM_PASSES_PER_SAMPLE = 10
SVM_MIN_ITERATIONS = 100_000
SVM_TAU = 1e-12  # curvature floor for working-set selection
SVM_C_GRID = (1.0, 10.0, 100.0)
SVM_GAMMA_GRID = (0.5, 1.0, 2.0)  # multiples of 1/d
SVM_INNER_FOLDS = 5
DUAL_FEASIBILITY_TOL = 1e-6

# --- Model File ---
MODEL_MAGIC = "FERSPM"
MODEL_FORMAT_VERSION = 1

# --- Fused Protocol ---
FUSED_TRAIN_FRACTION = 0.9

# --- Reference Figures (informational comparison only) ---
REFERENCE_VALUES = {
    "ck": {"macro_f": 94.39, "macro_recall": 94.1, "macro_precision": 94.69},
    "jaffe": {"accuracy": 91.8},
    "fused-ck": {"accuracy": 89.64},
    "fused-jaffe": {"accuracy": 85.06},
}

# --- Synthetic Fixture ---
SYNTH_IMAGE_SIZE = 128
SYNTH_FACE_SIZE = 96
SYNTH_PER_CLASS = 10

# --- CLI Exit Codes ---
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
