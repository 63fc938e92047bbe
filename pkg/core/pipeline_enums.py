# core/pipeline_enums.py
from enum import Enum, auto
from typing import Tuple


class ExpressionLabel(Enum):
    """
    The six basic expressions. Values are the canonical indices and fix
    the row order of every confusion matrix.
    """
    ANGER = 0
    DISGUST = 1
    FEAR = 2
    HAPPINESS = 3
    SADNESS = 4
    SURPRISE = 5

    @property
    def index(self) -> int:
        return self.value

    @property
    def display_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "ExpressionLabel":
        key = name.strip().upper()
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown expression label '{name}'") from None

    @classmethod
    def ordered(cls) -> Tuple["ExpressionLabel", ...]:
        return tuple(sorted(cls, key=lambda label: label.value))


class LbpVariant(Enum):
    """LBP histogram binning schemes."""
    BINS256 = "bins256"
    BINS32 = "bins32"
    BINS16 = "bins16"
    U2 = "u2"
    RIU2 = "riu2"

    @property
    def bins(self) -> int:
        return _VARIANT_BINS[self]

    @classmethod
    def from_name(cls, name: str) -> "LbpVariant":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown LBP variant '{name}'") from None


_VARIANT_BINS = {
    LbpVariant.BINS256: 256,
    LbpVariant.BINS32: 32,
    LbpVariant.BINS16: 16,
    LbpVariant.U2: 59,
    LbpVariant.RIU2: 10,
}


class Provenance(Enum):
    """Where a landmark coordinate came from."""
    DETECTED = auto()
    FALLBACK = auto()
    GROUND_TRUTH = auto()  # read from a landmark file


class EyeSide(Enum):
    LEFT = "left"
    RIGHT = "right"
