"""Masked short/long-term representation anomaly detection for multivariate time series."""

__version__ = "0.1.0"

from .detect import best_f1_threshold, localize, point_adjust, score  # noqa: E402
from .estimator import SLMRDetector  # noqa: E402
from .masking import MaskSpec, apply_mask, generate_mask  # noqa: E402
from .model import SlmrConfig, SlmrModel, TrainConfig, train  # noqa: E402
from .pipeline import MinMaxNormalizer, Windows, load_csv, make_windows, synth_generate  # noqa: E402

__all__ = [
    "SLMRDetector",
    "SlmrConfig",
    "SlmrModel",
    "TrainConfig",
    "train",
    "MaskSpec",
    "generate_mask",
    "apply_mask",
    "MinMaxNormalizer",
    "Windows",
    "load_csv",
    "make_windows",
    "synth_generate",
    "score",
    "point_adjust",
    "best_f1_threshold",
    "localize",
]
