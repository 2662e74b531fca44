"""Restoration of underwater videos distorted by a wavy water surface."""

from .errors import DataError, NumericalError
from .imaging import MotionField, Video, mean_frame, median_frame, warp
from .pipeline import PipelineConfig, run_benchmark, run_restore

__all__ = [
    "DataError",
    "MotionField",
    "NumericalError",
    "PipelineConfig",
    "Video",
    "mean_frame",
    "median_frame",
    "run_benchmark",
    "run_restore",
    "warp",
]

__version__ = "0.1.0"
