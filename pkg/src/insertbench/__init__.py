"""Peg-in-hole insertion benchmark: contact simulation, controllers, force
metrics and a small distributed experiment runner."""
from .core import (
    ContactParams,
    Pose6,
    PoseDistribution,
    RngStream,
    TrialResult,
    ValidationError,
    Wrench,
    WrenchSeries,
    sample_pose,
)
from .metrics import FilterConfig, MetricVector, compute_metric_vector, normalize_scoreboard

__version__ = "0.1.0"

__all__ = [
    "ContactParams", "FilterConfig", "MetricVector", "Pose6", "PoseDistribution", "RngStream",
    "TrialResult", "ValidationError", "Wrench", "WrenchSeries", "compute_metric_vector",
    "normalize_scoreboard", "sample_pose",
]
