"""Scenic visibility forecasting from fused webcam and weather signals."""

__version__ = "0.1.0"

from .boosting import GbdtParams, GradientBoostedClassifier
from .core import (
    CameraSite,
    FrameRecord,
    QcStatus,
    VisibilityClass,
    VisionProbs,
    WeatherRecord,
    is_visible,
)
from .evaluation import ExperimentConfig, Variant, accuracy, group_kfold, roc_auc, run_experiment
from .fusion import DayExample, DayExampleEncoder, FeatureMatrix, SnapshotKind, build_day_examples
from .synth import synth_generate

__all__ = [
    "CameraSite",
    "DayExample",
    "DayExampleEncoder",
    "ExperimentConfig",
    "FeatureMatrix",
    "FrameRecord",
    "GbdtParams",
    "GradientBoostedClassifier",
    "QcStatus",
    "SnapshotKind",
    "Variant",
    "VisibilityClass",
    "VisionProbs",
    "WeatherRecord",
    "accuracy",
    "build_day_examples",
    "group_kfold",
    "is_visible",
    "roc_auc",
    "run_experiment",
    "synth_generate",
]
