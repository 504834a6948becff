"""Histogram-based gradient-boosted decision trees with logistic loss.

Leaf-wise growth under a max-leaf cap, quantile binning with a reserved
missing bin, learned missing-value routing, gain-based feature importance
and a portable text serialization.
"""

from .booster import (
    GbdtModel,
    GbdtParams,
    deserialize_model,
    feature_importance,
    load_model,
    predict_proba,
    predict_row,
    save_model,
    serialize_model,
    train,
)
from .estimator import GradientBoostedClassifier
from .loss import logistic_grad_hess, mean_log_loss, sigmoid
from .tree import TreeNode, best_split, build_histogram

__all__ = [
    "GbdtModel",
    "GbdtParams",
    "GradientBoostedClassifier",
    "TreeNode",
    "best_split",
    "build_histogram",
    "deserialize_model",
    "feature_importance",
    "load_model",
    "logistic_grad_hess",
    "mean_log_loss",
    "predict_proba",
    "predict_row",
    "save_model",
    "serialize_model",
    "train",
]
