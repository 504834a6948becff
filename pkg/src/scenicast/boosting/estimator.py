"""Scikit-learn style facade over the boosting engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ..validation import check_binary_labels, check_matrix
from .booster import (
    GbdtParams,
    feature_importance,
    load_model,
    predict_proba,
    save_model,
    train,
)


class GradientBoostedClassifier(BaseEstimator, ClassifierMixin):
    """Binary gradient-boosted tree classifier with native missing handling.

    A thin estimator wrapper so the learner composes with sklearn tooling
    (``clone``, pipelines, CV helpers); the algorithm lives in the engine
    modules.
    """

    def __init__(
        self,
        num_trees=200,
        learning_rate=0.1,
        max_leaves=31,
        min_child_weight=1.0,
        min_child_samples=20,
        lambda_l2=1.0,
        gamma_min_gain=0.0,
        max_bins=255,
        seed=0,
    ):
        self.num_trees = num_trees
        self.learning_rate = learning_rate
        self.max_leaves = max_leaves
        self.min_child_weight = min_child_weight
        self.min_child_samples = min_child_samples
        self.lambda_l2 = lambda_l2
        self.gamma_min_gain = gamma_min_gain
        self.max_bins = max_bins
        self.seed = seed

    def _params(self) -> GbdtParams:
        return GbdtParams(
            num_trees=self.num_trees,
            learning_rate=self.learning_rate,
            max_leaves=self.max_leaves,
            min_child_weight=self.min_child_weight,
            min_child_samples=self.min_child_samples,
            lambda_l2=self.lambda_l2,
            gamma_min_gain=self.gamma_min_gain,
            max_bins=self.max_bins,
            seed=self.seed,
        )

    def fit(self, X, y, feature_names=None):
        X = check_matrix(X)
        y = check_binary_labels(y, X.shape[0])
        self.model_ = train(X, y, self._params(), feature_names=feature_names)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        self._check_fitted()
        p1 = predict_proba(self.model_, X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @property
    def feature_importances_(self):
        self._check_fitted()
        gains = np.asarray(self.model_.gain_by_feature, dtype=np.float64)
        total = gains.sum()
        return gains / total if total > 0 else gains

    def importance_report(self):
        self._check_fitted()
        return feature_importance(self.model_)

    def save(self, path):
        self._check_fitted()
        save_model(self.model_, path)

    @classmethod
    def from_file(cls, path) -> "GradientBoostedClassifier":
        model = load_model(path)
        est = cls(**{k: getattr(model.params, k) for k in model.params.__dataclass_fields__})
        est.model_ = model
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = model.n_features
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("estimator is not fitted; call fit first")
