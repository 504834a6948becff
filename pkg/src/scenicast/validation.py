"""Input validation helpers shared by the learner and evaluation code."""

from __future__ import annotations

import numpy as np


def check_matrix(X, n_features: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 matrix; NaN is allowed (missing), inf is not."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={X.ndim}")
    if np.isinf(X).any():
        raise ValueError("matrix contains infinite values")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_binary_labels(y, n_rows: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if n_rows is not None and y.shape[0] != n_rows:
        raise ValueError(f"labels length {y.shape[0]} != rows {n_rows}")
    bad = ~np.isin(y, (0.0, 1.0))
    if bad.any():
        raise ValueError(f"labels must be 0/1; offending values: {np.unique(y[bad])[:5]}")
    return y


def check_scores(scores, n_rows: int | None = None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if n_rows is not None and scores.shape[0] != n_rows:
        raise ValueError(f"scores length {scores.shape[0]} != rows {n_rows}")
    if scores.size == 0:
        raise ValueError("scores must be non-empty")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    return scores
