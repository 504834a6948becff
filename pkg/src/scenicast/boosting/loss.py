"""Binary logistic loss and its derivatives."""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logistic_grad_hess(score, label):
    """Gradient and hessian of the logistic loss at a raw score.

    With p = sigmoid(score): gradient = p - label, hessian = p * (1 - p).
    Works on scalars and arrays alike.
    """
    p = sigmoid(score)
    grad = p - np.asarray(label, dtype=np.float64)
    hess = p * (1.0 - p)
    if np.ndim(grad) == 0:
        return float(grad), float(hess)
    return grad, hess


def log_loss_terms(scores, labels):
    """Per-row logistic loss, computed from raw scores without underflow."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    # log(1 + exp(-m)) with m = score for y=1, -score for y=0
    margins = np.where(labels > 0.5, scores, -scores)
    return np.logaddexp(0.0, -margins)


def mean_log_loss(scores, labels) -> float:
    return float(np.mean(log_loss_terms(scores, labels)))
