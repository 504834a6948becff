"""Quantile feature binning with a reserved missing bin.

Cut points are learned on the training fold only; validation and prediction
rows are binned by the stored cut points, so fold boundaries never leak.
Value bins occupy indices ``0 .. n_cuts`` and NaN rows land in the single
reserved bin at index ``max_bins``, which is why ``max_bins <= 255`` keeps
the binned matrix in uint8.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np


class QuantileBinner:
    def __init__(self, max_bins: int = 255):
        if not 2 <= max_bins <= 255:
            raise ValueError(f"max_bins out of [2, 255]: {max_bins}")
        self.max_bins = max_bins
        self.cut_points_: Optional[List[np.ndarray]] = None

    @property
    def missing_bin(self) -> int:
        return self.max_bins

    def fit(self, X: np.ndarray) -> "QuantileBinner":
        X = np.asarray(X, dtype=np.float64)
        cuts = []
        for j in range(X.shape[1]):
            col = X[:, j]
            finite = col[~np.isnan(col)]
            cuts.append(self._feature_cuts(finite))
        self.cut_points_ = cuts
        return self

    def _feature_cuts(self, finite: np.ndarray) -> np.ndarray:
        if finite.size == 0:
            return np.empty(0, dtype=np.float64)
        uniq = np.unique(finite)
        if uniq.size <= 1:
            return np.empty(0, dtype=np.float64)
        if uniq.size <= self.max_bins:
            # Exact binning: midpoints between consecutive distinct values.
            return (uniq[:-1] + uniq[1:]) / 2.0
        qs = np.linspace(0.0, 1.0, self.max_bins + 1)[1:-1]
        return np.unique(np.quantile(finite, qs))

    def n_value_bins(self) -> np.ndarray:
        if self.cut_points_ is None:
            raise ValueError("binner is not fitted")
        return np.array([len(c) + 1 for c in self.cut_points_], dtype=np.int64)

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.cut_points_ is None:
            raise ValueError("binner is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.cut_points_):
            raise ValueError(
                f"expected {len(self.cut_points_)} features, got shape {X.shape}"
            )
        binned = np.empty(X.shape, dtype=np.uint8)
        for j, cuts in enumerate(self.cut_points_):
            col = X[:, j]
            missing = np.isnan(col)
            idx = np.searchsorted(cuts, col, side="right")
            idx[missing] = self.missing_bin
            binned[:, j] = idx.astype(np.uint8)
        return binned

    @classmethod
    def from_cut_points(cls, cut_points: Sequence[Sequence[float]], max_bins: int = 255) -> "QuantileBinner":
        binner = cls(max_bins=max_bins)
        binner.cut_points_ = [np.asarray(c, dtype=np.float64) for c in cut_points]
        return binner
