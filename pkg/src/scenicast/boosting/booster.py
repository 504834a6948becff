"""Boosting loop, model container and portable serialization."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..validation import check_binary_labels, check_matrix
from .binning import QuantileBinner
from .loss import logistic_grad_hess, sigmoid
from .tree import TreeNode, grow_tree, predict_tree

FORMAT_NAME = "scenicast-gbdt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbdtParams:
    """Learning parameters; the defaults are part of the reproducibility
    contract, so two runs with equal seed and inputs yield identical models."""

    num_trees: int = 200
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_child_weight: float = 1.0
    min_child_samples: int = 20
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError("num_trees must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.min_child_weight < 0.0:
            raise ValueError("min_child_weight must be >= 0")
        if self.min_child_samples < 1:
            raise ValueError("min_child_samples must be >= 1")
        if self.lambda_l2 < 0.0:
            raise ValueError("lambda_l2 must be >= 0")
        if self.gamma_min_gain < 0.0:
            raise ValueError("gamma_min_gain must be >= 0")
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must be in [2, 255]")


@dataclass
class GbdtModel:
    trees: List[TreeNode]
    base_score: float
    params: GbdtParams
    cut_points: List[np.ndarray]
    n_features: int
    feature_names: List[str] = field(default_factory=list)
    schema_fingerprint: str = ""
    gain_by_feature: Optional[np.ndarray] = None
    split_count_by_feature: Optional[np.ndarray] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.gain_by_feature is None:
            self.gain_by_feature = np.zeros(self.n_features)
        if self.split_count_by_feature is None:
            self.split_count_by_feature = np.zeros(self.n_features, dtype=np.int64)


def train(
    X: np.ndarray,
    y: np.ndarray,
    params: GbdtParams = GbdtParams(),
    *,
    feature_names: Optional[Sequence[str]] = None,
    schema_fingerprint: str = "",
    meta: Optional[dict] = None,
) -> GbdtModel:
    """Fit a boosted ensemble on a numeric matrix (NaN marks missing).

    Growth is leaf-wise under the ``max_leaves`` cap.  Single-class labels
    produce a constant model (base score only) with a warning.
    """
    X = check_matrix(X)
    y = check_binary_labels(y, X.shape[0])
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty matrix")

    mean = float(y.mean())
    clipped = min(max(mean, 1e-6), 1.0 - 1e-6)
    base_score = math.log(clipped / (1.0 - clipped))

    binner = QuantileBinner(max_bins=params.max_bins).fit(X)
    model = GbdtModel(
        trees=[],
        base_score=base_score,
        params=params,
        cut_points=binner.cut_points_,
        n_features=X.shape[1],
        feature_names=list(feature_names) if feature_names else [],
        schema_fingerprint=schema_fingerprint,
        meta=dict(meta or {}),
    )
    if mean in (0.0, 1.0):
        warnings.warn("single-class labels; returning a constant model", stacklevel=2)
        return model

    binned = binner.transform(X)
    n_value_bins = binner.n_value_bins()
    scores = np.full(X.shape[0], base_score, dtype=np.float64)
    for _ in range(params.num_trees):
        g, h = logistic_grad_hess(scores, y)
        root, output, gains = grow_tree(binned, g, h, params, n_value_bins)
        model.trees.append(root)
        scores += output
        for feat, gain in gains.items():
            model.gain_by_feature[feat] += gain
            model.split_count_by_feature[feat] += 1
    return model


def raw_scores(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = check_matrix(X, n_features=model.n_features)
    binner = QuantileBinner.from_cut_points(model.cut_points, max_bins=model.params.max_bins)
    binned = binner.transform(X)
    scores = np.full(X.shape[0], model.base_score, dtype=np.float64)
    for tree in model.trees:
        scores += predict_tree(tree, binned, binner.missing_bin)
    return scores


def predict_proba(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Visibility probability per row; trees apply in training order."""
    return sigmoid(raw_scores(model, X))


def predict_row(model: GbdtModel, row: np.ndarray) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.n_features:
        raise ValueError(
            f"row width {row.shape} does not match model schema ({model.n_features} features)"
        )
    return float(predict_proba(model, row.reshape(1, -1))[0])


def feature_importance(model: GbdtModel) -> List[dict]:
    """Cumulative split gain per feature, sorted descending.

    ``mean_gain`` is total gain over the number of splits using the feature;
    unused features report zero.
    """
    rows = []
    for i in range(model.n_features):
        name = model.feature_names[i] if model.feature_names else f"f{i}"
        total = float(model.gain_by_feature[i])
        count = int(model.split_count_by_feature[i])
        rows.append(
            {
                "feature": name,
                "total_gain": total,
                "split_count": count,
                "mean_gain": total / count if count else 0.0,
            }
        )
    rows.sort(key=lambda r: (-r["total_gain"], r["feature"]))
    return rows


# ---------------------------------------------------------------------------
# Serialization: one self-describing, versioned text document
# ---------------------------------------------------------------------------

def _encode_tree(node: TreeNode, out: List[dict]) -> None:
    if node.is_leaf:
        out.append({"v": node.value})
        return
    out.append(
        {
            "f": node.feature,
            "t": node.bin_threshold,
            "ml": 1 if node.missing_left else 0,
            "g": node.split_gain,
        }
    )
    _encode_tree(node.left, out)
    _encode_tree(node.right, out)


def _decode_tree(nodes: List[dict], pos: List[int]) -> TreeNode:
    rec = nodes[pos[0]]
    pos[0] += 1
    if "v" in rec:
        return TreeNode(value=float(rec["v"]))
    node = TreeNode(
        feature=int(rec["f"]),
        bin_threshold=int(rec["t"]),
        missing_left=bool(rec["ml"]),
        split_gain=float(rec["g"]),
    )
    node.left = _decode_tree(nodes, pos)
    node.right = _decode_tree(nodes, pos)
    return node


def serialize_model(model: GbdtModel) -> str:
    trees = []
    for root in model.trees:
        encoded: List[dict] = []
        _encode_tree(root, encoded)
        trees.append(encoded)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "params": asdict(model.params),
        "base_score": model.base_score,
        "schema_fingerprint": model.schema_fingerprint,
        "n_features": model.n_features,
        "feature_names": model.feature_names,
        "cut_points": [[float(c) for c in cuts] for cuts in model.cut_points],
        "trees": trees,
        "gain_by_feature": [float(v) for v in model.gain_by_feature],
        "split_count_by_feature": [int(v) for v in model.split_count_by_feature],
        "meta": model.meta,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def deserialize_model(text: str) -> GbdtModel:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    trees = []
    for encoded in doc["trees"]:
        pos = [0]
        trees.append(_decode_tree(encoded, pos))
    return GbdtModel(
        trees=trees,
        base_score=float(doc["base_score"]),
        params=GbdtParams(**doc["params"]),
        cut_points=[np.asarray(c, dtype=np.float64) for c in doc["cut_points"]],
        n_features=int(doc["n_features"]),
        feature_names=list(doc.get("feature_names") or []),
        schema_fingerprint=doc.get("schema_fingerprint", ""),
        gain_by_feature=np.asarray(doc["gain_by_feature"], dtype=np.float64),
        split_count_by_feature=np.asarray(doc["split_count_by_feature"], dtype=np.int64),
        meta=doc.get("meta") or {},
    )


def save_model(model: GbdtModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))
        fh.write("\n")


def load_model(path) -> GbdtModel:
    with open(path, encoding="utf-8") as fh:
        return deserialize_model(fh.read())
