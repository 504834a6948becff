"""Single-tree growing: histograms, split search, leaf-wise expansion.

Histograms accumulate gradient/hessian sums per (feature, bin) including
the reserved missing bin.  The split search scans every bin boundary of
every feature and tries both missing-direction assignments; accumulation
and scan orders are fixed so training is bit-reproducible and sibling
histograms can be derived by subtraction from the parent.

Zero-gain splits are accepted only while the node's gradients are still
heterogeneous.  This keeps pure converged nodes as leaves (their best gain
is negative under any l2 penalty) while symmetric patterns such as XOR,
whose first useful split has exactly zero gain, remain learnable.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np


@dataclass
class TreeNode:
    """Internal node (``left``/``right`` set) or leaf (``value`` only)."""

    value: float = 0.0
    feature: int = -1
    bin_threshold: int = -1
    missing_left: bool = True
    split_gain: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()


@dataclass(frozen=True)
class SplitInfo:
    feature: int
    bin_threshold: int
    missing_left: bool
    gain: float


def build_histogram(
    column: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, n_bins: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-bin (G, H, count) for one binned column over a node's row set."""
    bins = column[rows].astype(np.int64)
    if bins.size and (bins.min() < 0 or bins.max() >= n_bins):
        raise RuntimeError("bin index out of range; binning is corrupt")
    G = np.bincount(bins, weights=g[rows], minlength=n_bins)
    H = np.bincount(bins, weights=h[rows], minlength=n_bins)
    C = np.bincount(bins, minlength=n_bins)
    return G, H, C


def build_histograms(
    binned: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, n_bins: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All-feature histograms, shape (n_features, n_bins).

    One composite bincount per statistic; accumulation order is row-major
    and therefore deterministic.
    """
    n_features = binned.shape[1]
    sub = binned[rows].astype(np.int64)
    sub += np.arange(n_features, dtype=np.int64) * n_bins
    flat = sub.ravel()
    size = n_features * n_bins
    G = np.bincount(flat, weights=np.repeat(g[rows], n_features), minlength=size)
    H = np.bincount(flat, weights=np.repeat(h[rows], n_features), minlength=size)
    C = np.bincount(flat, minlength=size)
    return (
        G.reshape(n_features, n_bins),
        H.reshape(n_features, n_bins),
        C.reshape(n_features, n_bins),
    )


def _split_gain_terms(GL, HL, GR, HR, Gp, Hp, lam):
    out = GL * GL
    out /= HL + lam
    right = GR * GR
    right /= HR + lam
    out += right
    out -= Gp * Gp / (Hp + lam)
    out *= 0.5
    return out


def best_split(
    hist: Tuple[np.ndarray, np.ndarray, np.ndarray],
    n_value_bins: np.ndarray,
    params,
    *,
    heterogeneous: bool,
) -> Optional[SplitInfo]:
    """Max-gain split over all features, boundaries and missing directions.

    Ties break toward the lowest feature index, then the lowest bin, then
    missing-to-left.  Returns None when no candidate clears the gain gate
    and the child mass/count constraints.
    """
    G, H, C = hist
    n_features = G.shape[0]
    missing_idx = params.max_bins
    n_value_bins = np.asarray(n_value_bins)
    # Boundaries above the widest feature's top bin can never be valid.
    n_boundaries = min(params.max_bins, int(n_value_bins.max())) - 1
    if n_boundaries < 1:
        return None
    lam = params.lambda_l2
    gamma = params.gamma_min_gain

    # Every feature's histogram covers the full node, so per-feature row sums
    # are the node totals (kept per feature for bit-stable arithmetic).
    Gp = G.sum(axis=1)[:, None, None]
    Hp = H.sum(axis=1)[:, None, None]
    Cp = C.sum(axis=1)[:, None, None]
    Cm_total = int(C[:, missing_idx].max())
    cumG = np.cumsum(G[:, :missing_idx], axis=1)[:, :n_boundaries, None]
    cumH = np.cumsum(H[:, :missing_idx], axis=1)[:, :n_boundaries, None]
    cumC = np.cumsum(C[:, :missing_idx], axis=1)[:, :n_boundaries, None]

    if Cm_total == 0:
        # No missing rows: both directions coincide; scan one and call it left.
        n_dirs = 1
        GL, HL, CL = cumG, cumH, cumC
    else:
        # Last axis: missing routed left (0) or right (1).
        n_dirs = 2
        Gm = G[:, missing_idx][:, None, None]
        Hm = H[:, missing_idx][:, None, None]
        Cm = C[:, missing_idx][:, None, None]
        GL = np.concatenate([cumG + Gm, cumG], axis=2)
        HL = np.concatenate([cumH + Hm, cumH], axis=2)
        CL = np.concatenate([cumC + Cm, cumC], axis=2)
    GR = Gp - GL
    HR = Hp - HL
    CR = Cp - CL

    with np.errstate(divide="ignore", invalid="ignore"):
        gains = _split_gain_terms(GL, HL, GR, HR, Gp, Hp, lam) - gamma
    boundary_ok = (
        np.arange(n_boundaries)[None, :, None]
        < (n_value_bins - 1)[:n_features, None, None]
    )
    valid = (
        boundary_ok
        & (CL >= params.min_child_samples)
        & (CR >= params.min_child_samples)
        & (HL >= params.min_child_weight)
        & (HR >= params.min_child_weight)
        & np.isfinite(gains)
    )
    gains = np.where(valid, gains, -np.inf)
    # Row-major argmax = lowest feature, then lowest bin, then missing-left.
    flat_idx = int(np.argmax(gains))
    gain = float(gains.ravel()[flat_idx])
    if not np.isfinite(gain):
        return None
    per_feature = n_dirs * n_boundaries
    best = SplitInfo(
        feature=flat_idx // per_feature,
        bin_threshold=(flat_idx % per_feature) // n_dirs,
        missing_left=(n_dirs == 1) or (flat_idx % 2 == 0),
        gain=gain,
    )
    if best.gain > 0.0:
        return best
    if best.gain == 0.0 and heterogeneous:
        return best
    return None


@dataclass
class _LeafState:
    node: TreeNode
    rows: np.ndarray
    hist: Tuple[np.ndarray, np.ndarray, np.ndarray]
    split: Optional[SplitInfo]
    done: bool = False


def grow_tree(
    binned: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    params,
    n_value_bins: np.ndarray,
) -> Tuple[TreeNode, np.ndarray, Dict[int, float]]:
    """Grow one tree leaf-wise; returns (root, per-row output, gain per feature).

    Repeatedly splits the live leaf with the highest gain until ``max_leaves``
    is reached or no leaf has an admissible split.  Leaf values are the
    Newton step scaled by the learning rate.
    """
    n_rows = binned.shape[0]
    n_bins = params.max_bins + 1
    missing_idx = params.max_bins
    all_rows = np.arange(n_rows, dtype=np.int64)

    root = TreeNode()
    root_state = _LeafState(
        node=root,
        rows=all_rows,
        hist=build_histograms(binned, g, h, all_rows, n_bins),
        split=None,
    )
    _evaluate(root_state, g, params, n_value_bins)

    heap: List[tuple] = []
    counter = 0
    states = [root_state]
    if root_state.split is not None:
        heapq.heappush(heap, (-root_state.split.gain, counter, root_state))
        counter += 1

    n_leaves = 1
    gain_by_feature: Dict[int, float] = {}
    while heap and n_leaves < params.max_leaves:
        _, _, state = heapq.heappop(heap)
        split = state.split
        col = binned[state.rows, split.feature]
        left_mask = col <= split.bin_threshold
        if split.missing_left:
            left_mask |= col == missing_idx
        rows_left = state.rows[left_mask]
        rows_right = state.rows[~left_mask]

        node = state.node
        node.feature = split.feature
        node.bin_threshold = split.bin_threshold
        node.missing_left = split.missing_left
        node.split_gain = split.gain
        node.left = TreeNode()
        node.right = TreeNode()
        state.done = True
        gain_by_feature[split.feature] = gain_by_feature.get(split.feature, 0.0) + split.gain
        n_leaves += 1

        # Build the smaller child's histogram directly; derive the sibling.
        if rows_left.size <= rows_right.size:
            small_rows, big_rows = rows_left, rows_right
            small_node, big_node = node.left, node.right
        else:
            small_rows, big_rows = rows_right, rows_left
            small_node, big_node = node.right, node.left
        small_hist = build_histograms(binned, g, h, small_rows, n_bins)
        big_hist = tuple(p - s for p, s in zip(state.hist, small_hist))
        state.hist = None  # free parent histograms

        for child_node, child_rows, child_hist in (
            (small_node, small_rows, small_hist),
            (big_node, big_rows, big_hist),
        ):
            child = _LeafState(node=child_node, rows=child_rows, hist=child_hist, split=None)
            _evaluate(child, g, params, n_value_bins)
            states.append(child)
            if child.split is not None:
                heapq.heappush(heap, (-child.split.gain, counter, child))
                counter += 1

    output = np.zeros(n_rows, dtype=np.float64)
    for state in states:
        if state.done:
            continue
        G, H, _ = state.hist
        value = leaf_value(float(G.sum()), float(H.sum()), params)
        state.node.value = value
        output[state.rows] = value
    return root, output, gain_by_feature


def _evaluate(state: _LeafState, g: np.ndarray, params, n_value_bins) -> None:
    if state.rows.size < 2 * params.min_child_samples:
        return
    node_g = g[state.rows]
    heterogeneous = bool(node_g.size) and float(node_g.min()) < float(node_g.max())
    state.split = best_split(state.hist, n_value_bins, params, heterogeneous=heterogeneous)


def leaf_value(G: float, H: float, params) -> float:
    """Shrunk Newton step: -learning_rate * G / (H + lambda)."""
    denom = H + params.lambda_l2
    if denom <= 0.0:
        raise ValueError("leaf requires positive hessian mass plus l2")
    return -params.learning_rate * G / denom


def predict_tree(root: TreeNode, binned: np.ndarray, missing_idx: int) -> np.ndarray:
    """Vectorized tree output for pre-binned rows."""
    out = np.empty(binned.shape[0], dtype=np.float64)
    idx = np.arange(binned.shape[0], dtype=np.int64)
    _descend(root, binned, idx, out, missing_idx)
    return out


def _descend(node: TreeNode, binned, idx, out, missing_idx) -> None:
    if node.is_leaf:
        out[idx] = node.value
        return
    col = binned[idx, node.feature]
    left = col <= node.bin_threshold
    if node.missing_left:
        left |= col == missing_idx
    _descend(node.left, binned, idx[left], out, missing_idx)
    _descend(node.right, binned, idx[~left], out, missing_idx)
