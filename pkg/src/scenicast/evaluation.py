"""Grouped cross-validation, metrics and the horizon-by-variant grid.

The grid trains one model per (snapshot kind, horizon, variant, fold) and
reports fold means of accuracy and ROC-AUC, mirroring the experiment tables:
a horizon x variant summary with per-horizon best marks, a first-frame vs
morning-window comparison when both snapshot kinds are supplied, and a
gain-based feature-importance report per cell.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import GbdtParams, predict_proba, train
from .fusion import FeatureMatrix, Modality, SnapshotKind
from .validation import check_binary_labels, check_scores

AUC_DEGENERATE = 0.5


class Variant(enum.Enum):
    YOLO_ONLY = "YOLO_ONLY"
    WEATHER_ONLY = "WEATHER_ONLY"
    FUSION = "FUSION"


_VARIANT_MODALITIES = {
    Variant.YOLO_ONLY: {Modality.VISION},
    Variant.WEATHER_ONLY: {Modality.WEATHER_NOW, Modality.FORECAST},
    Variant.FUSION: {Modality.VISION, Modality.WEATHER_NOW, Modality.FORECAST},
}


def variant_modalities(variant: Variant, include_meta: bool = True) -> set:
    mods = set(_VARIANT_MODALITIES[variant])
    if include_meta:
        mods.add(Modality.META)
    return mods


# ---------------------------------------------------------------------------
# Grouped k-fold
# ---------------------------------------------------------------------------

def group_kfold(group_ids: Sequence, k: int, seed: int = 0) -> List[np.ndarray]:
    """k disjoint test-row index sets; no group ever straddles folds.

    Assignment is a pure function of (sorted distinct groups, seed): the
    sorted groups are shuffled with the seed and dealt round-robin, which
    balances group counts across folds to within one.
    """
    groups = list(group_ids)
    if k < 2:
        raise ValueError("k must be >= 2")
    distinct = sorted(set(groups))
    if len(distinct) < k:
        raise ValueError(f"need at least {k} distinct groups, got {len(distinct)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(distinct))
    fold_of = {distinct[g]: i % k for i, g in enumerate(order)}
    folds = [[] for _ in range(k)]
    for row, group in enumerate(groups):
        folds[fold_of[group]].append(row)
    return [np.asarray(rows, dtype=np.int64) for rows in folds]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def accuracy(probs, labels, threshold: float = 0.5) -> float:
    """Fraction of rows where thresholded probability matches the label."""
    probs = check_scores(probs)
    labels = check_binary_labels(labels, probs.shape[0])
    return float(np.mean((probs >= threshold) == (labels > 0.5)))


def roc_auc_flagged(scores, labels) -> Tuple[float, bool]:
    """Rank-statistic AUC with ties counted as half wins.

    Returns (auc, degenerate); a single-class input is undefined and reports
    0.5 with the degeneracy flag set.
    """
    scores = check_scores(scores)
    labels = check_binary_labels(labels, scores.shape[0])
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return AUC_DEGENERATE, True
    ranks = _midranks(scores)
    pos_rank_sum = float(ranks[pos].sum())
    auc = (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return float(auc), False


def roc_auc(scores, labels) -> float:
    return roc_auc_flagged(scores, labels)[0]


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (stable for exact comparisons)."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Experiment grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    variants: Tuple[Variant, ...] = (Variant.YOLO_ONLY, Variant.WEATHER_ONLY, Variant.FUSION)
    horizons: Tuple[int, ...] = (0, 1, 2, 3)
    k_folds: int = 5
    seed: int = 0
    theta: float = 0.5
    include_meta: bool = True
    params: GbdtParams = GbdtParams()

    def __post_init__(self):
        if not self.variants or not self.horizons:
            raise ValueError("variants and horizons must be non-empty")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")


@dataclass
class FoldReport:
    snapshot_kind: SnapshotKind
    horizon: int
    variant: Variant
    fold_index: int
    n_train: int
    n_test: int
    acc: Optional[float] = None
    auc: Optional[float] = None
    degenerate_auc: bool = False
    skipped: bool = False
    skip_reason: str = ""


@dataclass
class CellSummary:
    snapshot_kind: SnapshotKind
    horizon: int
    variant: Variant
    acc_mean: float
    auc_mean: float
    folds_used: int
    folds_skipped: int
    degenerate_folds: int
    importance: List[dict] = field(default_factory=list)
    best_acc: bool = False
    best_auc: bool = False


@dataclass
class ExperimentResult:
    folds: List[FoldReport]
    cells: List[CellSummary]
    windowing: List[dict]

    def cell(self, kind: SnapshotKind, horizon: int, variant: Variant) -> Optional[CellSummary]:
        for c in self.cells:
            if c.snapshot_kind is kind and c.horizon == horizon and c.variant is variant:
                return c
        return None


def run_experiment(
    datasets: Dict[SnapshotKind, Tuple[FeatureMatrix, Dict[int, np.ndarray]]],
    config: ExperimentConfig = ExperimentConfig(),
) -> ExperimentResult:
    """Train and score the full grid over the supplied snapshot kinds.

    ``datasets`` maps snapshot kind to (matrix, per-horizon target vector with
    NaN where the shifted label does not exist).  Rows lacking a target are
    dropped per horizon; folds with single-class training labels are skipped
    and recorded, with cell means taken over the remaining folds.
    """
    folds_out: List[FoldReport] = []
    cells: List[CellSummary] = []

    for kind in sorted(datasets, key=lambda k: k.value):
        matrix, targets = datasets[kind]
        fold_sets = group_kfold(matrix.group_ids, config.k_folds, config.seed)
        test_masks = []
        for test_rows in fold_sets:
            mask = np.zeros(matrix.X.shape[0], dtype=bool)
            mask[test_rows] = True
            test_masks.append(mask)

        for horizon in config.horizons:
            target = np.asarray(targets[horizon], dtype=np.float64)
            has = ~np.isnan(target)
            if not has.any():
                continue
            for variant in config.variants:
                sub = matrix.select(variant_modalities(variant, config.include_meta))
                cell_folds = []
                gain_totals: Dict[str, List[float]] = {}
                for fold_index, test_mask in enumerate(test_masks):
                    report, model = _run_fold(
                        sub, target, has, test_mask, kind, horizon, variant, fold_index, config
                    )
                    folds_out.append(report)
                    cell_folds.append(report)
                    if model is not None:
                        for name, gain, count in zip(
                            sub.column_names(), model.gain_by_feature, model.split_count_by_feature
                        ):
                            slot = gain_totals.setdefault(name, [0.0, 0])
                            slot[0] += float(gain)
                            slot[1] += int(count)
                used = [r for r in cell_folds if not r.skipped]
                if not used:
                    continue
                importance = [
                    {
                        "feature": name,
                        "modality": _modality_of(sub, name),
                        "total_gain": total,
                        "split_count": count,
                        "mean_gain": total / count if count else 0.0,
                    }
                    for name, (total, count) in gain_totals.items()
                ]
                importance.sort(key=lambda r: (-r["total_gain"], r["feature"]))
                cells.append(
                    CellSummary(
                        snapshot_kind=kind,
                        horizon=horizon,
                        variant=variant,
                        acc_mean=float(np.mean([r.acc for r in used])),
                        auc_mean=float(np.mean([r.auc for r in used])),
                        folds_used=len(used),
                        folds_skipped=len(cell_folds) - len(used),
                        degenerate_folds=sum(1 for r in used if r.degenerate_auc),
                        importance=importance,
                    )
                )

    _mark_best(cells)
    windowing = _windowing_rows(cells, config)
    return ExperimentResult(folds=folds_out, cells=cells, windowing=windowing)


def _run_fold(sub, target, has, test_mask, kind, horizon, variant, fold_index, config):
    train_rows = ~test_mask & has
    test_rows = test_mask & has
    report = FoldReport(
        snapshot_kind=kind,
        horizon=horizon,
        variant=variant,
        fold_index=fold_index,
        n_train=int(train_rows.sum()),
        n_test=int(test_rows.sum()),
    )
    if report.n_train == 0 or report.n_test == 0:
        report.skipped = True
        report.skip_reason = "empty train or test after target filtering"
        return report, None
    y_train = target[train_rows]
    if y_train.min() == y_train.max():
        report.skipped = True
        report.skip_reason = "single-class training labels"
        return report, None
    model = train(
        sub.X[train_rows],
        y_train,
        config.params,
        feature_names=sub.column_names(),
        schema_fingerprint=sub.fingerprint(),
    )
    probs = predict_proba(model, sub.X[test_rows])
    y_test = target[test_rows]
    report.acc = accuracy(probs, y_test)
    report.auc, report.degenerate_auc = roc_auc_flagged(probs, y_test)
    return report, model


def _modality_of(matrix: FeatureMatrix, name: str) -> str:
    for col in matrix.columns:
        if col.name == name:
            return col.modality.value
    return ""


def _mark_best(cells: List[CellSummary]) -> None:
    by_group: Dict[tuple, List[CellSummary]] = {}
    for cell in cells:
        by_group.setdefault((cell.snapshot_kind, cell.horizon), []).append(cell)
    for group in by_group.values():
        max(group, key=lambda c: c.acc_mean).best_acc = True
        max(group, key=lambda c: c.auc_mean).best_auc = True


def _windowing_rows(cells: List[CellSummary], config: ExperimentConfig) -> List[dict]:
    kinds = {c.snapshot_kind for c in cells}
    if not {SnapshotKind.FIRST_FRAME, SnapshotKind.MORNING_WINDOW} <= kinds:
        return []
    rows = []
    for horizon in config.horizons:
        first = next(
            (c for c in cells if c.snapshot_kind is SnapshotKind.FIRST_FRAME
             and c.horizon == horizon and c.variant is Variant.FUSION),
            None,
        )
        window = next(
            (c for c in cells if c.snapshot_kind is SnapshotKind.MORNING_WINDOW
             and c.horizon == horizon and c.variant is Variant.FUSION),
            None,
        )
        if first is None or window is None:
            continue
        rows.append(
            {
                "horizon": horizon,
                "acc_first": first.acc_mean,
                "acc_window": window.acc_mean,
                "auc_first": first.auc_mean,
                "auc_window": window.auc_mean,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def write_results_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "snapshot_kind", "horizon", "variant", "acc_mean", "auc_mean",
                "folds_used", "folds_skipped", "degenerate_folds", "best_acc", "best_auc",
            ]
        )
        for c in result.cells:
            writer.writerow(
                [
                    c.snapshot_kind.value, f"+{c.horizon}d", c.variant.value,
                    f"{c.acc_mean:.6f}", f"{c.auc_mean:.6f}",
                    c.folds_used, c.folds_skipped, c.degenerate_folds,
                    int(c.best_acc), int(c.best_auc),
                ]
            )


def write_folds_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "snapshot_kind", "horizon", "variant", "fold", "n_train", "n_test",
                "acc", "auc", "degenerate_auc", "skipped", "skip_reason",
            ]
        )
        for r in result.folds:
            writer.writerow(
                [
                    r.snapshot_kind.value, f"+{r.horizon}d", r.variant.value, r.fold_index,
                    r.n_train, r.n_test,
                    "" if r.acc is None else f"{r.acc:.6f}",
                    "" if r.auc is None else f"{r.auc:.6f}",
                    int(r.degenerate_auc), int(r.skipped), r.skip_reason,
                ]
            )


def render_results_text(result: ExperimentResult) -> str:
    """Plain-text table in the horizon x variant layout; '*' marks the
    per-horizon best of each metric."""
    lines = []
    kinds = sorted({c.snapshot_kind for c in result.cells}, key=lambda k: k.value)
    for kind in kinds:
        lines.append(f"Snapshot: {kind.value}")
        lines.append(f"{'Horizon':<9}{'Variant':<14}{'ACC':>10}{'AUC':>10}")
        lines.append("-" * 43)
        for c in result.cells:
            if c.snapshot_kind is not kind:
                continue
            acc = f"{c.acc_mean:.3f}" + ("*" if c.best_acc else " ")
            auc = f"{c.auc_mean:.3f}" + ("*" if c.best_auc else " ")
            lines.append(f"{'+' + str(c.horizon) + 'd':<9}{c.variant.value:<14}{acc:>10}{auc:>10}")
        lines.append("")
    return "\n".join(lines)


def write_windowing_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "acc_first", "acc_window", "auc_first", "auc_window"])
        for row in result.windowing:
            writer.writerow(
                [
                    f"+{row['horizon']}d",
                    f"{row['acc_first']:.6f}", f"{row['acc_window']:.6f}",
                    f"{row['auc_first']:.6f}", f"{row['auc_window']:.6f}",
                ]
            )


def render_windowing_text(result: ExperimentResult) -> str:
    lines = [
        "First-frame vs morning-window (late fusion)",
        f"{'Horizon':<9}{'ACC first':>11}{'ACC window':>12}{'AUC first':>11}{'AUC window':>12}",
        "-" * 55,
    ]
    for row in result.windowing:
        lines.append(
            f"{'+' + str(row['horizon']) + 'd':<9}"
            f"{row['acc_first']:>11.3f}{row['acc_window']:>12.3f}"
            f"{row['auc_first']:>11.3f}{row['auc_window']:>12.3f}"
        )
    return "\n".join(lines)


def write_importance_csv(cell: CellSummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "modality", "total_gain", "split_count", "mean_gain"])
        for row in cell.importance:
            writer.writerow(
                [
                    row["feature"], row["modality"],
                    f"{row['total_gain']:.6f}", row["split_count"], f"{row['mean_gain']:.6f}",
                ]
            )
