"""Shared plumbing between the CLI and the HTTP service.

Owns the on-disk layout under ``data_root``::

    cameras.jsonl        camera registry (one site per line)
    raw/frames/          frame repository (partitioned JSONL + manifests)
    raw/weather/         weather repository
    raw/fixtures/        recorded weather response bodies
    qc/reports.jsonl     QC verdict log
    labels/labels.jsonl  human label history (append-only)
    fused/<kind>/        exported matrices, schemas, targets, provenance
    models/              serialized models
    reports/             evaluation tables and importance CSVs
    logs/                job + run logs
"""

from __future__ import annotations

import json
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .boosting import GbdtModel, GbdtParams, load_model, save_model, train
from .core import (
    CameraSite,
    FrameRecord,
    VisibilityClass,
    rfc3339,
    site_from_record,
    site_to_record,
)
from .fusion import (
    DayExample,
    DayExampleEncoder,
    FeatureMatrix,
    SnapshotKind,
    build_day_examples,
    target_vector,
)
from .quality import apply_reports
from .repository import AppendLog, frame_store, weather_store


def cameras_path(data_root: Path) -> Path:
    return Path(data_root) / "cameras.jsonl"


def qc_log(data_root: Path) -> AppendLog:
    return AppendLog(Path(data_root) / "qc" / "reports.jsonl")


def labels_log(data_root: Path) -> AppendLog:
    return AppendLog(Path(data_root) / "labels" / "labels.jsonl")


def jobs_log(data_root: Path) -> AppendLog:
    return AppendLog(Path(data_root) / "logs" / "jobs.jsonl")


def runs_log(data_root: Path) -> AppendLog:
    return AppendLog(Path(data_root) / "logs" / "runs.jsonl")


def load_sites(data_root: Path) -> Dict[str, CameraSite]:
    path = cameras_path(data_root)
    if not path.exists():
        return {}
    sites = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                site = site_from_record(json.loads(line))
                sites[site.camera_id] = site
    return sites


def save_sites(data_root: Path, sites: List[CameraSite]) -> None:
    path = cameras_path(data_root)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for site in sites:
            fh.write(json.dumps(site_to_record(site), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Effective frame state: repository + QC log + label history
# ---------------------------------------------------------------------------

def label_events(data_root: Path) -> List[dict]:
    return labels_log(data_root).read_all()


def active_labels(events: List[dict]) -> Dict[tuple, Optional[VisibilityClass]]:
    """Latest label per frame; an undo event clears the active label."""
    state: Dict[tuple, Optional[VisibilityClass]] = {}
    for ev in events:
        key = (ev["camera_id"], ev["captured_at"])
        if ev.get("kind") == "undo":
            state[key] = None
        else:
            state[key] = VisibilityClass[ev["label"]]
    return state


def load_effective_frames(data_root: Path) -> List[FrameRecord]:
    """Frames with the latest QC verdict and active human label applied."""
    frames = list(frame_store(data_root).iter_all())
    frames = apply_reports(frames, qc_log(data_root).read_all())
    labels = active_labels(label_events(data_root))
    if labels:
        merged = []
        for frame in frames:
            label = labels.get((frame.camera_id, rfc3339(frame.captured_at)))
            merged.append(replace(frame, human_label=label) if label is not None else frame)
        frames = merged
    return frames


def load_weather(data_root: Path):
    return list(weather_store(data_root).iter_all())


# ---------------------------------------------------------------------------
# Fused dataset construction
# ---------------------------------------------------------------------------

SNAPSHOT_DIRS = {
    SnapshotKind.FIRST_FRAME: "first_frame",
    SnapshotKind.MORNING_WINDOW: "morning_window",
}


def build_dataset(
    data_root: Path,
    kind: SnapshotKind,
    *,
    theta: float = 0.5,
    horizons=(0, 1, 2, 3),
    use_human_labels: bool = False,
) -> Tuple[List[DayExample], DayExampleEncoder, FeatureMatrix, Dict[int, np.ndarray]]:
    frames = load_effective_frames(data_root)
    weather = load_weather(data_root)
    sites = load_sites(data_root)
    examples = build_day_examples(
        frames,
        weather,
        sites,
        snapshot_kind=kind,
        theta=theta,
        horizons=horizons,
        use_human_labels=use_human_labels,
    )
    if not examples:
        return [], DayExampleEncoder(), None, {}
    encoder = DayExampleEncoder()
    matrix = encoder.fit_transform(examples)
    targets = {h: target_vector(examples, h) for h in horizons}
    return examples, encoder, matrix, targets


# ---------------------------------------------------------------------------
# Model persistence conventions
# ---------------------------------------------------------------------------

def model_path(data_root: Path, horizon: int, variant: str, kind: SnapshotKind) -> Path:
    name = f"model_h{horizon}_{variant.lower()}_{SNAPSHOT_DIRS[kind]}.json"
    return Path(data_root) / "models" / name


def train_pipeline_model(
    matrix: FeatureMatrix,
    target: np.ndarray,
    params: GbdtParams,
    *,
    encoder: DayExampleEncoder,
    horizon: int,
    variant: str,
    theta: float,
) -> GbdtModel:
    """Train on the rows that have a target for this horizon."""
    has = ~np.isnan(target)
    if not has.any():
        raise ValueError(f"no rows carry a +{horizon}d target")
    model = train(
        matrix.X[has],
        target[has],
        params,
        feature_names=matrix.column_names(),
        schema_fingerprint=matrix.fingerprint(),
        meta={
            "horizon": horizon,
            "variant": variant,
            "snapshot_kind": matrix.snapshot_kind.value,
            "theta": theta,
            "trained_at": rfc3339(datetime.now(timezone.utc)),
            "n_rows": int(has.sum()),
            "schema": encoder.schema_record(),
        },
    )
    return model


def save_pipeline_model(model: GbdtModel, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)


def load_pipeline_model(path: Path) -> Tuple[GbdtModel, DayExampleEncoder]:
    model = load_model(path)
    schema = model.meta.get("schema")
    if not schema:
        raise ValueError(f"model {path} carries no feature schema")
    encoder = DayExampleEncoder.from_schema_record(schema)
    return model, encoder


def find_model(data_root: Path, horizon: int, kind: Optional[SnapshotKind] = None) -> Optional[Path]:
    """Locate a trained model for the horizon, preferring fusion variants."""
    models_dir = Path(data_root) / "models"
    if not models_dir.is_dir():
        return None
    kinds = [SNAPSHOT_DIRS[kind]] if kind else list(SNAPSHOT_DIRS.values())
    for variant in ("fusion", "yolo_only", "weather_only"):
        for k in kinds:
            path = models_dir / f"model_h{horizon}_{variant}_{k}.json"
            if path.exists():
                return path
    candidates = sorted(models_dir.glob(f"model_h{horizon}_*.json"))
    return candidates[0] if candidates else None


# ---------------------------------------------------------------------------
# Latest-day example for prediction endpoints
# ---------------------------------------------------------------------------

def latest_example_for(
    data_root: Path,
    camera_id: str,
    kind: SnapshotKind,
    *,
    theta: float = 0.5,
) -> Optional[DayExample]:
    """The most recent day example for one camera, or None without data."""
    frames = [f for f in load_effective_frames(data_root) if f.camera_id == camera_id]
    if not frames:
        return None
    weather = [w for w in load_weather(data_root) if w.camera_id == camera_id]
    sites = load_sites(data_root)
    examples = build_day_examples(
        frames, weather, sites, snapshot_kind=kind, theta=theta, horizons=(0, 1, 2, 3)
    )
    if not examples:
        return None
    return max(examples, key=lambda ex: ex.key.day)
