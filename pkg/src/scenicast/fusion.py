"""Fused training-table construction.

Joins frames with weather by lead bucket, aggregates day-level labels,
shifts horizon targets, builds first-frame or morning-window snapshots and
encodes the numeric feature matrix.  Weather records join frames through
their *anchor* time (valid time minus the lead), so a lead-2 forecast valid
on day d+2 lines up with the frames of day d that it was fetched alongside.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    CameraSite,
    FrameRecord,
    VisibilityClass,
    WeatherRecord,
    WEATHER_VARIABLES,
    is_visible,
    local_date,
    local_hour,
    local_seconds,
    rfc3339,
)

logger = logging.getLogger(__name__)

ALIGN_TOLERANCE = timedelta(minutes=30)
THETA_DEFAULT = 0.5
FORECAST_LEADS = (1, 2, 3)
MORNING_WINDOW_SECONDS = (0, 3 * 3600)  # [00:00, 03:00) local, half-open


class SnapshotKind(enum.Enum):
    FIRST_FRAME = "FIRST_FRAME"
    MORNING_WINDOW = "MORNING_WINDOW"


class Modality(enum.Enum):
    VISION = "VISION"
    WEATHER_NOW = "WEATHER_NOW"
    FORECAST = "FORECAST"
    META = "META"


@dataclass(frozen=True, order=True)
class DayKey:
    camera_id: str
    day: date

    def __str__(self):
        return f"{self.camera_id}:{self.day.isoformat()}"


@dataclass(frozen=True)
class JoinedFrame:
    """One usable frame plus its nearest weather record per lead bucket."""

    frame: FrameRecord
    weather: Dict[int, Optional[WeatherRecord]]


@dataclass(frozen=True)
class SnapshotProvenance:
    """Which frames fed a row; used for leakage audits."""

    frame_keys: Tuple[str, ...]
    max_local_seconds: int
    fallback: bool = False


@dataclass(frozen=True)
class DayExample:
    key: DayKey
    features: Dict[str, object]
    visible_fraction: float
    label_today: int
    targets: Dict[int, Optional[int]]
    snapshot_kind: SnapshotKind
    provenance: SnapshotProvenance


# ---------------------------------------------------------------------------
# Frame/weather alignment
# ---------------------------------------------------------------------------

def align_frame_weather(
    frames: Sequence[FrameRecord],
    weather: Sequence[WeatherRecord],
    tolerance: timedelta = ALIGN_TOLERANCE,
    leads: Sequence[int] = (0,) + FORECAST_LEADS,
) -> List[JoinedFrame]:
    """Join each frame to the nearest-in-anchor-time record per lead bucket.

    Ties at equal distance break toward the earlier weather record.  Frames
    with no record within ``tolerance`` carry None for that lead and are
    retained.
    """
    buckets: Dict[Tuple[str, int], List[WeatherRecord]] = {}
    for rec in weather:
        if rec.lead_days in leads:
            buckets.setdefault((rec.camera_id, rec.lead_days), []).append(rec)
    anchored: Dict[Tuple[str, int], Tuple[List, List]] = {}
    for bkey, records in buckets.items():
        records.sort(key=lambda r: r.anchor_at)
        anchored[bkey] = ([r.anchor_at for r in records], records)

    joined = []
    for frame in sorted(frames, key=lambda f: (f.camera_id, f.captured_at)):
        row: Dict[int, Optional[WeatherRecord]] = {}
        for lead in leads:
            row[lead] = _nearest(anchored.get((frame.camera_id, lead)), frame.captured_at, tolerance)
        if all(v is None for v in row.values()):
            logger.debug("frame %s has no weather within tolerance", frame.key)
        joined.append(JoinedFrame(frame=frame, weather=row))
    return joined


def _nearest(bucket, at, tolerance):
    if not bucket:
        return None
    anchors, records = bucket
    i = bisect_left(anchors, at)
    best = None
    best_dist = None
    # Earlier candidate first so that equal distances keep the earlier record.
    for j in (i - 1, i):
        if 0 <= j < len(anchors):
            dist = abs(anchors[j] - at)
            if dist <= tolerance and (best_dist is None or dist < best_dist):
                best, best_dist = records[j], dist
    return best


# ---------------------------------------------------------------------------
# Day-level labels and horizon targets
# ---------------------------------------------------------------------------

def frame_class(frame: FrameRecord, use_human_labels: bool = False) -> Optional[VisibilityClass]:
    if use_human_labels:
        return frame.human_label
    if frame.vision_probs is None:
        return None
    return frame.vision_probs.argmax_class()


def day_label(
    frames_of_day: Sequence[FrameRecord],
    theta: float = THETA_DEFAULT,
    use_human_labels: bool = False,
) -> Tuple[float, int]:
    """Visible fraction and binary label for one day's usable frames.

    The boundary is inclusive: exactly a ``theta`` fraction of visible
    frames labels the day 1.
    """
    classes = [
        c for c in (frame_class(f, use_human_labels) for f in frames_of_day) if c is not None
    ]
    if not classes:
        raise ValueError("zero usable frames; day must be dropped, not fabricated")
    visible = sum(1 for c in classes if is_visible(c))
    fraction = visible / len(classes)
    return fraction, int(fraction >= theta)


def shift_targets(
    day_labels: Dict[DayKey, int], horizons: Sequence[int] = (0, 1, 2, 3)
) -> Dict[DayKey, Dict[int, Optional[int]]]:
    """targets[h] for (c, d) is the label of (c, d+h); absent days stay None."""
    out: Dict[DayKey, Dict[int, Optional[int]]] = {}
    for key in day_labels:
        targets: Dict[int, Optional[int]] = {}
        for h in horizons:
            targets[h] = day_labels.get(DayKey(key.camera_id, key.day + timedelta(days=h)))
        out[key] = targets
    return out


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def _weather_features(prefix: str, record: Optional[WeatherRecord]) -> Dict[str, object]:
    feats: Dict[str, object] = {}
    for name in WEATHER_VARIABLES:
        feats[f"{prefix}_{name}"] = getattr(record, name) if record is not None else None
    return feats


def _frame_features(row: JoinedFrame, leads: Sequence[int]) -> Dict[str, object]:
    probs = row.frame.vision_probs
    feats: Dict[str, object] = {
        "vision_p_perfect": probs.p_perfect if probs else None,
        "vision_p_clear": probs.p_clear if probs else None,
        "vision_p_cloudy": probs.p_cloudy if probs else None,
        "vision_p_obscured": probs.p_obscured if probs else None,
    }
    feats.update(_weather_features("now", row.weather.get(0)))
    for lead in leads:
        if lead == 0:
            continue
        feats.update(_weather_features(f"fc{lead}", row.weather.get(lead)))
    feats["meta_hour"] = local_hour(row.frame.captured_at)
    return feats


def snapshot_first_frame(day_rows: Sequence[JoinedFrame], leads=(0,) + FORECAST_LEADS):
    """Features from the earliest usable frame of the day."""
    if not day_rows:
        raise ValueError("no frames for day")
    first = min(day_rows, key=lambda r: r.frame.captured_at)
    prov = SnapshotProvenance(
        frame_keys=(rfc3339(first.frame.captured_at),),
        max_local_seconds=local_seconds(first.frame.captured_at),
    )
    return _frame_features(first, leads), prov


def snapshot_morning_window(
    day_rows: Sequence[JoinedFrame],
    window_seconds: Tuple[int, int] = MORNING_WINDOW_SECONDS,
    leads=(0,) + FORECAST_LEADS,
):
    """Mean features over frames in the half-open morning window.

    Numeric features are arithmetic means over in-window frames (missing
    values ignored per feature); vision probabilities are renormalized to
    sum 1 after averaging; categorical features take the modal value with
    ties resolved toward the earliest frame.  Days with no in-window frame
    fall back to the first-frame snapshot and are flagged.
    """
    if not day_rows:
        raise ValueError("no frames for day")
    lo, hi = window_seconds
    in_window = [
        r for r in sorted(day_rows, key=lambda r: r.frame.captured_at)
        if lo <= local_seconds(r.frame.captured_at) < hi
    ]
    if not in_window:
        feats, prov = snapshot_first_frame(day_rows, leads)
        feats["meta_window_fallback"] = 1.0
        return feats, SnapshotProvenance(prov.frame_keys, prov.max_local_seconds, fallback=True)

    per_frame = [_frame_features(r, leads) for r in in_window]
    names = per_frame[0].keys()
    feats: Dict[str, object] = {}
    for name in names:
        values = [pf[name] for pf in per_frame]
        if name.endswith("weather_code"):
            feats[name] = _modal(values)
        else:
            present = [v for v in values if v is not None]
            feats[name] = float(np.mean(present)) if present else None

    total = sum(feats[f"vision_p_{c}"] or 0.0 for c in ("perfect", "clear", "cloudy", "obscured"))
    if total > 0:
        for c in ("perfect", "clear", "cloudy", "obscured"):
            feats[f"vision_p_{c}"] = (feats[f"vision_p_{c}"] or 0.0) / total
    feats["meta_window_fallback"] = 0.0
    prov = SnapshotProvenance(
        frame_keys=tuple(rfc3339(r.frame.captured_at) for r in in_window),
        max_local_seconds=max(local_seconds(r.frame.captured_at) for r in in_window),
    )
    return feats, prov


def _modal(values):
    """Most frequent non-None value; ties go to the earliest occurrence."""
    counts: Dict[object, int] = {}
    first_seen: Dict[object, int] = {}
    for i, v in enumerate(values):
        if v is None:
            continue
        counts[v] = counts.get(v, 0) + 1
        first_seen.setdefault(v, i)
    if not counts:
        return None
    return max(counts, key=lambda v: (counts[v], -first_seen[v]))


# ---------------------------------------------------------------------------
# Day example assembly
# ---------------------------------------------------------------------------

def build_day_examples(
    frames: Iterable[FrameRecord],
    weather: Iterable[WeatherRecord],
    sites: Dict[str, CameraSite],
    *,
    snapshot_kind: SnapshotKind = SnapshotKind.FIRST_FRAME,
    theta: float = THETA_DEFAULT,
    horizons: Sequence[int] = (0, 1, 2, 3),
    use_human_labels: bool = False,
) -> List[DayExample]:
    """Full fused-table construction from raw records to day examples."""
    usable = []
    for frame in frames:
        if not frame.usable_for_fusion():
            continue
        if frame_class(frame, use_human_labels) is None:
            continue
        usable.append(frame)
    if not usable:
        return []

    max_h = max(h for h in horizons)
    leads = tuple([0] + [h for h in FORECAST_LEADS if h <= max_h])
    joined = align_frame_weather(usable, list(weather), leads=leads)

    by_day: Dict[DayKey, List[JoinedFrame]] = {}
    for row in joined:
        key = DayKey(row.frame.camera_id, local_date(row.frame.captured_at))
        by_day.setdefault(key, []).append(row)

    labels: Dict[DayKey, int] = {}
    fractions: Dict[DayKey, float] = {}
    for key, rows in by_day.items():
        fraction, label = day_label([r.frame for r in rows], theta, use_human_labels)
        fractions[key] = fraction
        labels[key] = label
    targets = shift_targets(labels, horizons)

    examples = []
    for key in sorted(by_day):
        rows = by_day[key]
        if snapshot_kind is SnapshotKind.MORNING_WINDOW:
            feats, prov = snapshot_morning_window(rows, leads=leads)
        else:
            feats, prov = snapshot_first_frame(rows, leads=leads)
        site = sites.get(key.camera_id)
        feats["meta_camera_id"] = key.camera_id
        feats["meta_latitude"] = site.latitude if site else None
        feats["meta_longitude"] = site.longitude if site else None
        examples.append(
            DayExample(
                key=key,
                features=feats,
                visible_fraction=fractions[key],
                label_today=labels[key],
                targets=targets[key],
                snapshot_kind=snapshot_kind,
                provenance=prov,
            )
        )
    return examples


# ---------------------------------------------------------------------------
# Feature encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    modality: Modality
    encoding: str  # numeric | onehot | trig | flag

    def descriptor(self) -> str:
        return f"{self.name}:{self.modality.value}:{self.encoding}"


@dataclass
class FeatureMatrix:
    """Rectangular numeric matrix plus its column schema and row keys.

    Missing values are NaN; the learner routes them through a dedicated
    missing bin.  ``group_ids`` carry the calendar date so grouped CV keeps
    all cameras of one date in a single fold.
    """

    X: np.ndarray
    columns: List[ColumnSpec]
    keys: List[DayKey]
    group_ids: List[str]
    snapshot_kind: SnapshotKind

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise ValueError("matrix width does not match schema")
        if self.X.shape[0] != len(self.keys) or len(self.keys) != len(self.group_ids):
            raise ValueError("row bookkeeping out of sync")

    @property
    def width(self) -> int:
        return len(self.columns)

    def column_names(self) -> List[str]:
        return [c.name for c in self.columns]

    def fingerprint(self) -> str:
        text = ";".join(c.descriptor() for c in self.columns)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def select(self, modalities: Iterable[Modality]) -> "FeatureMatrix":
        wanted = set(modalities)
        idx = [i for i, c in enumerate(self.columns) if c.modality in wanted]
        return FeatureMatrix(
            X=self.X[:, idx],
            columns=[self.columns[i] for i in idx],
            keys=self.keys,
            group_ids=self.group_ids,
            snapshot_kind=self.snapshot_kind,
        )


_NUMERIC_WEATHER = tuple(v for v in WEATHER_VARIABLES if v not in ("weather_code", "wind_dir_deg"))


class DayExampleEncoder:
    """Fit/transform encoder from day examples to a FeatureMatrix.

    ``fit`` fixes the column schema (including one-hot category lists) from
    the examples it sees; ``transform`` encodes any examples against that
    schema, mapping unseen categories to an all-zero one-hot block.
    """

    def __init__(self, forecast_leads: Sequence[int] = FORECAST_LEADS):
        self.forecast_leads = tuple(forecast_leads)
        self.columns_: Optional[List[ColumnSpec]] = None
        self.weather_codes_: Optional[List[int]] = None
        self.cameras_: Optional[List[str]] = None
        self.has_fallback_flag_: bool = False

    def fit(self, examples: Sequence[DayExample]) -> "DayExampleEncoder":
        if not examples:
            raise ValueError("cannot fit an encoder on zero examples")
        kinds = {ex.snapshot_kind for ex in examples}
        if len(kinds) > 1:
            raise ValueError(f"examples mix snapshot kinds: {kinds}")
        codes = set()
        cameras = set()
        for ex in examples:
            cameras.add(ex.features.get("meta_camera_id"))
            for prefix in self._bucket_prefixes():
                v = ex.features.get(f"{prefix}_weather_code")
                if v is not None:
                    codes.add(int(v))
        self.weather_codes_ = sorted(codes)
        self.cameras_ = sorted(c for c in cameras if c)
        self.has_fallback_flag_ = any("meta_window_fallback" in ex.features for ex in examples)
        self.columns_ = self._build_schema()
        return self

    def _bucket_prefixes(self) -> List[str]:
        return ["now"] + [f"fc{h}" for h in self.forecast_leads]

    def _build_schema(self) -> List[ColumnSpec]:
        cols: List[ColumnSpec] = []
        for c in ("perfect", "clear", "cloudy", "obscured"):
            cols.append(ColumnSpec(f"vision_p_{c}", Modality.VISION, "numeric"))
        for prefix in self._bucket_prefixes():
            modality = Modality.WEATHER_NOW if prefix == "now" else Modality.FORECAST
            for name in _NUMERIC_WEATHER:
                cols.append(ColumnSpec(f"{prefix}_{name}", modality, "numeric"))
            cols.append(ColumnSpec(f"{prefix}_wind_dir_sin", modality, "trig"))
            cols.append(ColumnSpec(f"{prefix}_wind_dir_cos", modality, "trig"))
            for code in self.weather_codes_:
                cols.append(ColumnSpec(f"{prefix}_weather_code={code}", modality, "onehot"))
        cols.append(ColumnSpec("meta_latitude", Modality.META, "numeric"))
        cols.append(ColumnSpec("meta_longitude", Modality.META, "numeric"))
        cols.append(ColumnSpec("meta_hour_sin", Modality.META, "trig"))
        cols.append(ColumnSpec("meta_hour_cos", Modality.META, "trig"))
        if self.has_fallback_flag_:
            cols.append(ColumnSpec("meta_window_fallback", Modality.META, "flag"))
        for cam in self.cameras_:
            cols.append(ColumnSpec(f"meta_camera_id={cam}", Modality.META, "onehot"))
        return cols

    def transform(self, examples: Sequence[DayExample]) -> FeatureMatrix:
        if self.columns_ is None:
            raise ValueError("encoder is not fitted")
        n, d = len(examples), len(self.columns_)
        X = np.full((n, d), np.nan, dtype=np.float64)
        for i, ex in enumerate(examples):
            X[i] = self._encode_row(ex.features)
        return FeatureMatrix(
            X=X,
            columns=list(self.columns_),
            keys=[ex.key for ex in examples],
            group_ids=[ex.key.day.isoformat() for ex in examples],
            snapshot_kind=examples[0].snapshot_kind if examples else SnapshotKind.FIRST_FRAME,
        )

    def fit_transform(self, examples: Sequence[DayExample]) -> FeatureMatrix:
        return self.fit(examples).transform(examples)

    def _encode_row(self, feats: Dict[str, object]) -> np.ndarray:
        out = np.empty(len(self.columns_), dtype=np.float64)
        for j, col in enumerate(self.columns_):
            out[j] = self._encode_value(col, feats)
        return out

    def _encode_value(self, col: ColumnSpec, feats: Dict[str, object]) -> float:
        name = col.name
        if col.encoding == "onehot":
            base, _, category = name.partition("=")
            value = feats.get(base)
            if value is None:
                return 0.0
            return 1.0 if str(value) == category else 0.0
        if name.endswith("_wind_dir_sin") or name.endswith("_wind_dir_cos"):
            value = feats.get(name[:-4] + "_deg")  # *_wind_dir_{sin,cos} -> *_wind_dir_deg
            if value is None:
                return np.nan
            rad = math.radians(float(value) % 360.0)  # 360 and 0 encode identically
            return math.sin(rad) if name.endswith("_sin") else math.cos(rad)
        if name == "meta_hour_sin" or name == "meta_hour_cos":
            value = feats.get("meta_hour")
            if value is None:
                return np.nan
            rad = 2.0 * math.pi * float(value) / 24.0
            return math.sin(rad) if name.endswith("_sin") else math.cos(rad)
        if name == "meta_window_fallback":
            value = feats.get(name)
            return float(value) if value is not None else 0.0
        value = feats.get(name)
        return float(value) if value is not None else np.nan

    def schema_record(self) -> list:
        return [
            {"name": c.name, "modality": c.modality.value, "encoding": c.encoding}
            for c in (self.columns_ or [])
        ]

    @classmethod
    def from_schema_record(cls, records: list, forecast_leads=FORECAST_LEADS) -> "DayExampleEncoder":
        enc = cls(forecast_leads=forecast_leads)
        enc.columns_ = [
            ColumnSpec(r["name"], Modality(r["modality"]), r["encoding"]) for r in records
        ]
        enc.weather_codes_ = sorted(
            {int(c.name.split("=")[1]) for c in enc.columns_ if c.name.startswith("now_weather_code=")}
        )
        enc.cameras_ = [
            c.name.split("=", 1)[1] for c in enc.columns_ if c.name.startswith("meta_camera_id=")
        ]
        enc.has_fallback_flag_ = any(c.name == "meta_window_fallback" for c in enc.columns_)
        return enc


def target_vector(examples: Sequence[DayExample], horizon: int) -> np.ndarray:
    """Per-row targets for one horizon; NaN where the shifted label is absent."""
    out = np.full(len(examples), np.nan)
    for i, ex in enumerate(examples):
        t = ex.targets.get(horizon)
        if t is not None:
            out[i] = float(t)
    return out


# ---------------------------------------------------------------------------
# Leakage audit and exports
# ---------------------------------------------------------------------------

def audit_leakage(examples: Sequence[DayExample]) -> List[str]:
    """Provenance violations: rows whose frames could see the future."""
    violations = []
    lo, hi = MORNING_WINDOW_SECONDS
    for ex in examples:
        prov = ex.provenance
        if ex.snapshot_kind is SnapshotKind.MORNING_WINDOW and not prov.fallback:
            if prov.max_local_seconds >= hi:
                violations.append(f"{ex.key}: window row uses frame at {prov.max_local_seconds}s")
        else:
            if len(prov.frame_keys) != 1:
                violations.append(f"{ex.key}: first-frame row built from {len(prov.frame_keys)} frames")
    return violations


def export_matrix_csv(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["camera_id", "date", "group_id"] + matrix.column_names())
        for key, group, row in zip(matrix.keys, matrix.group_ids, matrix.X):
            writer.writerow(
                [key.camera_id, key.day.isoformat(), group]
                + ["" if np.isnan(v) else f"{v:.9g}" for v in row]
            )


def export_schema_csv(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "modality", "encoding"])
        for col in matrix.columns:
            writer.writerow([col.name, col.modality.value, col.encoding])


def export_targets_csv(examples: Sequence[DayExample], path, horizons=(0, 1, 2, 3)) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["camera_id", "date", "visible_fraction", "label_today"]
            + [f"target_h{h}" for h in horizons]
        )
        for ex in examples:
            row = [ex.key.camera_id, ex.key.day.isoformat(), f"{ex.visible_fraction:.6f}", ex.label_today]
            for h in horizons:
                t = ex.targets.get(h)
                row.append("" if t is None else t)
            writer.writerow(row)


def export_provenance(examples: Sequence[DayExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "camera_id": ex.key.camera_id,
                        "date": ex.key.day.isoformat(),
                        "snapshot_kind": ex.snapshot_kind.value,
                        "frames": list(ex.provenance.frame_keys),
                        "max_local_seconds": ex.provenance.max_local_seconds,
                        "fallback": ex.provenance.fallback,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
