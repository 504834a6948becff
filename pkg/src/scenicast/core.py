"""Domain types shared by every other module.

All timestamps are stored timezone-aware in UTC.  Calendar days ("which day
does this frame belong to") are computed in the cameras' shared civil time,
a fixed UTC+9 offset, because the morning-window semantics only make sense
in local time.  All types are immutable value objects and safe to share
between concurrent tasks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta, timezone
from typing import Optional

from .errors import ExclusionError

SCHEMA_VERSION = 1

# Civil time shared by all camera sites.
LOCAL_UTC_OFFSET = timedelta(hours=9)

# Frames and fetch jobs live on a 30-minute grid.
GRID_MINUTES = 30

# Probability vectors are renormalized inside this band and rejected outside.
PROB_SUM_TOL = 1e-6
PROB_RENORM_BAND = 1e-3

# Horizons covered by the experiments.
HORIZONS = (0, 1, 2, 3)
MAX_HORIZON = 3

MIN_LEAD_DAYS = -1   # previous-day observed conditions
MAX_LEAD_DAYS = 6    # furthest forecast lead

EARLIEST_CAPTURE = datetime(2020, 1, 1, tzinfo=timezone.utc)


class VisibilityClass(enum.IntEnum):
    """Five-class visibility taxonomy with stable integer codes."""

    PERFECT = 0
    CLEAR = 1
    CLOUDY = 2
    OBSCURED = 3
    BAD = 4


#: Classes that count as "visible" for day-level labels.
VISIBLE_CLASSES = frozenset({VisibilityClass.PERFECT, VisibilityClass.CLEAR})

#: Classes carried by a probability vector.  BAD has no probability slot:
#: the external classifier is trained on four classes and QC flags stand in
#: for BAD.
PROB_CLASSES = (
    VisibilityClass.PERFECT,
    VisibilityClass.CLEAR,
    VisibilityClass.CLOUDY,
    VisibilityClass.OBSCURED,
)


class QcStatus(enum.Enum):
    OK = "OK"
    BAD_GRAY = "BAD_GRAY"
    DUPLICATE = "DUPLICATE"
    CORRUPT = "CORRUPT"


def is_visible(label: VisibilityClass) -> bool:
    """True iff ``label`` counts as visible (CLEAR or PERFECT).

    BAD frames are excluded upstream and are rejected here.
    """
    if label is VisibilityClass.BAD:
        raise ExclusionError("BAD frames are excluded before visibility checks")
    return label in VISIBLE_CLASSES


# ---------------------------------------------------------------------------
# Time helpers
# ---------------------------------------------------------------------------

def ensure_utc(ts: datetime) -> datetime:
    """Return ``ts`` converted to UTC; naive datetimes are rejected."""
    if ts.tzinfo is None:
        raise ValueError("naive datetime; timestamps must be timezone-aware")
    return ts.astimezone(timezone.utc)


def floor_to_grid(ts: datetime) -> datetime:
    """Round ``ts`` down to the 30-minute grid (seconds zeroed)."""
    ts = ensure_utc(ts)
    minute = (ts.minute // GRID_MINUTES) * GRID_MINUTES
    return ts.replace(minute=minute, second=0, microsecond=0)


def local_date(ts: datetime) -> date:
    """Civil calendar date of ``ts`` at the shared camera offset."""
    return (ensure_utc(ts) + LOCAL_UTC_OFFSET).date()


def local_seconds(ts: datetime) -> int:
    """Seconds since local midnight for window membership tests."""
    local = ensure_utc(ts) + LOCAL_UTC_OFFSET
    return local.hour * 3600 + local.minute * 60 + local.second


def local_hour(ts: datetime) -> float:
    """Local time of day in fractional hours."""
    return local_seconds(ts) / 3600.0


def rfc3339(ts: datetime) -> str:
    return ensure_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text).astimezone(timezone.utc)


def check_horizon(days_ahead: int) -> int:
    """Validate a forecast horizon against the supported range."""
    if days_ahead not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}, got {days_ahead!r}")
    return days_ahead


# ---------------------------------------------------------------------------
# Value objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraSite:
    """One webcam site in the registry."""

    camera_id: str
    latitude: float
    longitude: float
    display_name: str = ""

    def __post_init__(self):
        if not self.camera_id:
            raise ValueError("camera_id must be non-empty")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class VisionProbs:
    """Calibrated class probabilities over the four usable classes.

    Vectors whose sum drifts within ``PROB_RENORM_BAND`` of 1 (float
    serialization noise) are renormalized; anything further off is rejected
    as an upstream bug.
    """

    p_perfect: float
    p_clear: float
    p_cloudy: float
    p_obscured: float

    def __post_init__(self):
        values = (self.p_perfect, self.p_clear, self.p_cloudy, self.p_obscured)
        for v in values:
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ValueError(f"probability component out of [0,1]: {v}")
        total = sum(values)
        if abs(total - 1.0) > PROB_RENORM_BAND:
            raise ValueError(f"probability vector sums to {total}, outside renorm band")
        if abs(total - 1.0) > PROB_SUM_TOL:
            object.__setattr__(self, "p_perfect", self.p_perfect / total)
            object.__setattr__(self, "p_clear", self.p_clear / total)
            object.__setattr__(self, "p_cloudy", self.p_cloudy / total)
            object.__setattr__(self, "p_obscured", self.p_obscured / total)

    def as_tuple(self) -> tuple:
        return (self.p_perfect, self.p_clear, self.p_cloudy, self.p_obscured)

    def argmax_class(self) -> VisibilityClass:
        """Most likely class; ties resolve to the lowest class code."""
        values = self.as_tuple()
        best = max(range(4), key=lambda i: (values[i], -i))
        return PROB_CLASSES[best]


@dataclass(frozen=True)
class FrameRecord:
    """One webcam capture after ingestion normalization.

    ``qc_status`` is None until the quality module has seen the frame.
    ``captured_at`` is aligned to the 30-minute grid.
    """

    camera_id: str
    captured_at: datetime
    image_path: str
    qc_status: Optional[QcStatus] = None
    human_label: Optional[VisibilityClass] = None
    vision_probs: Optional[VisionProbs] = None
    grayness: Optional[float] = None
    content_digest: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "captured_at", ensure_utc(self.captured_at))
        if self.grayness is not None and not 0.0 <= self.grayness <= 1.0:
            raise ValueError(f"grayness out of [0,1]: {self.grayness}")

    @property
    def key(self) -> tuple:
        return (self.camera_id, self.captured_at)

    def usable_for_fusion(self) -> bool:
        """OK frames only; a human BAD label overrides everything."""
        if self.human_label is VisibilityClass.BAD:
            return False
        return self.qc_status is QcStatus.OK


@dataclass(frozen=True)
class WeatherRecord:
    """Weather variables for one (camera, valid time, lead).

    ``lead_days`` tags provenance: -1 previous-day observed, 0 current /
    same-day, 1..6 forecast issued that many days ahead.  Variables the
    source did not deliver stay None (explicitly missing).
    """

    camera_id: str
    valid_at: datetime
    lead_days: int
    temperature_c: Optional[float] = None
    weather_code: Optional[int] = None
    humidity_pct: Optional[float] = None
    precipitation_mm: Optional[float] = None
    snowfall_mm: Optional[float] = None
    cloud_cover_pct: Optional[float] = None
    surface_pressure_hpa: Optional[float] = None
    sealevel_pressure_hpa: Optional[float] = None
    wind_speed_ms: Optional[float] = None
    wind_dir_deg: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "valid_at", ensure_utc(self.valid_at))
        if not MIN_LEAD_DAYS <= self.lead_days <= MAX_LEAD_DAYS:
            raise ValueError(f"lead_days out of [-1, 6]: {self.lead_days}")
        for name in ("humidity_pct", "cloud_cover_pct"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} out of [0,100]: {v}")
        for name in ("precipitation_mm", "snowfall_mm"):
            v = getattr(self, name)
            if v is not None and v < 0.0:
                raise ValueError(f"{name} must be >= 0: {v}")
        if self.wind_dir_deg is not None:
            # 360 and 0 are the same bearing; store the canonical one.
            object.__setattr__(self, "wind_dir_deg", self.wind_dir_deg % 360.0)

    @property
    def key(self) -> tuple:
        return (self.camera_id, self.valid_at, self.lead_days)

    @property
    def anchor_at(self) -> datetime:
        """When this record was observed/issued: valid time minus the lead.

        Frames join weather by anchor time, so a lead-2 forecast valid on
        day d+2 aligns with frames captured on day d.
        """
        return self.valid_at - timedelta(days=self.lead_days)


#: Weather variable fields in canonical order (excludes key fields).
WEATHER_VARIABLES = (
    "temperature_c",
    "weather_code",
    "humidity_pct",
    "precipitation_mm",
    "snowfall_mm",
    "cloud_cover_pct",
    "surface_pressure_hpa",
    "sealevel_pressure_hpa",
    "wind_speed_ms",
    "wind_dir_deg",
)


# ---------------------------------------------------------------------------
# Canonical flat-record serialization (JSON-line friendly)
# ---------------------------------------------------------------------------

def frame_to_record(frame: FrameRecord) -> dict:
    return {
        "camera_id": frame.camera_id,
        "captured_at": rfc3339(frame.captured_at),
        "image_path": frame.image_path,
        "qc_status": frame.qc_status.value if frame.qc_status else None,
        "human_label": frame.human_label.name if frame.human_label is not None else None,
        "p_perfect": frame.vision_probs.p_perfect if frame.vision_probs else None,
        "p_clear": frame.vision_probs.p_clear if frame.vision_probs else None,
        "p_cloudy": frame.vision_probs.p_cloudy if frame.vision_probs else None,
        "p_obscured": frame.vision_probs.p_obscured if frame.vision_probs else None,
        "grayness": frame.grayness,
        "content_digest": frame.content_digest,
    }


def frame_from_record(rec: dict) -> FrameRecord:
    probs = None
    if rec.get("p_perfect") is not None:
        probs = VisionProbs(rec["p_perfect"], rec["p_clear"], rec["p_cloudy"], rec["p_obscured"])
    return FrameRecord(
        camera_id=rec["camera_id"],
        captured_at=parse_rfc3339(rec["captured_at"]),
        image_path=rec["image_path"],
        qc_status=QcStatus(rec["qc_status"]) if rec.get("qc_status") else None,
        human_label=VisibilityClass[rec["human_label"]] if rec.get("human_label") else None,
        vision_probs=probs,
        grayness=rec.get("grayness"),
        content_digest=rec.get("content_digest"),
    )


def weather_to_record(rec: WeatherRecord) -> dict:
    out = {
        "camera_id": rec.camera_id,
        "valid_at": rfc3339(rec.valid_at),
        "lead_days": rec.lead_days,
    }
    for name in WEATHER_VARIABLES:
        out[name] = getattr(rec, name)
    return out


def weather_from_record(rec: dict) -> WeatherRecord:
    kwargs = {name: rec.get(name) for name in WEATHER_VARIABLES}
    if kwargs["weather_code"] is not None:
        kwargs["weather_code"] = int(kwargs["weather_code"])
    return WeatherRecord(
        camera_id=rec["camera_id"],
        valid_at=parse_rfc3339(rec["valid_at"]),
        lead_days=int(rec["lead_days"]),
        **kwargs,
    )


def site_to_record(site: CameraSite) -> dict:
    return {
        "camera_id": site.camera_id,
        "latitude": site.latitude,
        "longitude": site.longitude,
        "display_name": site.display_name,
    }


def site_from_record(rec: dict) -> CameraSite:
    return CameraSite(
        camera_id=rec["camera_id"],
        latitude=float(rec["latitude"]),
        longitude=float(rec["longitude"]),
        display_name=rec.get("display_name", ""),
    )


def with_qc(frame: FrameRecord, status: QcStatus, grayness: Optional[float] = None) -> FrameRecord:
    """Copy of ``frame`` with a QC verdict applied."""
    changes = {"qc_status": status}
    if grayness is not None:
        changes["grayness"] = grayness
    return replace(frame, **changes)


def with_human_label(frame: FrameRecord, label: Optional[VisibilityClass]) -> FrameRecord:
    return replace(frame, human_label=label)
