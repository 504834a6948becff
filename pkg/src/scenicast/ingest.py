"""Scheduler-driven acquisition of frames and weather features.

A tick every 30 minutes produces one FRAME and one WEATHER job per camera
site.  Weather comes through a source port with two implementations: a live
HTTP client speaking the hourly forecast-API shape (per-variable parallel
arrays keyed by ISO timestamps) and a deterministic fixture replay for tests
and acceptance runs.  Frames arrive through a drop directory; there is no
video scraping here.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from .core import (
    EARLIEST_CAPTURE,
    CameraSite,
    FrameRecord,
    QcStatus,
    WeatherRecord,
    WEATHER_VARIABLES,
    ensure_utc,
    floor_to_grid,
    rfc3339,
)
from .errors import TransportError
from .quality import content_digest
from .repository import AppendLog, RecordStore

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 5.0

#: canonical field -> hourly API variable name
API_VARIABLES = {
    "temperature_c": "temperature_2m",
    "weather_code": "weather_code",
    "humidity_pct": "relative_humidity_2m",
    "precipitation_mm": "precipitation",
    "snowfall_mm": "snowfall",
    "cloud_cover_pct": "cloud_cover",
    "surface_pressure_hpa": "surface_pressure",
    "sealevel_pressure_hpa": "pressure_msl",
    "wind_speed_ms": "wind_speed_10m",
    "wind_dir_deg": "wind_direction_10m",
}
DEFAULT_VARIABLES = tuple(API_VARIABLES.values())


class JobKind(enum.Enum):
    FRAME = "FRAME"
    WEATHER = "WEATHER"


@dataclass(frozen=True)
class FetchJob:
    camera_id: str
    due_at: datetime
    kind: JobKind

    def __post_init__(self):
        object.__setattr__(self, "due_at", ensure_utc(self.due_at))
        if self.due_at.minute % 30 or self.due_at.second or self.due_at.microsecond:
            raise ValueError(f"due_at not on the 30-minute grid: {self.due_at}")

    @property
    def key(self) -> tuple:
        return (self.camera_id, self.due_at, self.kind.value)


@dataclass(frozen=True)
class WeatherQuery:
    latitude: float
    longitude: float
    variables: Sequence[str] = DEFAULT_VARIABLES
    forecast_days: int = 7
    past_days: int = 1

    def __post_init__(self):
        if not self.variables:
            raise ValueError("variables must be non-empty")
        if not 1 <= self.forecast_days <= 7:
            raise ValueError(f"forecast_days out of [1,7]: {self.forecast_days}")
        if not 0 <= self.past_days <= 2:
            raise ValueError(f"past_days out of [0,2]: {self.past_days}")


def query_for_site(site: CameraSite, max_horizon: int = 3) -> WeatherQuery:
    """Per-site query: the full one-to-six-day forecast span is collected
    even when experiments use a shorter horizon range."""
    return WeatherQuery(
        latitude=site.latitude,
        longitude=site.longitude,
        forecast_days=max(max_horizon + 1, 7),
    )


def schedule_tick(now: datetime, sites: Iterable[CameraSite]) -> List[FetchJob]:
    """One FRAME and one WEATHER job per site, due at the current grid slot.

    Pure function of (now, sites): re-invoking within the same slot yields
    jobs with identical keys, so downstream dedup keeps ticks idempotent.
    """
    due = floor_to_grid(now)
    jobs: List[FetchJob] = []
    for site in sites:
        if not isinstance(site, CameraSite) or not site.camera_id:
            logger.warning("skipping malformed site entry: %r", site)
            continue
        jobs.append(FetchJob(site.camera_id, due, JobKind.FRAME))
        jobs.append(FetchJob(site.camera_id, due, JobKind.WEATHER))
    return jobs


# ---------------------------------------------------------------------------
# Weather source port
# ---------------------------------------------------------------------------

class WeatherSource:
    """Port for the hourly weather API; implementations return raw JSON."""

    def fetch(self, query: WeatherQuery, now: datetime) -> dict:
        raise NotImplementedError


class LiveWeatherSource(WeatherSource):
    """HTTP client for an Open-Meteo-shaped forecast endpoint."""

    def __init__(self, base_url: str = "https://api.open-meteo.com/v1/forecast", timeout_s: float = 20.0):
        self.base_url = base_url
        self.timeout_s = timeout_s

    def fetch(self, query: WeatherQuery, now: datetime) -> dict:
        import requests

        params = {
            "latitude": query.latitude,
            "longitude": query.longitude,
            "hourly": ",".join(query.variables),
            "forecast_days": query.forecast_days,
            "past_days": query.past_days,
            "timezone": "UTC",
        }
        try:
            resp = requests.get(self.base_url, params=params, timeout=self.timeout_s)
        except requests.Timeout as exc:
            raise TransportError(f"weather request timed out: {exc}", retryable=True) from exc
        except requests.RequestException as exc:
            raise TransportError(f"weather request failed: {exc}", retryable=True) from exc
        if resp.status_code >= 500:
            raise TransportError(f"weather server error {resp.status_code}", retryable=True)
        if resp.status_code != 200:
            raise TransportError(f"weather request rejected: {resp.status_code}", retryable=False)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"malformed weather response: {exc}", retryable=False) from exc


class FixtureWeatherSource(WeatherSource):
    """Replays recorded response bodies named by (latitude, longitude, date)."""

    def __init__(self, fixture_dir: Path):
        self.fixture_dir = Path(fixture_dir)

    @staticmethod
    def fixture_name(latitude: float, longitude: float, request_date) -> str:
        return f"{latitude:.4f}_{longitude:.4f}_{request_date.isoformat()}.json"

    def fetch(self, query: WeatherQuery, now: datetime) -> dict:
        name = self.fixture_name(query.latitude, query.longitude, ensure_utc(now).date())
        path = self.fixture_dir / name
        if not path.exists():
            raise TransportError(f"no fixture {name}", retryable=False)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)


# ---------------------------------------------------------------------------
# Weather fetch + response parsing
# ---------------------------------------------------------------------------

def _parse_hour(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _sanitize(name: str, value):
    """Clamp out-of-range source values instead of dropping the record."""
    if value is None:
        return None
    value = float(value)
    if name in ("humidity_pct", "cloud_cover_pct"):
        return min(max(value, 0.0), 100.0)
    if name in ("precipitation_mm", "snowfall_mm"):
        return max(value, 0.0)
    return value


def parse_weather_response(
    body: dict, site: CameraSite, now: datetime, query: WeatherQuery
) -> List[WeatherRecord]:
    """Extract one record per lead day from an hourly response.

    For each lead the record valid at `now`'s hour on day now+lead is kept,
    so a full fetch yields leads -1 (previous-day observed, when past_days
    covers it) through forecast_days-1.  Variables missing from the response
    stay None.
    """
    hourly = body.get("hourly") or {}
    times = hourly.get("time") or []
    index = {_parse_hour(t): i for i, t in enumerate(times)}
    anchor = ensure_utc(now).replace(minute=0, second=0, microsecond=0)

    leads = list(range(0, query.forecast_days))
    if query.past_days >= 1:
        leads = [-1] + leads

    records = []
    for lead in leads:
        target = anchor + timedelta(days=lead)
        idx = index.get(target)
        if idx is None:
            logger.warning(
                "no hourly row for lead %+d (%s) in weather response", lead, rfc3339(target)
            )
            continue
        values = {}
        for name in WEATHER_VARIABLES:
            column = hourly.get(API_VARIABLES[name])
            raw = column[idx] if column is not None and idx < len(column) else None
            values[name] = _sanitize(name, raw)
        if values["weather_code"] is not None:
            values["weather_code"] = int(values["weather_code"])
        records.append(WeatherRecord(camera_id=site.camera_id, valid_at=target, lead_days=lead, **values))
    return records


def fetch_weather(
    site: CameraSite,
    query: WeatherQuery,
    transport: WeatherSource,
    now: Optional[datetime] = None,
    *,
    max_attempts: int = MAX_ATTEMPTS,
    sleeper: Callable[[float], None] = time.sleep,
    on_retry: Optional[Callable[[int, Exception], None]] = None,
) -> List[WeatherRecord]:
    """Fetch and parse weather for one site with bounded retries.

    Retryable transport failures back off exponentially (5 s base) up to
    ``max_attempts``; the final failure propagates so the caller can mark the
    job failed without touching the repository.
    """
    now = ensure_utc(now) if now else datetime.now(timezone.utc)
    attempt = 0
    while True:
        attempt += 1
        try:
            body = transport.fetch(query, now)
            return parse_weather_response(body, site, now, query)
        except TransportError as exc:
            if not exc.retryable or attempt >= max_attempts:
                raise
            if on_retry is not None:
                on_retry(attempt, exc)
            sleeper(exc.backoff_s * (2 ** (attempt - 1)))


# ---------------------------------------------------------------------------
# Frame intake
# ---------------------------------------------------------------------------

def ingest_frame(path: Path, site: CameraSite, captured_at: datetime) -> FrameRecord:
    """Build the FrameRecord for one dropped image file.

    Unreadable or empty files come back already CORRUPT; QC never has to
    reopen them.  Timestamps are floored to their 30-minute slot.
    """
    captured_at = ensure_utc(captured_at)
    if captured_at < EARLIEST_CAPTURE:
        raise ValueError(f"capture timestamp before {EARLIEST_CAPTURE:%Y}: {captured_at}")
    if captured_at > datetime.now(timezone.utc) + timedelta(hours=1):
        raise ValueError(f"capture timestamp in the future: {captured_at}")
    slot = floor_to_grid(captured_at)

    path = Path(path)
    digest = None
    status = None
    try:
        data = path.read_bytes()
        if not data:
            status = QcStatus.CORRUPT
        else:
            digest = content_digest(data)
    except OSError:
        status = QcStatus.CORRUPT

    return FrameRecord(
        camera_id=site.camera_id,
        captured_at=slot,
        image_path=str(path),
        qc_status=status,
        content_digest=digest,
    )


class DropDirectory:
    """Frame drop folder: ``<root>/<camera_id>/<YYYYmmddTHHMM[SS]Z>.<ext>``."""

    TIMESTAMP_FORMATS = ("%Y%m%dT%H%M%SZ", "%Y%m%dT%H%MZ")
    EXTENSIONS = (".jpg", ".jpeg", ".png")

    def __init__(self, root: Path):
        self.root = Path(root)

    def frames_for(self, camera_id: str) -> Dict[datetime, Path]:
        """Map of grid slot -> newest file for that slot."""
        cam_dir = self.root / camera_id
        if not cam_dir.is_dir():
            return {}
        slots: Dict[datetime, Path] = {}
        for path in sorted(cam_dir.iterdir()):
            if path.suffix.lower() not in self.EXTENSIONS:
                continue
            ts = self._parse_stem(path.stem)
            if ts is None:
                logger.warning("unparseable frame filename skipped: %s", path.name)
                continue
            slots[floor_to_grid(ts)] = path
        return slots

    @classmethod
    def _parse_stem(cls, stem: str) -> Optional[datetime]:
        # Pick the format by length: strptime would otherwise backtrack
        # "0430Z" into minute 3, second 0 under the seconds format.
        by_length = {16: "%Y%m%dT%H%M%SZ", 14: "%Y%m%dT%H%MZ"}
        fmt = by_length.get(len(stem))
        if fmt is None:
            return None
        try:
            return datetime.strptime(stem, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            return None


# ---------------------------------------------------------------------------
# Job runner with an uptime log
# ---------------------------------------------------------------------------

@dataclass
class CollectorDeps:
    """Everything one tick needs, injected for replayability."""

    sites: Dict[str, CameraSite]
    transport: WeatherSource
    frame_repo: RecordStore
    weather_repo: RecordStore
    drop_dir: Optional[DropDirectory] = None
    job_log: Optional[AppendLog] = None
    max_horizon: int = 3
    sleeper: Callable[[float], None] = time.sleep
    clock: Callable[[], float] = time.monotonic


def _log_outcome(deps: CollectorDeps, job: FetchJob, status: str, attempts: int, latency: float, detail: str = "") -> None:
    if deps.job_log is None:
        return
    deps.job_log.append(
        {
            "camera_id": job.camera_id,
            "due_at": rfc3339(job.due_at),
            "kind": job.kind.value,
            "status": status,
            "attempts": attempts,
            "latency_s": round(latency, 6),
            "detail": detail,
        }
    )


def run_job(job: FetchJob, deps: CollectorDeps) -> int:
    """Execute one fetch job; returns the number of records appended."""
    site = deps.sites.get(job.camera_id)
    start = deps.clock()
    if site is None:
        _log_outcome(deps, job, "skipped", 0, deps.clock() - start, "unknown camera")
        return 0

    if job.kind is JobKind.WEATHER:
        attempts = {"n": 0}

        def note_retry(attempt, exc):
            attempts["n"] = attempt
            _log_outcome(deps, job, "retry", attempt, deps.clock() - start, str(exc))

        try:
            records = fetch_weather(
                site,
                query_for_site(site, deps.max_horizon),
                deps.transport,
                job.due_at,
                sleeper=deps.sleeper,
                on_retry=note_retry,
            )
        except TransportError as exc:
            _log_outcome(deps, job, "failed", attempts["n"] + 1, deps.clock() - start, str(exc))
            return 0
        appended = deps.weather_repo.append(records)
        _log_outcome(deps, job, "success", attempts["n"] + 1, deps.clock() - start, f"appended={appended}")
        return appended

    # FRAME job: look for a dropped file in this slot.
    if deps.drop_dir is None:
        _log_outcome(deps, job, "skipped", 1, deps.clock() - start, "no drop directory")
        return 0
    path = deps.drop_dir.frames_for(job.camera_id).get(job.due_at)
    if path is None:
        _log_outcome(deps, job, "skipped", 1, deps.clock() - start, "no frame in slot")
        return 0
    try:
        frame = ingest_frame(path, site, job.due_at)
    except ValueError as exc:
        _log_outcome(deps, job, "failed", 1, deps.clock() - start, str(exc))
        return 0
    appended = deps.frame_repo.append([frame])
    _log_outcome(deps, job, "success", 1, deps.clock() - start, f"appended={appended}")
    return appended


def run_tick(now: datetime, deps: CollectorDeps) -> int:
    """Schedule and run all jobs for one grid slot."""
    jobs = schedule_tick(now, list(deps.sites.values()))
    return sum(run_job(job, deps) for job in jobs)
