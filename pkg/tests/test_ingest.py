import json
from datetime import datetime, timedelta, timezone

import pytest

from scenicast.core import CameraSite, QcStatus, WeatherRecord
from scenicast.errors import SchemaVersionError, TransportError
from scenicast.ingest import (
    CollectorDeps,
    DropDirectory,
    FetchJob,
    FixtureWeatherSource,
    JobKind,
    WeatherQuery,
    fetch_weather,
    ingest_frame,
    parse_weather_response,
    run_job,
    run_tick,
    schedule_tick,
)
from scenicast.repository import AppendLog, frame_store, weather_store

UTC = timezone.utc
SITE = CameraSite("cam1", 35.4, 138.7, "test cam")


def hourly_body(anchor, past_days=1, forecast_days=7, drop=None):
    """Open-Meteo-shaped response: parallel hourly arrays around anchor."""
    start = anchor - timedelta(days=past_days)
    hours = past_days * 24 + forecast_days * 24
    times = [start + timedelta(hours=k) for k in range(hours)]
    body = {"hourly": {"time": [t.strftime("%Y-%m-%dT%H:%M") for t in times]}}
    variables = {
        "temperature_2m": 20.0,
        "weather_code": 2,
        "relative_humidity_2m": 60.0,
        "precipitation": 0.0,
        "snowfall": 0.0,
        "cloud_cover": 50.0,
        "surface_pressure": 1000.0,
        "pressure_msl": 1013.0,
        "wind_speed_10m": 3.0,
        "wind_direction_10m": 180.0,
    }
    for name, value in variables.items():
        if drop and name in drop:
            continue
        body["hourly"][name] = [value] * hours
    return body


class DictTransport:
    def __init__(self, body):
        self.body = body
        self.calls = 0

    def fetch(self, query, now):
        self.calls += 1
        return self.body


class FlakyTransport(DictTransport):
    def __init__(self, body, failures, retryable=True):
        super().__init__(body)
        self.failures = failures
        self.retryable = retryable

    def fetch(self, query, now):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom", retryable=self.retryable)
        return self.body


class TestScheduleTick:
    def test_floors_to_grid(self):
        now = datetime(2025, 6, 1, 4, 17, tzinfo=UTC)
        jobs = schedule_tick(now, [SITE])
        assert len(jobs) == 2
        assert all(j.due_at == datetime(2025, 6, 1, 4, 0, tzinfo=UTC) for j in jobs)
        assert {j.kind for j in jobs} == {JobKind.FRAME, JobKind.WEATHER}

    def test_42_sites_yield_84_jobs(self):
        sites = [CameraSite(f"cam{i}", 35.0, 138.0) for i in range(42)]
        jobs = schedule_tick(datetime(2025, 6, 1, 4, 30, tzinfo=UTC), sites)
        assert len(jobs) == 84

    def test_grid_boundary_is_fixed_point(self):
        now = datetime(2025, 6, 1, 4, 30, tzinfo=UTC)
        assert all(j.due_at == now for j in schedule_tick(now, [SITE]))

    def test_idempotent_within_slot(self):
        a = schedule_tick(datetime(2025, 6, 1, 4, 1, tzinfo=UTC), [SITE])
        b = schedule_tick(datetime(2025, 6, 1, 4, 29, tzinfo=UTC), [SITE])
        assert [j.key for j in a] == [j.key for j in b]

    def test_empty_sites_empty_jobs(self):
        assert schedule_tick(datetime(2025, 6, 1, 4, 0, tzinfo=UTC), []) == []

    def test_malformed_site_skipped(self):
        jobs = schedule_tick(datetime(2025, 6, 1, 4, 0, tzinfo=UTC), [SITE, "junk"])
        assert len(jobs) == 2

    def test_off_grid_due_at_rejected(self):
        with pytest.raises(ValueError):
            FetchJob("cam1", datetime(2025, 6, 1, 4, 15, tzinfo=UTC), JobKind.FRAME)


class TestWeatherQuery:
    def test_bounds(self):
        with pytest.raises(ValueError):
            WeatherQuery(35.0, 138.0, forecast_days=8)
        with pytest.raises(ValueError):
            WeatherQuery(35.0, 138.0, past_days=3)
        with pytest.raises(ValueError):
            WeatherQuery(35.0, 138.0, variables=())


class TestFetchWeather:
    NOW = datetime(2025, 6, 1, 4, 17, tzinfo=UTC)
    ANCHOR = datetime(2025, 6, 1, 4, 0, tzinfo=UTC)

    def test_full_response_yields_eight_leads(self):
        query = WeatherQuery(35.4, 138.7, forecast_days=7, past_days=1)
        records = fetch_weather(SITE, query, DictTransport(hourly_body(self.ANCHOR)), self.NOW)
        assert [r.lead_days for r in records] == [-1, 0, 1, 2, 3, 4, 5, 6]
        assert all(r.camera_id == "cam1" for r in records)
        for rec in records:
            assert rec.valid_at == self.ANCHOR + timedelta(days=rec.lead_days)
            assert rec.anchor_at == self.ANCHOR

    def test_missing_variable_marked_missing(self):
        body = hourly_body(self.ANCHOR, drop={"cloud_cover"})
        query = WeatherQuery(35.4, 138.7)
        records = fetch_weather(SITE, query, DictTransport(body), self.NOW)
        assert records and all(r.cloud_cover_pct is None for r in records)
        assert all(r.temperature_c == 20.0 for r in records)

    def test_missing_hour_row_skips_lead(self):
        body = hourly_body(self.ANCHOR, past_days=0, forecast_days=2)
        query = WeatherQuery(35.4, 138.7, forecast_days=7, past_days=1)
        records = fetch_weather(SITE, query, DictTransport(body), self.NOW)
        assert [r.lead_days for r in records] == [0, 1]

    def test_out_of_range_values_clamped(self):
        body = hourly_body(self.ANCHOR)
        body["hourly"]["relative_humidity_2m"] = [104.0] * len(body["hourly"]["time"])
        records = parse_weather_response(body, SITE, self.NOW, WeatherQuery(35.4, 138.7))
        assert all(r.humidity_pct == 100.0 for r in records)

    def test_retry_then_success(self):
        delays = []
        transport = FlakyTransport(hourly_body(self.ANCHOR), failures=2)
        records = fetch_weather(
            SITE, WeatherQuery(35.4, 138.7), transport, self.NOW,
            sleeper=delays.append,
        )
        assert transport.calls == 3
        assert delays == [5.0, 10.0]  # exponential backoff from 5 s
        assert len(records) == 8

    def test_retries_exhausted_raises(self):
        transport = FlakyTransport(hourly_body(self.ANCHOR), failures=99)
        with pytest.raises(TransportError):
            fetch_weather(
                SITE, WeatherQuery(35.4, 138.7), transport, self.NOW, sleeper=lambda s: None
            )
        assert transport.calls == 3

    def test_non_retryable_fails_fast(self):
        transport = FlakyTransport(hourly_body(self.ANCHOR), failures=99, retryable=False)
        with pytest.raises(TransportError):
            fetch_weather(
                SITE, WeatherQuery(35.4, 138.7), transport, self.NOW, sleeper=lambda s: None
            )
        assert transport.calls == 1

    def test_fixture_source_reads_named_file(self, tmp_path):
        body = hourly_body(self.ANCHOR)
        name = FixtureWeatherSource.fixture_name(35.4, 138.7, self.NOW.date())
        (tmp_path / name).write_text(json.dumps(body))
        source = FixtureWeatherSource(tmp_path)
        records = fetch_weather(SITE, WeatherQuery(35.4, 138.7), source, self.NOW)
        assert len(records) == 8

    def test_fixture_missing_is_not_retryable(self, tmp_path):
        source = FixtureWeatherSource(tmp_path)
        with pytest.raises(TransportError) as err:
            source.fetch(WeatherQuery(35.4, 138.7), self.NOW)
        assert not err.value.retryable


class TestIngestFrame:
    def test_timestamp_normalized_to_slot(self, tmp_path):
        path = tmp_path / "x.jpg"
        path.write_bytes(b"image-bytes")
        frame = ingest_frame(path, SITE, datetime(2025, 6, 1, 4, 12, tzinfo=UTC))
        assert frame.captured_at == datetime(2025, 6, 1, 4, 0, tzinfo=UTC)
        assert frame.qc_status is None
        assert frame.content_digest

    def test_zero_byte_file_is_corrupt(self, tmp_path):
        path = tmp_path / "empty.jpg"
        path.write_bytes(b"")
        frame = ingest_frame(path, SITE, datetime(2025, 6, 1, 4, 0, tzinfo=UTC))
        assert frame.qc_status is QcStatus.CORRUPT

    def test_unreadable_file_is_corrupt(self, tmp_path):
        frame = ingest_frame(tmp_path / "nope.jpg", SITE, datetime(2025, 6, 1, 4, 0, tzinfo=UTC))
        assert frame.qc_status is QcStatus.CORRUPT

    def test_implausible_timestamps_rejected(self, tmp_path):
        path = tmp_path / "x.jpg"
        path.write_bytes(b"data")
        with pytest.raises(ValueError):
            ingest_frame(path, SITE, datetime(2019, 12, 31, tzinfo=UTC))
        with pytest.raises(ValueError):
            ingest_frame(path, SITE, datetime.now(UTC) + timedelta(days=2))

    def test_reingest_same_slot_is_one_row(self, tmp_path):
        path = tmp_path / "x.jpg"
        path.write_bytes(b"data")
        store = frame_store(tmp_path / "root")
        a = ingest_frame(path, SITE, datetime(2025, 6, 1, 4, 2, tzinfo=UTC))
        b = ingest_frame(path, SITE, datetime(2025, 6, 1, 4, 2, tzinfo=UTC))
        assert store.append([a]) == 1
        assert store.append([b]) == 0
        assert len(list(store.iter_all())) == 1


class TestRepository:
    def make_records(self, n, lead=0):
        return [
            WeatherRecord(
                camera_id="cam1",
                valid_at=datetime(2025, 6, 1, 4, 0, tzinfo=UTC) + timedelta(hours=i),
                lead_days=lead,
                temperature_c=15.0,
            )
            for i in range(n)
        ]

    def test_append_counts(self, tmp_path):
        store = weather_store(tmp_path)
        records = self.make_records(10)
        assert store.append(records) == 10
        assert store.append(records) == 0

    def test_mixed_batch_set_difference(self, tmp_path):
        store = weather_store(tmp_path)
        first = self.make_records(5)
        second = self.make_records(10)  # first five keys overlap
        store.append(first)
        existing = {r.key for r in first}
        expected_new = len({r.key for r in second} - existing)
        assert expected_new == 5
        assert store.append(second) == expected_new

    def test_key_includes_lead(self, tmp_path):
        store = weather_store(tmp_path)
        assert store.append(self.make_records(3, lead=0)) == 3
        assert store.append(self.make_records(3, lead=1)) == 3

    def test_manifest_monotone(self, tmp_path):
        store = weather_store(tmp_path)
        counts = []
        for n in (3, 6, 9):
            store.append(self.make_records(n))
            counts.append(store.record_count())
        assert counts == sorted(counts) == [3, 6, 9]

    def test_schema_version_mismatch(self, tmp_path):
        store = weather_store(tmp_path)
        with pytest.raises(SchemaVersionError):
            store.append(self.make_records(1), schema_version=99)

    def test_torn_write_recovery(self, tmp_path):
        store = weather_store(tmp_path)
        store.append(self.make_records(4))
        # simulate a crash mid-append: garbage past the manifest high-water mark
        [path] = list((tmp_path / "raw" / "weather").glob("*/*.jsonl"))
        with open(path, "ab") as fh:
            fh.write(b'{"torn": ')
        fresh = weather_store(tmp_path)
        assert len(list(fresh.iter_all())) == 4
        assert fresh.append(self.make_records(5)) == 1
        assert len(list(fresh.iter_all())) == 5

    def test_no_duplicate_keys_stored(self, tmp_path):
        store = weather_store(tmp_path)
        store.append(self.make_records(6))
        store.append(self.make_records(9))
        keys = [r.key for r in store.iter_all()]
        assert len(keys) == len(set(keys)) == 9


class TestRunJob:
    def make_deps(self, tmp_path, transport, drop_dir=None):
        return CollectorDeps(
            sites={"cam1": SITE},
            transport=transport,
            frame_repo=frame_store(tmp_path),
            weather_repo=weather_store(tmp_path),
            drop_dir=drop_dir,
            job_log=AppendLog(tmp_path / "logs" / "jobs.jsonl"),
            sleeper=lambda s: None,
        )

    def test_weather_job_appends_and_logs(self, tmp_path):
        anchor = datetime(2025, 6, 1, 4, 0, tzinfo=UTC)
        deps = self.make_deps(tmp_path, DictTransport(hourly_body(anchor)))
        job = FetchJob("cam1", anchor, JobKind.WEATHER)
        assert run_job(job, deps) == 8
        log = deps.job_log.read_all()
        assert log[-1]["status"] == "success"
        assert log[-1]["latency_s"] >= 0

    def test_failed_weather_job_leaves_repo_unchanged(self, tmp_path):
        anchor = datetime(2025, 6, 1, 4, 0, tzinfo=UTC)
        deps = self.make_deps(tmp_path, FlakyTransport({}, failures=99))
        job = FetchJob("cam1", anchor, JobKind.WEATHER)
        assert run_job(job, deps) == 0
        assert deps.weather_repo.record_count() == 0
        statuses = [e["status"] for e in deps.job_log.read_all()]
        assert statuses == ["retry", "retry", "failed"]

    def test_frame_job_picks_slot_file(self, tmp_path):
        anchor = datetime(2025, 6, 1, 4, 0, tzinfo=UTC)
        drop = tmp_path / "drop"
        (drop / "cam1").mkdir(parents=True)
        (drop / "cam1" / "20250601T0412Z.jpg").write_bytes(b"bytes")
        deps = self.make_deps(tmp_path, DictTransport({}), DropDirectory(drop))
        job = FetchJob("cam1", anchor, JobKind.FRAME)
        assert run_job(job, deps) == 1
        [frame] = list(deps.frame_repo.iter_all())
        assert frame.captured_at == anchor

    def test_tick_runs_both_kinds(self, tmp_path):
        anchor = datetime(2025, 6, 1, 4, 0, tzinfo=UTC)
        deps = self.make_deps(tmp_path, DictTransport(hourly_body(anchor)))
        appended = run_tick(anchor, deps)
        assert appended == 8  # weather only; no drop dir for frames
        statuses = {e["status"] for e in deps.job_log.read_all()}
        assert statuses == {"success", "skipped"}
