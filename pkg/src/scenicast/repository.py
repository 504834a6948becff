"""Append-only record repositories.

Frames and weather land in JSON-lines files partitioned by
``(camera_id, month)``, one record per line, with a manifest per partition.
Appends are idempotent by record key and all-or-nothing per batch: lines are
written first, the manifest only after a successful flush, and any bytes past
the manifest's high-water mark are discarded on the next open.  This keeps a
single-writer / many-reader contract cheap: readers only trust bytes the
manifest covers.
"""

from __future__ import annotations

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

from .core import (
    SCHEMA_VERSION,
    frame_from_record,
    frame_to_record,
    weather_from_record,
    weather_to_record,
)
from .errors import RepositoryError, SchemaVersionError

MANIFEST_SUFFIX = ".manifest.json"


def _month_of(ts: datetime) -> str:
    return ts.strftime("%Y-%m")


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class RecordStore:
    """One repository of keyed records under ``root`` (e.g. frames, weather)."""

    def __init__(
        self,
        root: Path,
        *,
        key_fn: Callable,
        partition_ts: Callable,
        to_record: Callable,
        from_record: Callable,
        schema_version: int = SCHEMA_VERSION,
    ):
        self.root = Path(root)
        self.key_fn = key_fn
        self.partition_ts = partition_ts
        self.to_record = to_record
        self.from_record = from_record
        self.schema_version = schema_version
        self._key_cache: dict = {}

    # -- partition bookkeeping ------------------------------------------------

    def _partition_path(self, camera_id: str, month: str) -> Path:
        return self.root / camera_id / f"{month}.jsonl"

    def _manifest_path(self, data_path: Path) -> Path:
        return data_path.with_name(data_path.stem + MANIFEST_SUFFIX)

    def read_manifest(self, data_path: Path) -> dict:
        mpath = self._manifest_path(data_path)
        if not mpath.exists():
            return {
                "schema_version": self.schema_version,
                "record_count": 0,
                "byte_length": 0,
                "last_key": None,
            }
        with open(mpath, encoding="utf-8") as fh:
            return json.load(fh)

    def _write_manifest(self, data_path: Path, manifest: dict) -> None:
        mpath = self._manifest_path(data_path)
        tmp = mpath.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, mpath)

    def _partition_keys(self, data_path: Path) -> set:
        cached = self._key_cache.get(data_path)
        if cached is not None:
            return cached
        keys = set()
        for obj in self._iter_partition(data_path):
            keys.add(self.key_fn(obj))
        self._key_cache[data_path] = keys
        return keys

    def _iter_partition(self, data_path: Path) -> Iterator:
        if not data_path.exists():
            return
        manifest = self.read_manifest(data_path)
        limit = manifest["byte_length"]
        with open(data_path, "rb") as fh:
            payload = fh.read(limit)
        for line in payload.decode("utf-8").splitlines():
            if line.strip():
                yield self.from_record(json.loads(line))

    # -- public API -------------------------------------------------------------

    def append(self, records: Iterable, schema_version: Optional[int] = None) -> int:
        """Append ``records``, skipping keys already present.

        Returns the number of newly appended records.  The batch either lands
        entirely (manifest advanced) or not at all (manifest untouched).
        """
        if schema_version is not None and schema_version != self.schema_version:
            raise SchemaVersionError(
                f"batch schema v{schema_version} != repository schema v{self.schema_version}"
            )
        by_partition: dict = {}
        for obj in records:
            ts = self.partition_ts(obj)
            path = self._partition_path(self._camera_of(obj), _month_of(ts))
            by_partition.setdefault(path, []).append(obj)

        appended = 0
        for path, batch in sorted(by_partition.items()):
            appended += self._append_partition(path, batch)
        return appended

    @staticmethod
    def _camera_of(obj) -> str:
        return obj.camera_id

    def _append_partition(self, path: Path, batch: list) -> int:
        manifest = self.read_manifest(path)
        if manifest["schema_version"] != self.schema_version:
            raise SchemaVersionError(
                f"partition {path} has schema v{manifest['schema_version']}, "
                f"expected v{self.schema_version}"
            )
        keys = self._partition_keys(path)
        fresh = []
        seen_in_batch = set()
        for obj in batch:
            key = self.key_fn(obj)
            if key in keys or key in seen_in_batch:
                continue
            seen_in_batch.add(key)
            fresh.append(obj)
        if not fresh:
            return 0

        path.parent.mkdir(parents=True, exist_ok=True)
        lines = "".join(_dump_line(self.to_record(obj)) + "\n" for obj in fresh)
        payload = lines.encode("utf-8")
        with open(path, "ab") as fh:
            # Drop any torn bytes from a previous failed append.
            fh.truncate(manifest["byte_length"])
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())

        manifest["record_count"] += len(fresh)
        manifest["byte_length"] += len(payload)
        manifest["last_key"] = _key_to_json(self.key_fn(fresh[-1]))
        self._write_manifest(path, manifest)
        keys.update(self.key_fn(obj) for obj in fresh)
        return len(fresh)

    def iter_all(self, camera_id: Optional[str] = None) -> Iterator:
        """Yield records across partitions in (camera, month) order."""
        if not self.root.exists():
            return
        cameras = [camera_id] if camera_id else sorted(
            p.name for p in self.root.iterdir() if p.is_dir()
        )
        for cam in cameras:
            cam_dir = self.root / cam
            if not cam_dir.is_dir():
                continue
            for path in sorted(cam_dir.glob("*.jsonl")):
                yield from self._iter_partition(path)

    def record_count(self) -> int:
        total = 0
        if not self.root.exists():
            return 0
        for path in self.root.glob("*/*.jsonl"):
            total += self.read_manifest(path)["record_count"]
        return total


def _key_to_json(key: tuple) -> list:
    out = []
    for part in key:
        if isinstance(part, datetime):
            out.append(part.strftime("%Y-%m-%dT%H:%M:%SZ"))
        else:
            out.append(part)
    return out


def frame_store(data_root: Path) -> RecordStore:
    return RecordStore(
        Path(data_root) / "raw" / "frames",
        key_fn=lambda f: f.key,
        partition_ts=lambda f: f.captured_at,
        to_record=frame_to_record,
        from_record=frame_from_record,
    )


def weather_store(data_root: Path) -> RecordStore:
    return RecordStore(
        Path(data_root) / "raw" / "weather",
        key_fn=lambda w: w.key,
        partition_ts=lambda w: w.valid_at,
        to_record=weather_to_record,
        from_record=weather_from_record,
    )


class AppendLog:
    """Minimal append-only JSONL log (QC reports, labels, job outcomes)."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def append(self, record: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(_dump_line(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def read_all(self) -> list:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise RepositoryError(f"corrupt log line in {self.path}: {exc}") from exc
        return out
