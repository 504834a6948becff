"""HTTP service for the labeling workflow and read-only predictions.

Backs the browser annotation client: serves the oldest unlabeled frame
(with QC verdicts so reviewers see auto-flags), records label submissions
with full history, and exposes prediction, class-distribution and camera
endpoints.  Labels are appended to the label log on every write, so service
restarts lose nothing.  Concurrent annotators are arbitrated with leases:
a frame handed to one annotator is skipped by everyone until its lease
expires or a label lands.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .boosting import predict_row
from .core import VisibilityClass, local_date, rfc3339
from .fusion import SnapshotKind
from .pipeline import (
    find_model,
    labels_log,
    latest_example_for,
    load_effective_frames,
    load_pipeline_model,
    load_sites,
    qc_log,
)

API_SCHEMA_VERSION = 1
DEFAULT_LEASE_SECONDS = 120.0


class LabelIn(BaseModel):
    camera_id: str
    captured_at: str
    label: str
    annotator: str = "anonymous"


class UndoIn(BaseModel):
    camera_id: str
    captured_at: str
    annotator: str = "anonymous"


class ServiceState:
    """In-memory view over the repositories plus lease bookkeeping."""

    def __init__(self, data_root: Path, lease_seconds: float = DEFAULT_LEASE_SECONDS):
        self.data_root = Path(data_root)
        self.lease_seconds = lease_seconds
        self.lock = threading.Lock()
        self.sites = load_sites(self.data_root)
        self.frames = sorted(
            load_effective_frames(self.data_root), key=lambda f: (f.captured_at, f.camera_id)
        )
        self.by_key: Dict[Tuple[str, str], object] = {
            (f.camera_id, rfc3339(f.captured_at)): f for f in self.frames
        }
        self.qc_map: Dict[Tuple[str, str], dict] = {}
        for rec in qc_log(self.data_root).read_all():
            self.qc_map[(rec["camera_id"], rec["captured_at"])] = rec
        self.active: Dict[Tuple[str, str], str] = {}
        self.history: List[dict] = []
        for ev in labels_log(self.data_root).read_all():
            self._apply_event(ev)
        self.leases: Dict[Tuple[str, str], Tuple[str, float]] = {}

    def _apply_event(self, ev: dict) -> None:
        key = (ev["camera_id"], ev["captured_at"])
        self.history.append(ev)
        if ev.get("kind") == "undo":
            self.active.pop(key, None)
        else:
            self.active[key] = ev["label"]

    # -- queue ----------------------------------------------------------------

    def queue_size(self) -> int:
        return sum(1 for f in self.frames if self._key(f) not in self.active)

    @staticmethod
    def _key(frame) -> Tuple[str, str]:
        return (frame.camera_id, rfc3339(frame.captured_at))

    def next_unlabeled(self, annotator: str, camera: Optional[str], day: Optional[str],
                       needs_review: Optional[bool]):
        now = time.monotonic()
        for frame in self.frames:
            key = self._key(frame)
            if key in self.active:
                continue
            if camera and frame.camera_id != camera:
                continue
            if day and local_date(frame.captured_at).isoformat() != day:
                continue
            if needs_review:
                qc = self.qc_map.get(key)
                if not qc or not qc.get("needs_review"):
                    continue
            lease = self.leases.get(key)
            if lease and lease[1] > now:
                continue
            self.leases[key] = (annotator, now + self.lease_seconds)
            return frame
        return None

    def submit(self, body: LabelIn) -> int:
        key = (body.camera_id, body.captured_at)
        if key not in self.by_key:
            raise HTTPException(404, detail="unknown frame key")
        try:
            VisibilityClass[body.label]
        except KeyError:
            raise HTTPException(422, detail=f"unknown class {body.label!r}") from None
        event = {
            "camera_id": body.camera_id,
            "captured_at": body.captured_at,
            "kind": "label",
            "label": body.label,
            "annotator": body.annotator,
            "submitted_at": rfc3339(datetime.now(timezone.utc)),
        }
        labels_log(self.data_root).append(event)
        self._apply_event(event)
        self.leases.pop(key, None)
        return self.queue_size()

    def undo(self, body: UndoIn) -> int:
        key = (body.camera_id, body.captured_at)
        if key not in self.by_key:
            raise HTTPException(404, detail="unknown frame key")
        if key not in self.active:
            raise HTTPException(409, detail="frame has no active label to undo")
        last = next(
            (ev for ev in reversed(self.history)
             if (ev["camera_id"], ev["captured_at"]) == key and ev.get("kind") != "undo"),
            None,
        )
        if last is not None and last.get("annotator") not in ("", body.annotator):
            raise HTTPException(409, detail="active label belongs to another annotator")
        event = {
            "camera_id": body.camera_id,
            "captured_at": body.captured_at,
            "kind": "undo",
            "annotator": body.annotator,
            "submitted_at": rfc3339(datetime.now(timezone.utc)),
        }
        labels_log(self.data_root).append(event)
        self._apply_event(event)
        self.leases.pop(key, None)
        return self.queue_size()


def _frame_payload(state: ServiceState, frame) -> dict:
    key = state._key(frame)
    qc = state.qc_map.get(key)
    return {
        "camera_id": frame.camera_id,
        "captured_at": key[1],
        "date": local_date(frame.captured_at).isoformat(),
        "image_url": f"/images/{frame.image_path}",
        "qc": {
            "verdict": frame.qc_status.value if frame.qc_status else None,
            "grayness": frame.grayness,
            "needs_review": bool(qc.get("needs_review")) if qc else False,
            "duplicate_of": qc.get("duplicate_of") if qc else None,
        },
    }


def create_app(data_root: Path, lease_seconds: float = DEFAULT_LEASE_SECONDS) -> FastAPI:
    state = ServiceState(data_root, lease_seconds)
    app = FastAPI(title="scenicast service")
    app.state.scenicast = state

    from fastapi.middleware.cors import CORSMiddleware

    # the annotation client runs on a different origin during development
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(HTTPException)
    async def _error_shape(request: Request, exc: HTTPException):
        codes = {404: "not_found", 409: "conflict", 422: "invalid", 503: "unavailable"}
        return JSONResponse(
            status_code=exc.status_code,
            content={
                "schema_version": API_SCHEMA_VERSION,
                "code": codes.get(exc.status_code, "error"),
                "message": str(exc.detail),
            },
        )

    @app.get("/api/frames/next")
    def frames_next(
        annotator: str = "anonymous",
        camera: Optional[str] = None,
        date: Optional[str] = None,
        needs_review: Optional[bool] = None,
    ):
        if camera and camera not in state.sites and not any(
            f.camera_id == camera for f in state.frames
        ):
            raise HTTPException(404, detail=f"unknown camera {camera!r}")
        with state.lock:
            frame = state.next_unlabeled(annotator, camera, date, needs_review)
            queue = state.queue_size()
        if frame is None:
            return {"schema_version": API_SCHEMA_VERSION, "frame": None, "queue_size": queue, "drained": True}
        return {
            "schema_version": API_SCHEMA_VERSION,
            "frame": _frame_payload(state, frame),
            "queue_size": queue,
            "drained": False,
        }

    @app.post("/api/labels")
    def labels_post(body: LabelIn):
        with state.lock:
            queue = state.submit(body)
            history_len = sum(
                1 for ev in state.history
                if (ev["camera_id"], ev["captured_at"]) == (body.camera_id, body.captured_at)
            )
        return {
            "schema_version": API_SCHEMA_VERSION,
            "ok": True,
            "queue_size": queue,
            "history_length": history_len,
        }

    @app.post("/api/labels/undo")
    def labels_undo(body: UndoIn):
        with state.lock:
            queue = state.undo(body)
        return {"schema_version": API_SCHEMA_VERSION, "ok": True, "queue_size": queue}

    @app.get("/api/labels/history")
    def labels_history(camera_id: Optional[str] = None, captured_at: Optional[str] = None):
        with state.lock:
            events = [
                ev for ev in state.history
                if (camera_id is None or ev["camera_id"] == camera_id)
                and (captured_at is None or ev["captured_at"] == captured_at)
            ]
        return {"schema_version": API_SCHEMA_VERSION, "events": events, "count": len(events)}

    @app.get("/api/predict")
    def predict(camera_id: str, horizon: int):
        if horizon not in (0, 1, 2, 3):
            raise HTTPException(422, detail="horizon out of supported range 0..3")
        path = find_model(state.data_root, horizon)
        if path is None:
            raise HTTPException(503, detail=f"no trained model for horizon +{horizon}d")
        model, encoder = load_pipeline_model(path)
        kind = SnapshotKind(model.meta.get("snapshot_kind", "FIRST_FRAME"))
        example = latest_example_for(
            state.data_root, camera_id, kind, theta=float(model.meta.get("theta", 0.5))
        )
        if example is None:
            return {
                "schema_version": API_SCHEMA_VERSION,
                "status": "no_data",
                "camera_id": camera_id,
                "horizon": horizon,
            }
        row = encoder.transform([example]).X[0]
        prob = predict_row(model, row)
        return {
            "schema_version": API_SCHEMA_VERSION,
            "status": "ok",
            "camera_id": camera_id,
            "date": example.key.day.isoformat(),
            "horizon": horizon,
            "probability": prob,
            "decision": int(prob >= 0.5),
            "snapshot_kind": kind.value,
            "model_fingerprint": model.schema_fingerprint,
            "flags": {
                "fallback_snapshot": bool(example.provenance.fallback),
                "missing_features": int(np.isnan(row).sum()),
            },
        }

    @app.get("/api/stats/classes")
    def stats_classes():
        with state.lock:
            counts = {cls.name: 0 for cls in VisibilityClass}
            for label in state.active.values():
                counts[label] += 1
        return {
            "schema_version": API_SCHEMA_VERSION,
            "counts": counts,
            "total": sum(counts.values()),
        }

    @app.get("/api/cameras")
    def cameras():
        return {
            "schema_version": API_SCHEMA_VERSION,
            "cameras": [
                {
                    "camera_id": s.camera_id,
                    "latitude": s.latitude,
                    "longitude": s.longitude,
                    "display_name": s.display_name,
                }
                for s in sorted(state.sites.values(), key=lambda s: s.camera_id)
            ],
        }

    @app.get("/images/{path:path}")
    def images(path: str):
        base = state.data_root.resolve()
        full = (base / path).resolve()
        if not str(full).startswith(str(base)) or not full.is_file():
            raise HTTPException(404, detail="image not found")
        return FileResponse(full)

    return app
