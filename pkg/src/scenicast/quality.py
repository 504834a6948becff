"""Automated frame quality control: grayness, duplicates, corruption.

The per-pixel grayness predicate (channel spread <= 12, or near-black luma)
is a stand-in definition isolated here so it can be swapped without touching
the threshold gate.  Deduplication is an exact byte-hash check aimed at
transport-level duplicates, not perceptual near-duplicates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .core import FrameRecord, QcStatus, rfc3339
from .errors import ConfigError
from .repository import AppendLog

GRAYNESS_THRESHOLD = 0.40

# A pixel counts as gray when its channels are nearly equal (fog, overcast
# sensor wash-out) or the pixel is close to black (night frames).
CHANNEL_SPREAD_MAX = 12
DARK_LUMA_MAX = 20.0

FrameKey = Tuple[str, str]  # (camera_id, RFC 3339 captured_at)


@dataclass(frozen=True)
class QcReport:
    frame_key: FrameKey
    grayness: Optional[float]
    verdict: QcStatus
    duplicate_of: Optional[FrameKey] = None
    needs_review: bool = False

    def __post_init__(self):
        if self.verdict is QcStatus.DUPLICATE and self.duplicate_of is None:
            raise ValueError("DUPLICATE verdict requires duplicate_of")

    def to_record(self) -> dict:
        return {
            "camera_id": self.frame_key[0],
            "captured_at": self.frame_key[1],
            "grayness": self.grayness,
            "verdict": self.verdict.value,
            "duplicate_of": list(self.duplicate_of) if self.duplicate_of else None,
            "needs_review": self.needs_review,
        }


def frame_key_of(frame: FrameRecord) -> FrameKey:
    return (frame.camera_id, rfc3339(frame.captured_at))


def grayness_fraction(pixels: np.ndarray) -> float:
    """Fraction of gray pixels in an 8-bit RGB raster.

    Gray means channel spread <= 12 (near-achromatic) or luma < 20
    (near-black).  Pure function of the pixel data.
    """
    raster = np.asarray(pixels)
    if raster.size == 0:
        raise ValueError("empty raster")
    if raster.ndim == 2:
        # single-channel input: every pixel is achromatic by definition
        raster = np.stack([raster] * 3, axis=-1)
    if raster.ndim != 3 or raster.shape[-1] < 3:
        raise ValueError(f"expected an RGB raster, got shape {raster.shape}")
    rgb = raster[..., :3].astype(np.int16)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    spread = np.maximum(np.abs(r - g), np.maximum(np.abs(g - b), np.abs(r - b)))
    luma = 0.299 * r + 0.587 * g + 0.114 * b
    gray = (spread <= CHANNEL_SPREAD_MAX) | (luma < DARK_LUMA_MAX)
    return float(np.count_nonzero(gray)) / gray.size


def flag_gray(
    frame: FrameRecord, grayness: float, threshold: float = GRAYNESS_THRESHOLD
) -> QcReport:
    """Gate a frame on its grayness fraction.

    Flags strictly above the threshold ("exceeding"), and every flagged frame
    is queued for human review to avoid false rejections.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"grayness threshold must be in (0, 1], got {threshold}")
    if not 0.0 <= grayness <= 1.0:
        raise ValueError(f"grayness out of [0,1]: {grayness}")
    if grayness > threshold:
        return QcReport(frame_key_of(frame), grayness, QcStatus.BAD_GRAY, needs_review=True)
    return QcReport(frame_key_of(frame), grayness, QcStatus.OK)


def duplicate_check(frame: FrameRecord, digest_index: Dict[str, FrameKey]) -> QcReport:
    """Exact-byte dedup against ``digest_index`` (digest -> first frame key).

    The index is updated in place for fresh digests.  Dedup applies across
    cameras.  Callers needing concurrency must serialize index updates.
    """
    if not frame.content_digest:
        raise ValueError(f"frame {frame.key} has no content digest")
    key = frame_key_of(frame)
    existing = digest_index.get(frame.content_digest)
    if existing is not None and existing != key:
        return QcReport(key, frame.grayness, QcStatus.DUPLICATE, duplicate_of=existing)
    digest_index.setdefault(frame.content_digest, key)
    return QcReport(key, frame.grayness, QcStatus.OK)


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_raster(path: Path) -> np.ndarray:
    """Decode an image file to an 8-bit RGB array."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def run_qc(
    frames: Iterable[FrameRecord],
    *,
    image_root: Optional[Path] = None,
    threshold: float = GRAYNESS_THRESHOLD,
    digest_index: Optional[Dict[str, FrameKey]] = None,
    qc_log: Optional[AppendLog] = None,
) -> list:
    """Run corruption, duplicate and grayness checks over ``frames``.

    Returns one QcReport per frame in input order; reports are appended to
    ``qc_log`` when given.  Frames already carrying a CORRUPT status keep it.
    """
    digest_index = digest_index if digest_index is not None else {}
    reports = []
    for frame in frames:
        report = _qc_one(frame, image_root, threshold, digest_index)
        reports.append(report)
        if qc_log is not None:
            qc_log.append(report.to_record())
    return reports


def _qc_one(frame, image_root, threshold, digest_index) -> QcReport:
    key = frame_key_of(frame)
    if frame.qc_status is QcStatus.CORRUPT:
        return QcReport(key, frame.grayness, QcStatus.CORRUPT)

    grayness = frame.grayness
    digest = frame.content_digest
    if image_root is not None:
        path = Path(image_root) / frame.image_path
        try:
            data = path.read_bytes()
            if not data:
                raise OSError("empty file")
            if digest is None:
                digest = content_digest(data)
            if grayness is None:
                grayness = grayness_fraction(load_raster(path))
        except OSError:
            return QcReport(key, grayness, QcStatus.CORRUPT)

    if digest is not None:
        dup = duplicate_check(
            FrameRecord(
                camera_id=frame.camera_id,
                captured_at=frame.captured_at,
                image_path=frame.image_path,
                content_digest=digest,
                grayness=grayness,
            ),
            digest_index,
        )
        if dup.verdict is QcStatus.DUPLICATE:
            return dup

    if grayness is None:
        # Nothing to measure: frame passes with an unknown grayness.
        return QcReport(key, None, QcStatus.OK)
    return flag_gray(frame, grayness, threshold)


def apply_reports(frames: Iterable[FrameRecord], reports: Iterable[dict]) -> list:
    """Merge QC log records onto frames (latest verdict per frame wins)."""
    verdicts: Dict[FrameKey, dict] = {}
    for rec in reports:
        verdicts[(rec["camera_id"], rec["captured_at"])] = rec
    merged = []
    for frame in frames:
        rec = verdicts.get(frame_key_of(frame))
        if rec is None:
            merged.append(frame)
            continue
        from dataclasses import replace

        merged.append(
            replace(
                frame,
                qc_status=QcStatus(rec["verdict"]),
                grayness=rec["grayness"] if rec["grayness"] is not None else frame.grayness,
            )
        )
    return merged
