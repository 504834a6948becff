"""Synthetic desk-scale dataset with a known generative story.

Latent daily visibility per camera follows a two-state Markov chain
(persistence 0.7).  Vision probabilities reflect the same day's state with
a small flip noise, observed cloud cover reflects it with moderate noise,
and forecast cloud cover for day d+h reflects the state of d+h with noise
growing in h.  Everything is drawn from one seeded generator, so equal
seeds reproduce the dataset bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from typing import Dict, List

import numpy as np

from .core import (
    LOCAL_UTC_OFFSET,
    CameraSite,
    FrameRecord,
    QcStatus,
    VisionProbs,
    WeatherRecord,
)
from .fusion import DayKey

MIN_DAYS = 30
BASE_LAT, BASE_LON = 35.3606, 138.7274

CLOUD_VISIBLE, CLOUD_HIDDEN = 20.0, 75.0

#: morning frame slots (local, half-hour steps from midnight)
FRAME_SLOTS_DEFAULT = 8
#: hourly weather anchors emitted per day (local hours)
WEATHER_HOURS = (0, 1, 2, 3, 4)
LEADS = (-1, 0, 1, 2, 3)


@dataclass
class SynthDataset:
    sites: List[CameraSite]
    frames: List[FrameRecord]
    weather: List[WeatherRecord]
    gold_labels: Dict[DayKey, int]
    seed: int


def _local(day: date, hour: float) -> datetime:
    base = datetime.combine(day, time(0, 0), tzinfo=timezone.utc) - LOCAL_UTC_OFFSET
    return base + timedelta(hours=hour)


def _markov_chain(rng: np.random.Generator, length: int, persistence: float) -> np.ndarray:
    state0 = int(rng.integers(0, 2))
    flips = rng.random(length - 1) >= persistence
    states = np.empty(length, dtype=np.int64)
    states[0] = state0
    states[1:] = state0 ^ (np.cumsum(flips) % 2)
    return states


def _weather_code(cloud_cover: float, precipitation: float) -> int:
    if precipitation > 4.0:
        return 61
    if cloud_cover >= 85.0:
        return 3
    if cloud_cover >= 50.0:
        return 2
    if cloud_cover >= 25.0:
        return 1
    return 0


def synth_generate(
    n_cameras: int = 6,
    n_days: int = 120,
    seed: int = 0,
    *,
    frames_per_day: int = FRAME_SLOTS_DEFAULT,
    vision_noise: float = 0.05,
    weather_noise: float = 0.35,
    forecast_noise_base: float = 0.33,
    forecast_noise_slope: float = 0.17,
    persistence: float = 0.7,
    start: date = date(2024, 1, 1),
) -> SynthDataset:
    """Generate frames, weather records and gold day labels.

    Noise arguments are fractions of the full cloud-cover scale; zero vision
    noise makes same-day vision a perfect signal.
    """
    if n_days < MIN_DAYS:
        raise ValueError(f"n_days must be >= {MIN_DAYS}")
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    rng = np.random.default_rng(seed)

    sites = [
        CameraSite(
            camera_id=f"cam{c:02d}",
            latitude=BASE_LAT + 0.05 * (c - n_cameras / 2) / max(n_cameras, 1),
            longitude=BASE_LON + 0.08 * (c % 3),
            display_name=f"Synthetic camera {c:02d}",
        )
        for c in range(n_cameras)
    ]

    max_lead = max(LEADS)
    # chain index d+1 corresponds to data day d; one pad day before, max_lead after
    chain_len = n_days + 1 + max_lead
    frames: List[FrameRecord] = []
    weather: List[WeatherRecord] = []
    gold: Dict[DayKey, int] = {}

    for site in sites:
        states = _markov_chain(rng, chain_len, persistence)

        # Per-frame vision classes and probability vectors.
        flip = rng.random((n_days, frames_per_day)) < vision_noise
        side_pick = rng.integers(0, 2, size=(n_days, frames_per_day))
        spread = rng.random((n_days, frames_per_day, 4)) * 0.1

        # Per-(day, lead) cloud covers; per-day nuisance variables.
        cc_noise = {
            lead: rng.normal(0.0, _noise_scale(lead, weather_noise, forecast_noise_base, forecast_noise_slope) * 100.0, n_days)
            for lead in LEADS
        }
        temp = 15.0 + 10.0 * np.sin(2.0 * np.pi * (np.arange(n_days) % 365) / 365.0) + rng.normal(0, 2.0, n_days)
        humidity = np.clip(70.0 + rng.normal(0, 12.0, n_days), 0.0, 100.0)
        precip = rng.gamma(0.4, 2.0, n_days)
        pressure = 1013.0 + rng.normal(0, 5.0, n_days)
        sealevel_off = 3.0 + rng.normal(0, 1.0, n_days)
        wind_speed = np.abs(rng.normal(3.0, 2.0, n_days))
        wind_dir = rng.uniform(0.0, 360.0, n_days)

        for d in range(n_days):
            day = start + timedelta(days=d)
            visible = int(states[d + 1])
            gold[DayKey(site.camera_id, day)] = visible

            for slot in range(frames_per_day):
                captured = _local(day, slot * 0.5)
                on_visible_side = visible ^ int(flip[d, slot])
                if on_visible_side:
                    cls = 0 if side_pick[d, slot] else 1  # PERFECT or CLEAR
                else:
                    cls = 2 if side_pick[d, slot] else 3  # CLOUDY or OBSCURED
                vec = spread[d, slot].copy()
                vec[cls] += 1.0
                vec /= vec.sum()
                stamp = captured.strftime("%Y%m%dT%H%MZ")
                digest = hashlib.sha256(f"{site.camera_id}|{stamp}".encode()).hexdigest()
                frames.append(
                    FrameRecord(
                        camera_id=site.camera_id,
                        captured_at=captured,
                        image_path=f"images/{site.camera_id}/{stamp}.png",
                        qc_status=QcStatus.OK,
                        vision_probs=VisionProbs(*vec),
                        grayness=float(rng.uniform(0.0, 0.3)),
                        content_digest=digest,
                    )
                )

            snow = max(0.0, float(rng.normal(1.0, 1.0))) if temp[d] < 0.0 else 0.0
            for lead in LEADS:
                target_state = int(states[d + 1 + lead])
                cc = float(
                    np.clip(
                        (CLOUD_VISIBLE if target_state else CLOUD_HIDDEN) + cc_noise[lead][d],
                        0.0,
                        100.0,
                    )
                )
                for hour in WEATHER_HOURS:
                    anchor = _local(day, float(hour))
                    weather.append(
                        WeatherRecord(
                            camera_id=site.camera_id,
                            valid_at=anchor + timedelta(days=lead),
                            lead_days=lead,
                            temperature_c=float(temp[d]),
                            weather_code=_weather_code(cc, float(precip[d])),
                            humidity_pct=float(humidity[d]),
                            precipitation_mm=float(precip[d]),
                            snowfall_mm=snow,
                            cloud_cover_pct=cc,
                            surface_pressure_hpa=float(pressure[d]),
                            sealevel_pressure_hpa=float(pressure[d] + sealevel_off[d]),
                            wind_speed_ms=float(wind_speed[d]),
                            wind_dir_deg=float(wind_dir[d]),
                        )
                    )

    return SynthDataset(sites=sites, frames=frames, weather=weather, gold_labels=gold, seed=seed)


def _noise_scale(lead: int, now_noise: float, base: float, slope: float) -> float:
    if lead <= 0:
        return now_noise
    return base + slope * (lead - 1)


def write_frame_images(dataset: SynthDataset, root, size: int = 24) -> int:
    """Render tiny class-colored PNGs for each frame (for QC/UI demos)."""
    from PIL import Image
    from pathlib import Path

    colors = {
        0: (70, 130, 220),   # perfect: blue sky
        1: (140, 180, 230),  # clear
        2: (170, 170, 170),  # cloudy
        3: (120, 120, 120),  # obscured
    }
    root = Path(root)
    count = 0
    for frame in dataset.frames:
        cls = frame.vision_probs.argmax_class().value if frame.vision_probs else 3
        path = root / frame.image_path
        path.parent.mkdir(parents=True, exist_ok=True)
        img = Image.new("RGB", (size, size), colors.get(cls, (120, 120, 120)))
        # a distinct corner pixel keeps byte-level dedup from firing
        img.putpixel((0, 0), (count % 255, (count // 255) % 255, 7))
        img.save(path)
        count += 1
    return count
