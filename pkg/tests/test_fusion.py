import math
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from scenicast.core import (
    LOCAL_UTC_OFFSET,
    CameraSite,
    FrameRecord,
    QcStatus,
    VisibilityClass,
    VisionProbs,
    WeatherRecord,
)
from scenicast.fusion import (
    DayExampleEncoder,
    DayKey,
    Modality,
    SnapshotKind,
    align_frame_weather,
    audit_leakage,
    build_day_examples,
    day_label,
    shift_targets,
    snapshot_first_frame,
    snapshot_morning_window,
    target_vector,
)

UTC = timezone.utc
SITES = {"cam1": CameraSite("cam1", 35.4, 138.7), "cam2": CameraSite("cam2", 35.5, 138.8)}

CLASS_PROBS = {
    VisibilityClass.PERFECT: VisionProbs(0.85, 0.08, 0.04, 0.03),
    VisibilityClass.CLEAR: VisionProbs(0.08, 0.82, 0.06, 0.04),
    VisibilityClass.CLOUDY: VisionProbs(0.04, 0.06, 0.82, 0.08),
    VisibilityClass.OBSCURED: VisionProbs(0.02, 0.04, 0.09, 0.85),
}


def local_dt(day, hour=0.0):
    base = datetime(day.year, day.month, day.day, tzinfo=UTC) - LOCAL_UTC_OFFSET
    return base + timedelta(hours=hour)


def frame_at(day, hour, cls=VisibilityClass.CLEAR, camera="cam1", status=QcStatus.OK):
    ts = local_dt(day, hour)
    return FrameRecord(
        camera_id=camera,
        captured_at=ts,
        image_path=f"images/{camera}/{ts:%Y%m%dT%H%MZ}.png",
        qc_status=status,
        vision_probs=CLASS_PROBS[cls],
        grayness=0.1,
        content_digest=f"{camera}-{ts:%Y%m%dT%H%MZ}",
    )


def weather_at(day, hour, lead=0, cloud=50.0, camera="cam1", **kwargs):
    anchor = local_dt(day, hour)
    return WeatherRecord(
        camera_id=camera,
        valid_at=anchor + timedelta(days=lead),
        lead_days=lead,
        temperature_c=kwargs.pop("temperature_c", 15.0),
        weather_code=kwargs.pop("weather_code", 2),
        humidity_pct=60.0,
        precipitation_mm=0.0,
        snowfall_mm=0.0,
        cloud_cover_pct=cloud,
        surface_pressure_hpa=1000.0,
        sealevel_pressure_hpa=1013.0,
        wind_speed_ms=3.0,
        wind_dir_deg=kwargs.pop("wind_dir_deg", 180.0),
        **kwargs,
    )


DAY = date(2025, 6, 1)


class TestAlign:
    def test_exact_join(self):
        frames = [frame_at(DAY, 4.0)]
        weather = [weather_at(DAY, 4.0, lead=0)]
        [row] = align_frame_weather(frames, weather, leads=(0,))
        assert row.weather[0] == weather[0]

    def test_tie_breaks_toward_earlier(self):
        # frame at 04:30 sits exactly 30 min from hourly rows at 04:00 and 05:00
        frames = [frame_at(DAY, 4.5)]
        earlier = weather_at(DAY, 4.0, cloud=10.0)
        later = weather_at(DAY, 5.0, cloud=90.0)
        distances = {
            abs((earlier.anchor_at - frames[0].captured_at).total_seconds()),
            abs((later.anchor_at - frames[0].captured_at).total_seconds()),
        }
        assert distances == {1800.0}  # both candidates equally far
        [row] = align_frame_weather(frames, [later, earlier], leads=(0,))
        assert row.weather[0] == earlier

    def test_nearest_wins_when_not_tied(self):
        frames = [frame_at(DAY, 4.5)]
        near = weather_at(DAY, 5.0, cloud=90.0)
        [row] = align_frame_weather(frames, [weather_at(DAY, 3.0), near], leads=(0,))
        assert row.weather[0] == near

    def test_out_of_tolerance_is_missing_but_frame_kept(self):
        frames = [frame_at(DAY, 4.0)]
        weather = [weather_at(DAY, 6.0)]
        [row] = align_frame_weather(frames, weather, leads=(0,))
        assert row.weather[0] is None

    def test_forecast_leads_join_through_anchor_time(self):
        # lead-2 record valid on day d+2 aligns with day-d frames
        frames = [frame_at(DAY, 1.0)]
        fc = weather_at(DAY, 1.0, lead=2, cloud=33.0)
        assert fc.valid_at.date() != frames[0].captured_at.date()
        [row] = align_frame_weather(frames, [fc], leads=(0, 1, 2, 3))
        assert row.weather[2] == fc
        assert row.weather[0] is None

    def test_cameras_do_not_cross_join(self):
        frames = [frame_at(DAY, 4.0, camera="cam1")]
        weather = [weather_at(DAY, 4.0, camera="cam2")]
        [row] = align_frame_weather(frames, weather, leads=(0,))
        assert row.weather[0] is None


class TestDayLabel:
    def test_boundary_half_is_visible(self):
        frames = [
            frame_at(DAY, 0.0, VisibilityClass.CLEAR),
            frame_at(DAY, 0.5, VisibilityClass.OBSCURED),
            frame_at(DAY, 1.0, VisibilityClass.PERFECT),
            frame_at(DAY, 1.5, VisibilityClass.CLOUDY),
        ]
        fraction, label = day_label(frames, theta=0.5)
        assert fraction == 0.5
        assert label == 1

    def test_all_obscured(self):
        frames = [frame_at(DAY, i * 0.5, VisibilityClass.OBSCURED) for i in range(10)]
        assert day_label(frames) == (0.0, 0)

    def test_two_thirds(self):
        frames = [
            frame_at(DAY, 0.0, VisibilityClass.PERFECT),
            frame_at(DAY, 0.5, VisibilityClass.CLEAR),
            frame_at(DAY, 1.0, VisibilityClass.CLOUDY),
        ]
        fraction, label = day_label(frames)
        assert fraction == pytest.approx(2 / 3)
        assert label == 1

    def test_zero_usable_frames_raises(self):
        with pytest.raises(ValueError):
            day_label([])

    def test_human_label_mode(self):
        frames = [
            FrameRecord(
                camera_id="cam1",
                captured_at=local_dt(DAY, 0.0),
                image_path="x",
                qc_status=QcStatus.OK,
                human_label=VisibilityClass.CLEAR,
            )
        ]
        assert day_label(frames, use_human_labels=True) == (1.0, 1)

    def test_random_days_match_counting_oracle(self):
        rng = np.random.default_rng(202)
        classes = list(CLASS_PROBS)
        for _ in range(300):
            n = int(rng.integers(1, 30))
            day_classes = [classes[i] for i in rng.integers(0, 4, n)]
            frames = [frame_at(DAY, i * 0.5, c) for i, c in enumerate(day_classes)]
            theta = float(rng.uniform(0.05, 0.95))
            visible = sum(
                1 for c in day_classes if c in (VisibilityClass.PERFECT, VisibilityClass.CLEAR)
            )
            fraction, label = day_label(frames, theta)
            assert fraction == pytest.approx(visible / n, abs=1e-12)
            assert label == int(visible / n >= theta)


class TestShiftTargets:
    def test_next_day_target(self):
        labels = {DayKey("cam1", DAY): 1, DayKey("cam1", DAY + timedelta(days=1)): 0}
        targets = shift_targets(labels)
        assert targets[DayKey("cam1", DAY)][1] == 0
        assert targets[DayKey("cam1", DAY)][0] == 1

    def test_last_day_has_no_future_targets(self):
        labels = {DayKey("cam1", DAY): 1}
        targets = shift_targets(labels)
        assert targets[DayKey("cam1", DAY)][0] == 1
        assert all(targets[DayKey("cam1", DAY)][h] is None for h in (1, 2, 3))

    def test_gap_day_leaves_hole(self):
        # five-day calendar with day d+2 missing
        days = [0, 1, 3, 4]
        labels = {DayKey("cam1", DAY + timedelta(days=d)): d % 2 for d in days}
        targets = shift_targets(labels)
        t0 = targets[DayKey("cam1", DAY)]
        assert t0[2] is None  # d+2 is the hole
        assert t0[1] == 1
        assert t0[3] == 1  # d+3 exists
        assert t0[0] == 0

    def test_cameras_are_independent(self):
        labels = {
            DayKey("cam1", DAY): 1,
            DayKey("cam2", DAY + timedelta(days=1)): 0,
        }
        targets = shift_targets(labels)
        assert targets[DayKey("cam1", DAY)][1] is None


class TestSnapshots:
    def joined(self, frames, weather=()):
        return align_frame_weather(frames, list(weather))

    def test_first_frame_takes_earliest(self):
        rows = self.joined([frame_at(DAY, 1.0, VisibilityClass.CLOUDY), frame_at(DAY, 0.5)])
        feats, prov = snapshot_first_frame(rows)
        assert feats["vision_p_clear"] == CLASS_PROBS[VisibilityClass.CLEAR].p_clear
        assert len(prov.frame_keys) == 1

    def test_single_frame_day(self):
        rows = self.joined([frame_at(DAY, 2.0)])
        feats, _ = snapshot_first_frame(rows)
        assert feats["meta_hour"] == 2.0

    def test_flagged_first_frame_excluded_upstream(self):
        frames = [
            frame_at(DAY, 0.0, VisibilityClass.CLEAR, status=QcStatus.BAD_GRAY),
            frame_at(DAY, 0.5, VisibilityClass.OBSCURED),
        ]
        weather = [weather_at(DAY, h, lead=l) for h in (0.0, 0.5, 1.0) for l in (0, 1, 2, 3)]
        examples = build_day_examples(frames, weather, SITES)
        assert len(examples) == 1
        # the flagged 00:00 frame must not be the snapshot source
        assert examples[0].features["vision_p_obscured"] == (
            CLASS_PROBS[VisibilityClass.OBSCURED].p_obscured
        )

    def test_window_means_and_renormalizes(self):
        a = frame_at(DAY, 0.0, VisibilityClass.PERFECT)
        b = frame_at(DAY, 1.0, VisibilityClass.CLEAR)
        rows = self.joined([a, b])
        feats, prov = snapshot_morning_window(rows)
        pa, pb = a.vision_probs, b.vision_probs
        mean = np.array(
            [
                (pa.p_perfect + pb.p_perfect) / 2,
                (pa.p_clear + pb.p_clear) / 2,
                (pa.p_cloudy + pb.p_cloudy) / 2,
                (pa.p_obscured + pb.p_obscured) / 2,
            ]
        )
        mean /= mean.sum()
        got = np.array(
            [feats["vision_p_perfect"], feats["vision_p_clear"],
             feats["vision_p_cloudy"], feats["vision_p_obscured"]]
        )
        assert np.allclose(got, mean, atol=1e-12)
        assert abs(got.sum() - 1.0) <= 1e-6
        assert feats["meta_window_fallback"] == 0.0
        assert not prov.fallback

    def test_window_boundary_half_open(self):
        inside = frame_at(DAY, 2.0 + 59 / 60, VisibilityClass.PERFECT)   # 02:59
        outside = frame_at(DAY, 3.0, VisibilityClass.OBSCURED)           # 03:00
        feats, prov = snapshot_morning_window(self.joined([inside, outside]))
        assert len(prov.frame_keys) == 1
        assert feats["vision_p_perfect"] == pytest.approx(
            CLASS_PROBS[VisibilityClass.PERFECT].p_perfect
        )

    def test_no_morning_frames_falls_back(self):
        rows = self.joined([frame_at(DAY, 5.0), frame_at(DAY, 6.0)])
        feats, prov = snapshot_morning_window(rows)
        assert prov.fallback
        assert feats["meta_window_fallback"] == 1.0
        assert feats["meta_hour"] == 5.0

    def test_weather_code_takes_modal_with_earliest_tie(self):
        frames = [frame_at(DAY, 0.0), frame_at(DAY, 0.5), frame_at(DAY, 1.0)]
        weather = [
            weather_at(DAY, 0.0, weather_code=3),
            weather_at(DAY, 0.5, weather_code=1),
            weather_at(DAY, 1.0, weather_code=1),
        ]
        feats, _ = snapshot_morning_window(self.joined(frames, weather))
        assert feats["now_weather_code"] == 1
        # two-frame tie: earliest frame's code wins
        feats2, _ = snapshot_morning_window(self.joined(frames[:2], weather[:2]))
        assert feats2["now_weather_code"] == 3

    def test_window_numeric_mean_ignores_missing(self):
        frames = [frame_at(DAY, 0.0), frame_at(DAY, 1.0)]
        weather = [weather_at(DAY, 0.0, cloud=40.0)]  # second frame unjoined
        feats, _ = snapshot_morning_window(self.joined(frames, weather))
        assert feats["now_cloud_cover_pct"] == 40.0


class TestEncoder:
    def build_examples(self, n_days=4, camera="cam1"):
        frames = []
        weather = []
        for d in range(n_days):
            day = DAY + timedelta(days=d)
            cls = VisibilityClass.CLEAR if d % 2 == 0 else VisibilityClass.OBSCURED
            frames += [frame_at(day, 0.0, cls, camera=camera), frame_at(day, 1.0, cls, camera=camera)]
            weather += [
                weather_at(day, h, lead=l, cloud=30.0 + d, camera=camera,
                           weather_code=2 if d % 2 else 1)
                for h in (0.0, 1.0)
                for l in (0, 1, 2, 3)
            ]
        return build_day_examples(frames, weather, SITES)

    def test_width_at_least_48(self):
        examples = self.build_examples()
        enc = DayExampleEncoder().fit(examples)
        matrix = enc.transform(examples)
        assert matrix.width >= 48

    def test_rows_are_rectangular(self):
        examples = self.build_examples()
        matrix = DayExampleEncoder().fit_transform(examples)
        assert matrix.X.shape == (len(examples), matrix.width)

    def test_modalities_cover_exactly_four_families(self):
        examples = self.build_examples()
        matrix = DayExampleEncoder().fit_transform(examples)
        assert {c.modality for c in matrix.columns} == set(Modality)

    def test_wind_direction_circular(self):
        e1 = self.build_examples()
        e1[0].features["now_wind_dir_deg"] = 0.0
        enc = DayExampleEncoder().fit(e1)
        row0 = enc.transform([e1[0]]).X[0]
        e1[0].features["now_wind_dir_deg"] = 360.0
        row360 = enc.transform([e1[0]]).X[0]
        assert np.array_equal(row0, row360, equal_nan=True)

    def test_unseen_camera_gets_zero_block(self):
        examples = self.build_examples(camera="cam1")
        enc = DayExampleEncoder().fit(examples)
        other = self.build_examples(camera="cam2")
        row = enc.transform([other[0]]).X[0]
        cam_cols = [i for i, c in enumerate(enc.columns_) if c.name.startswith("meta_camera_id=")]
        assert cam_cols and all(row[i] == 0.0 for i in cam_cols)

    def test_unseen_weather_code_gets_zero_block(self):
        examples = self.build_examples()
        enc = DayExampleEncoder().fit(examples)
        examples[0].features["now_weather_code"] = 99
        row = enc.transform([examples[0]]).X[0]
        code_cols = [i for i, c in enumerate(enc.columns_) if c.name.startswith("now_weather_code=")]
        assert code_cols and all(row[i] == 0.0 for i in code_cols)

    def test_missing_weather_is_nan(self):
        examples = self.build_examples()
        examples[0].features["now_cloud_cover_pct"] = None
        enc = DayExampleEncoder().fit(examples)
        row = enc.transform([examples[0]]).X[0]
        j = enc.columns_.index(next(c for c in enc.columns_ if c.name == "now_cloud_cover_pct"))
        assert math.isnan(row[j])

    def test_fingerprint_tracks_schema(self):
        examples = self.build_examples()
        m1 = DayExampleEncoder().fit_transform(examples)
        m2 = DayExampleEncoder().fit_transform(examples)
        assert m1.fingerprint() == m2.fingerprint()
        sub = m1.select({Modality.VISION})
        assert sub.fingerprint() != m1.fingerprint()

    def test_schema_record_round_trip(self):
        examples = self.build_examples()
        enc = DayExampleEncoder().fit(examples)
        clone = DayExampleEncoder.from_schema_record(enc.schema_record())
        a = enc.transform(examples).X
        b = clone.transform(examples).X
        assert np.array_equal(a, b, equal_nan=True)

    def test_select_by_modality(self):
        examples = self.build_examples()
        matrix = DayExampleEncoder().fit_transform(examples)
        vision = matrix.select({Modality.VISION})
        assert vision.width == 4
        assert all(c.modality is Modality.VISION for c in vision.columns)

    def test_group_ids_are_dates(self):
        examples = self.build_examples()
        matrix = DayExampleEncoder().fit_transform(examples)
        assert matrix.group_ids[0] == examples[0].key.day.isoformat()


class TestBuildDayExamples:
    def test_end_to_end_counts_and_targets(self):
        frames, weather = [], []
        for d in range(5):
            day = DAY + timedelta(days=d)
            cls = VisibilityClass.PERFECT if d in (0, 1, 4) else VisibilityClass.OBSCURED
            frames.append(frame_at(day, 0.0, cls))
            frames.append(frame_at(day, 0.5, cls))
            weather += [
                weather_at(day, h, lead=l) for h in (0.0, 0.5) for l in (0, 1, 2, 3)
            ]
        examples = build_day_examples(frames, weather, SITES)
        assert len(examples) == 5
        by_day = {ex.key.day: ex for ex in examples}
        assert [by_day[DAY + timedelta(days=d)].label_today for d in range(5)] == [1, 1, 0, 0, 1]
        # +1d target of day 0 equals day 1 label
        assert by_day[DAY].targets[1] == 1
        assert by_day[DAY + timedelta(days=4)].targets[1] is None
        t1 = target_vector(examples, 1)
        assert np.isnan(t1[-1])

    def test_unusable_frames_are_dropped(self):
        frames = [
            frame_at(DAY, 0.0, status=QcStatus.BAD_GRAY),
            frame_at(DAY, 0.5, status=QcStatus.DUPLICATE),
        ]
        assert build_day_examples(frames, [], SITES) == []

    def test_human_bad_label_excludes_frame(self):
        from scenicast.core import with_human_label

        good = frame_at(DAY, 0.5, VisibilityClass.OBSCURED)
        bad = with_human_label(frame_at(DAY, 0.0), VisibilityClass.BAD)
        examples = build_day_examples([bad, good], [], SITES)
        assert len(examples) == 1
        assert examples[0].visible_fraction == 0.0

    def test_leakage_audit_clean(self):
        frames = [frame_at(DAY, h) for h in (0.0, 1.0, 2.5, 5.0)]
        for kind in SnapshotKind:
            examples = build_day_examples(frames, [], SITES, snapshot_kind=kind)
            assert audit_leakage(examples) == []

    def test_leakage_audit_detects_late_window_frame(self):
        from scenicast.fusion import SnapshotProvenance
        from dataclasses import replace

        frames = [frame_at(DAY, 0.0), frame_at(DAY, 1.0)]
        [example] = build_day_examples(frames, [], SITES, snapshot_kind=SnapshotKind.MORNING_WINDOW)
        tampered = replace(
            example,
            provenance=SnapshotProvenance(example.provenance.frame_keys, 4 * 3600, False),
        )
        assert audit_leakage([tampered])
