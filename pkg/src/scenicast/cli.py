"""Command-line entry point driving the full pipeline.

Subcommands: collect, qc, label-export, fuse, train, evaluate, report,
predict, synth, serve.  Exit codes: 0 success, 1 user error, 2 internal
error.  Every run appends a machine-readable line to ``logs/runs.jsonl``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import traceback
from dataclasses import asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .boosting import predict_row
from .config import CliConfig, build_config
from .core import (
    VisibilityClass,
    parse_rfc3339,
    rfc3339,
)
from .errors import ConfigError, ScenicastError
from .evaluation import (
    ExperimentConfig,
    Variant,
    render_results_text,
    render_windowing_text,
    run_experiment,
    variant_modalities,
    write_folds_csv,
    write_importance_csv,
    write_results_csv,
    write_windowing_csv,
)
from .fusion import (
    SnapshotKind,
    audit_leakage,
    export_matrix_csv,
    export_provenance,
    export_schema_csv,
    export_targets_csv,
)
from .ingest import (
    CollectorDeps,
    DropDirectory,
    FixtureWeatherSource,
    LiveWeatherSource,
    run_tick,
)
from .pipeline import (
    SNAPSHOT_DIRS,
    build_dataset,
    find_model,
    frame_store,
    label_events,
    load_effective_frames,
    load_pipeline_model,
    load_sites,
    model_path,
    qc_log,
    jobs_log,
    runs_log,
    save_pipeline_model,
    save_sites,
    train_pipeline_model,
    weather_store,
)
from .quality import run_qc
from .synth import synth_generate, write_frame_images


class UserError(ScenicastError):
    """Input problem the operator can fix; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise SystemExit_(1, f"error: {message}")


class SystemExit_(Exception):
    def __init__(self, code, message=""):
        super().__init__(message)
        self.code = code
        self.message = message


SNAPSHOT_CHOICES = {
    "first": (SnapshotKind.FIRST_FRAME,),
    "window": (SnapshotKind.MORNING_WINDOW,),
    "both": (SnapshotKind.FIRST_FRAME, SnapshotKind.MORNING_WINDOW),
}
VARIANT_CHOICES = {
    "yolo": Variant.YOLO_ONLY,
    "weather": Variant.WEATHER_ONLY,
    "fusion": Variant.FUSION,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--data-root", type=Path, dest="data_root")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--trees", type=int, dest="num_trees")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--max-leaves", type=int, dest="max_leaves")
    parser.add_argument("--min-child-samples", type=int, dest="min_child_samples")
    parser.add_argument("--lambda-l2", type=float, dest="lambda_l2")
    parser.add_argument("--k-folds", type=int, dest="k_folds")
    parser.add_argument("--weather-mode", choices=("fixture", "live"), dest="weather_mode")
    parser.add_argument("--fixture-dir", type=Path, dest="fixture_dir")
    parser.add_argument("--grayness-threshold", type=float, dest="grayness_threshold")


def build_parser() -> _Parser:
    parser = _Parser(prog="scenicast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"scenicast {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[], help="generate the synthetic oracle dataset")
    _add_common(p)
    p.add_argument("--days", type=int, default=120)
    p.add_argument("--cameras", type=int, default=6)
    p.add_argument("--frames-per-day", type=int, default=8)
    p.add_argument("--vision-noise", type=float, default=0.05)
    p.add_argument("--weather-noise", type=float, default=0.35)
    p.add_argument("--forecast-noise-base", type=float, default=0.33)
    p.add_argument("--forecast-noise-slope", type=float, default=0.17)
    p.add_argument("--write-images", action="store_true")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("collect", help="run scheduler ticks over a time range")
    _add_common(p)
    p.add_argument("--from", dest="from_ts", required=True, help="RFC 3339 start")
    p.add_argument("--to", dest="to_ts", required=True, help="RFC 3339 end (inclusive)")
    p.add_argument("--drop-dir", type=Path, help="frame drop directory")
    p.set_defaults(handler=cmd_collect)

    p = sub.add_parser("qc", help="run quality control over ingested frames")
    _add_common(p)
    p.add_argument("--camera", help="restrict to one camera")
    p.add_argument("--read-images", action="store_true", help="decode pixels from disk")
    p.set_defaults(handler=cmd_qc)

    p = sub.add_parser("label-export", help="export human label history as CSV")
    _add_common(p)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_label_export)

    p = sub.add_parser("fuse", help="build fused day examples and matrices")
    _add_common(p)
    p.add_argument("--snapshot", choices=sorted(SNAPSHOT_CHOICES), default="both")
    p.add_argument("--horizons", default="0,1,2,3")
    p.add_argument("--gold-labels", action="store_true", help="label days from human labels")
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("train", help="fit one model")
    _add_common(p)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_CHOICES), default="fusion")
    p.add_argument("--snapshot", choices=("first", "window"), default="first")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="run the full experiment grid")
    _add_common(p)
    p.add_argument("--snapshot", choices=sorted(SNAPSHOT_CHOICES), default="both")
    p.add_argument("--horizons", default="0,1,2,3")
    p.add_argument("--variants", default="yolo,weather,fusion")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="render tables and class distribution")
    _add_common(p)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("predict", help="predict visibility for one camera")
    _add_common(p)
    p.add_argument("--camera", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--model", type=Path, help="explicit model file")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("serve", help="start the labeling/prediction HTTP service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)

    return parser


def _config_from(args) -> CliConfig:
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "data_root", "seed", "theta", "num_trees", "learning_rate", "max_leaves",
            "min_child_samples", "lambda_l2", "k_folds", "weather_mode", "fixture_dir",
            "grayness_threshold",
        )
    }
    return build_config(getattr(args, "config", None), overrides)


def _config_digest(config: CliConfig) -> str:
    blob = json.dumps({k: str(v) for k, v in asdict(config).items()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit_ as exc:
        print(exc.message, file=sys.stderr)
        return exc.code
    if not getattr(args, "command", None):
        parser.print_help()
        return 1

    started = time.monotonic()
    exit_code = 0
    config = None
    try:
        config = _config_from(args)
        exit_code = args.handler(args, config) or 0
    except SystemExit_ as exc:
        print(exc.message, file=sys.stderr)
        exit_code = exc.code
    except (UserError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        exit_code = 1
    except Exception:
        traceback.print_exc()
        exit_code = 2
    finally:
        if config is not None:
            try:
                runs_log(config.data_root).append(
                    {
                        "command": getattr(args, "command", ""),
                        "config_digest": _config_digest(config),
                        "seed": config.seed,
                        "started_at": rfc3339(datetime.now(timezone.utc)),
                        "duration_s": round(time.monotonic() - started, 3),
                        "exit_code": exit_code,
                    }
                )
            except OSError:
                pass
    return exit_code


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

def cmd_synth(args, config: CliConfig) -> int:
    dataset = synth_generate(
        n_cameras=args.cameras,
        n_days=args.days,
        seed=config.seed,
        frames_per_day=args.frames_per_day,
        vision_noise=args.vision_noise,
        weather_noise=args.weather_noise,
        forecast_noise_base=args.forecast_noise_base,
        forecast_noise_slope=args.forecast_noise_slope,
    )
    root = config.data_root
    save_sites(root, dataset.sites)
    n_frames = frame_store(root).append(dataset.frames)
    n_weather = weather_store(root).append(dataset.weather)
    gold_path = root / "gold_labels.csv"
    gold_path.parent.mkdir(parents=True, exist_ok=True)
    with open(gold_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["camera_id", "date", "visible"])
        for key in sorted(dataset.gold_labels):
            writer.writerow([key.camera_id, key.day.isoformat(), dataset.gold_labels[key]])
    if args.write_images:
        n_images = write_frame_images(dataset, root)
        print(f"wrote {n_images} frame images")
    print(
        f"synth: {len(dataset.sites)} cameras, {args.days} days -> "
        f"{n_frames} frames, {n_weather} weather records appended"
    )
    return 0


def cmd_collect(args, config: CliConfig) -> int:
    sites = load_sites(config.data_root)
    if not sites:
        raise UserError("no cameras registered; create cameras.jsonl first")
    try:
        start = parse_rfc3339(args.from_ts)
        end = parse_rfc3339(args.to_ts)
    except ValueError as exc:
        raise UserError(f"bad timestamp: {exc}") from exc
    if end < start:
        raise UserError("--to must not precede --from")

    if config.weather_mode == "live":
        transport = LiveWeatherSource()
    else:
        transport = FixtureWeatherSource(config.fixtures)
    deps = CollectorDeps(
        sites=sites,
        transport=transport,
        frame_repo=frame_store(config.data_root),
        weather_repo=weather_store(config.data_root),
        drop_dir=DropDirectory(args.drop_dir) if args.drop_dir else None,
        job_log=jobs_log(config.data_root),
        sleeper=(lambda s: None) if config.weather_mode == "fixture" else time.sleep,
    )
    appended = 0
    ticks = 0
    tick = start
    while tick <= end:
        appended += run_tick(tick, deps)
        ticks += 1
        tick = tick + timedelta(minutes=30)
    print(f"collect: {ticks} ticks, {appended} records appended")
    return 0


def cmd_qc(args, config: CliConfig) -> int:
    frames = list(frame_store(config.data_root).iter_all(args.camera))
    if not frames:
        raise UserError("no frames ingested")
    frames.sort(key=lambda f: (f.camera_id, f.captured_at))
    reports = run_qc(
        frames,
        image_root=config.data_root if args.read_images else None,
        threshold=config.grayness_threshold,
        qc_log=qc_log(config.data_root),
    )
    counts = {}
    for rep in reports:
        counts[rep.verdict.value] = counts.get(rep.verdict.value, 0) + 1
    print("qc: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return 0


def cmd_label_export(args, config: CliConfig) -> int:
    events = label_events(config.data_root)
    out = args.out or config.data_root / "reports" / "labels_export.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["camera_id", "captured_at", "kind", "label", "annotator", "submitted_at"])
        for ev in events:
            writer.writerow(
                [
                    ev["camera_id"], ev["captured_at"], ev.get("kind", "label"),
                    ev.get("label", ""), ev.get("annotator", ""), ev.get("submitted_at", ""),
                ]
            )
    print(f"label-export: {len(events)} events -> {out}")
    return 0


def _parse_horizons(text: str):
    try:
        horizons = tuple(sorted({int(part) for part in text.split(",") if part.strip() != ""}))
    except ValueError as exc:
        raise UserError(f"bad horizon list {text!r}") from exc
    if not horizons or any(h not in (0, 1, 2, 3) for h in horizons):
        raise UserError("horizons must be a subset of 0,1,2,3")
    return horizons


def cmd_fuse(args, config: CliConfig) -> int:
    horizons = _parse_horizons(args.horizons)
    built_any = False
    for kind in SNAPSHOT_CHOICES[args.snapshot]:
        examples, encoder, matrix, targets = build_dataset(
            config.data_root,
            kind,
            theta=config.theta,
            horizons=horizons,
            use_human_labels=args.gold_labels,
        )
        if not examples:
            continue
        built_any = True
        out_dir = config.data_root / "fused" / SNAPSHOT_DIRS[kind]
        out_dir.mkdir(parents=True, exist_ok=True)
        export_matrix_csv(matrix, out_dir / "matrix.csv")
        export_schema_csv(matrix, out_dir / "schema.csv")
        export_targets_csv(examples, out_dir / "targets.csv", horizons)
        export_provenance(examples, out_dir / "provenance.jsonl")
        violations = audit_leakage(examples)
        if violations:
            print(f"WARNING: {len(violations)} leakage violations", file=sys.stderr)
        print(
            f"fuse[{SNAPSHOT_DIRS[kind]}]: {len(examples)} day examples, "
            f"width {matrix.width} -> {out_dir}"
        )
    if not built_any:
        raise UserError("no usable frames")
    return 0


def cmd_train(args, config: CliConfig) -> int:
    kind = SNAPSHOT_CHOICES[args.snapshot][0]
    variant = VARIANT_CHOICES[args.variant]
    examples, encoder, matrix, targets = build_dataset(
        config.data_root, kind, theta=config.theta
    )
    if not examples:
        raise UserError("no usable frames")
    sub = matrix.select(variant_modalities(variant, config.include_meta))
    sub_encoder_schema = [
        {"name": c.name, "modality": c.modality.value, "encoding": c.encoding}
        for c in sub.columns
    ]
    from .fusion import DayExampleEncoder

    sub_encoder = DayExampleEncoder.from_schema_record(sub_encoder_schema)
    try:
        model = train_pipeline_model(
            sub,
            targets[args.horizon],
            config.gbdt_params(),
            encoder=sub_encoder,
            horizon=args.horizon,
            variant=variant.value,
            theta=config.theta,
        )
    except (KeyError, ValueError) as exc:
        raise UserError(str(exc)) from exc
    path = model_path(config.data_root, args.horizon, variant.value, kind)
    save_pipeline_model(model, path)
    print(f"train: {len(model.trees)} trees on {model.meta['n_rows']} rows -> {path}")
    return 0


def cmd_evaluate(args, config: CliConfig) -> int:
    horizons = _parse_horizons(args.horizons)
    try:
        variants = tuple(VARIANT_CHOICES[v.strip()] for v in args.variants.split(","))
    except KeyError as exc:
        raise UserError(f"unknown variant {exc}") from exc

    datasets = {}
    for kind in SNAPSHOT_CHOICES[args.snapshot]:
        examples, _, matrix, targets = build_dataset(
            config.data_root, kind, theta=config.theta, horizons=horizons
        )
        if examples:
            datasets[kind] = (matrix, targets)
    if not datasets:
        raise UserError("no usable frames")

    exp_config = ExperimentConfig(
        variants=variants,
        horizons=horizons,
        k_folds=config.k_folds,
        seed=config.seed,
        theta=config.theta,
        include_meta=config.include_meta,
        params=config.gbdt_params(),
    )
    result = run_experiment(datasets, exp_config)

    reports_dir = config.data_root / "reports"
    importance_dir = reports_dir / "importance"
    importance_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(result, reports_dir / "results.csv")
    write_folds_csv(result, reports_dir / "folds.csv")
    text = render_results_text(result)
    (reports_dir / "results.txt").write_text(text, encoding="utf-8")
    if result.windowing:
        write_windowing_csv(result, reports_dir / "windowing.csv")
        (reports_dir / "windowing.txt").write_text(
            render_windowing_text(result), encoding="utf-8"
        )
    for cell in result.cells:
        name = f"h{cell.horizon}_{cell.variant.value.lower()}_{SNAPSHOT_DIRS[cell.snapshot_kind]}.csv"
        write_importance_csv(cell, importance_dir / name)
    print(text)
    print(f"evaluate: {len(result.cells)} cells -> {reports_dir}")
    return 0


def cmd_report(args, config: CliConfig) -> int:
    reports_dir = config.data_root / "reports"
    results_txt = reports_dir / "results.txt"
    if results_txt.exists():
        print(results_txt.read_text(encoding="utf-8"))
    windowing_txt = reports_dir / "windowing.txt"
    if windowing_txt.exists():
        print(windowing_txt.read_text(encoding="utf-8"))

    frames = load_effective_frames(config.data_root)
    if not frames:
        raise UserError("no frames ingested")
    labeled = [f.human_label for f in frames if f.human_label is not None]
    source = "human"
    if labeled:
        classes = labeled
    else:
        source = "vision-argmax"
        classes = [
            f.vision_probs.argmax_class() for f in frames if f.vision_probs is not None
        ]
    counts = {cls: 0 for cls in VisibilityClass}
    for c in classes:
        counts[c] += 1
    total = max(sum(counts.values()), 1)
    reports_dir.mkdir(parents=True, exist_ok=True)
    dist_path = reports_dir / "class_distribution.csv"
    with open(dist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "count", "fraction"])
        for cls in VisibilityClass:
            writer.writerow([cls.name, counts[cls], f"{counts[cls] / total:.6f}"])
    print(f"class distribution ({source} labels, {total} frames):")
    for cls in VisibilityClass:
        print(f"  {cls.name:<9} {counts[cls]:>7}  {counts[cls] / total:.3f}")
    print(f"report: -> {dist_path}")
    return 0


def cmd_predict(args, config: CliConfig) -> int:
    if args.horizon not in (0, 1, 2, 3):
        raise UserError("horizon must be in 0..3")
    path = args.model or find_model(config.data_root, args.horizon)
    if path is None or not Path(path).exists():
        raise UserError(f"no trained model for horizon +{args.horizon}d; run train first")
    model, encoder = load_pipeline_model(path)
    kind = SnapshotKind(model.meta.get("snapshot_kind", "FIRST_FRAME"))

    from .pipeline import latest_example_for

    example = latest_example_for(
        config.data_root, args.camera, kind, theta=float(model.meta.get("theta", 0.5))
    )
    if example is None:
        raise UserError(f"no usable data for camera {args.camera}")
    row = encoder.transform([example]).X[0]
    prob = predict_row(model, row)
    decision = int(prob >= 0.5)
    missing = int(np.isnan(row).sum())
    print(
        json.dumps(
            {
                "camera_id": args.camera,
                "date": example.key.day.isoformat(),
                "horizon": args.horizon,
                "probability": round(prob, 6),
                "decision": decision,
                "snapshot_kind": kind.value,
                "model": str(path),
                "fallback_snapshot": bool(example.provenance.fallback),
                "missing_features": missing,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_serve(args, config: CliConfig) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(config.data_root)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
