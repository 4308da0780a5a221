"""Command-line surface for the near-field perception stack.

One binary with subcommands: simulate scenes, detect on frame
sequences, tabulate heights, sweep camera placements, generate
datasets, and evaluate decisions.  Exit codes are stable: 0 success,
1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from . import datagen, decision, frameio, simulator, stripe
from .geometry import CalibrationData, CalibrationError, load_calibration, save_calibration

__all__ = ["RunReport", "build_parser", "main"]

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Configuration or input problem; maps to exit code 2."""


@dataclass(frozen=True)
class RunReport:
    """Timing and outcome summary printed by frame-processing commands."""

    command: str
    config_digest: str
    frames: int
    triggered: int
    mean_ms: float
    median_ms: float
    p99_ms: float
    fps: float
    exit_status: int = 0

    def __post_init__(self):
        for name in ("mean_ms", "median_ms", "p99_ms", "fps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "frames": self.frames,
            "triggered": self.triggered,
            "mean_ms": round(self.mean_ms, 3),
            "median_ms": round(self.median_ms, 3),
            "p99_ms": round(self.p99_ms, 3),
            "fps": round(self.fps, 2),
            "exit_status": self.exit_status,
        }


def config_digest(config: dict) -> str:
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        )


def _load_calib(path: str | None) -> CalibrationData:
    if path is None:
        raise UsageError("--calib is required for this command")
    if not Path(path).is_file():
        raise UsageError(f"calibration file not found: {path}")
    try:
        return load_calibration(path)
    except (CalibrationError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load calibration {path}: {exc}")


def _pipeline_config(calib: CalibrationData, config_path: str | None) -> stripe.PipelineConfig:
    config = stripe.PipelineConfig.from_calibration(calib)
    if config_path is not None:
        raw = _load_json(config_path)
        known = {f for f in stripe.PipelineConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown pipeline config keys: {sorted(unknown)}")
        if isinstance(raw.get("grid"), dict):
            g = raw["grid"]
            raw["grid"] = stripe.RectifyGrid(
                x0_mm=float(g["x0_mm"]), x1_mm=float(g["x1_mm"]),
                y0_mm=float(g["y0_mm"]), y1_mm=float(g["y1_mm"]),
                pitch_mm=float(g.get("pitch_mm", 1.0)),
            )
        try:
            config = replace(config, **raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad pipeline config: {exc}")
    return config


def _baseline_from(
    calib: CalibrationData,
    config: stripe.PipelineConfig,
    baseline_path: str | None,
) -> stripe.StripeProfile:
    if baseline_path is not None:
        frames = list(frameio.iter_frames(baseline_path))
        pipeline = stripe.StripePipeline(calib, config)
        return pipeline.calibrate(frames)
    raw = calib.extras.get("baseline")
    if raw is None:
        raise UsageError(
            "no baseline: pass --baseline with empty-scene frames or use a "
            "calibration that embeds one"
        )
    return stripe.profile_from_dict(raw)


def _out_handle(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _write_rows(rows: list[dict], fmt: str, out: str | None) -> None:
    handle = _out_handle(out)
    try:
        if fmt == "json":
            json.dump(rows, handle, indent=2)
            handle.write("\n")
        else:
            if rows:
                writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
    finally:
        if handle is not sys.stdout:
            handle.close()


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args: argparse.Namespace) -> int:
    raw = _load_json(args.scene)
    window_specs = raw.pop("windows", [])
    try:
        scene, setup = simulator.scene_from_dict(raw), None
        if "setup" in raw:
            setup = simulator.setup_from_dict(raw["setup"])
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad scene {args.scene}: {exc}")
    setup = setup or simulator.DEFAULT_SETUP
    out = Path(args.out or "sim_out")
    frames_dir = out / "frames"
    gt_dir = out / "ground_truth"
    frames_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    windows = []
    for entry in window_specs:
        try:
            windows.append(
                simulator.ObstacleWindow(
                    obstacle=simulator.obstacle_from_dict(entry["obstacle"]),
                    start=int(entry["start"]),
                    stop=int(entry["stop"]),
                )
            )
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad obstacle window: {exc}")
    names = []
    for i, (frame, gt) in enumerate(
        simulator.render_sequence(
            scene, args.frames, seed=args.seed, fps=args.fps,
            windows=windows, setup=setup, with_stencil=False,
        )
    ):
        name = f"{i:05d}.png"
        frameio.write_image(frames_dir / name, frame.pixels)
        simulator.save_ground_truth(gt_dir / f"{i:05d}.json", gt)
        names.append(name)
    if args.calib:
        config = stripe.PipelineConfig()
        calib = simulator.make_calibration(setup, config)
        baseline_scene = replace(scene, obstacles=())
        pipeline = stripe.StripePipeline(calib, config)
        baseline_frames = [
            f for f, _ in simulator.render_sequence(
                baseline_scene, 3, seed=args.seed, fps=args.fps, setup=setup,
                with_stencil=False,
            )
        ]
        profile = pipeline.calibrate(baseline_frames)
        calib = CalibrationData(
            intrinsics=calib.intrinsics,
            rig=calib.rig,
            homography=calib.homography,
            extras={**calib.extras, "baseline": stripe.profile_to_dict(profile)},
        )
        save_calibration(calib, args.calib)
    manifest = {
        "scene": args.scene,
        "seed": args.seed,
        "fps": args.fps,
        "frames": names,
        "out": str(out),
        "calib": args.calib,
    }
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    cv2.setNumThreads(1)
    calib = _load_calib(args.calib)
    config = _pipeline_config(calib, args.config)
    baseline = _baseline_from(calib, config, args.baseline)
    pipeline = stripe.StripePipeline(calib, config, baseline=baseline)
    digest = config_digest(config.to_extras())

    if args.bench:
        frames = list(frameio.iter_frames(args.frames, fps=args.fps))
        if not frames:
            raise UsageError(f"no frames under {args.frames}")
        for frame in frames[: min(3, len(frames))]:
            pipeline.process(frame)
        pipeline.reset_temporal()
        events = []
        times = []
        for frame in frames:
            t0 = time.perf_counter()
            events.append(pipeline.process(frame))
            times.append((time.perf_counter() - t0) * 1000.0)
        if args.out:
            stripe.write_events_jsonl(args.out, events)
        triggered = sum(1 for e in events if e.triggered)
        median = statistics.median(times)
        report = RunReport(
            command="detect",
            config_digest=digest,
            frames=len(frames),
            triggered=triggered,
            mean_ms=statistics.fmean(times),
            median_ms=median,
            p99_ms=float(np.percentile(times, 99)),
            fps=1000.0 / median if median > 0 else 0.0,
        )
        print(json.dumps(report.to_dict(), indent=2))
        return 0

    # Streaming mode holds one frame at a time; temporal context lives
    # inside the pipeline's bounded window.
    handle = _out_handle(args.out)
    n = triggered = 0
    times = []
    try:
        for frame in frameio.iter_frames(args.frames, fps=args.fps):
            t0 = time.perf_counter()
            event = pipeline.process(frame)
            times.append((time.perf_counter() - t0) * 1000.0)
            handle.write(json.dumps(stripe.event_to_dict(event)) + "\n")
            n += 1
            triggered += int(event.triggered)
    finally:
        if handle is not sys.stdout:
            handle.close()
    if not times:
        raise UsageError(f"no frames under {args.frames}")
    median = statistics.median(times)
    report = RunReport(
        command="detect",
        config_digest=digest,
        frames=n,
        triggered=triggered,
        mean_ms=statistics.fmean(times),
        median_ms=median,
        p99_ms=float(np.percentile(times, 99)),
        fps=1000.0 / median if median > 0 else 0.0,
    )
    print(json.dumps(report.to_dict(), indent=2), file=sys.stderr if args.out is None else sys.stdout)
    return 0


def _cluster_heights(readings: list, split_mm: float = 25.0) -> list[dict]:
    """Group height readings into objects by position proximity."""
    valid = sorted(
        (r for r in readings if r.valid), key=lambda r: r.pos_mm
    )
    clusters: list[list] = []
    for reading in valid:
        if clusters and reading.pos_mm - clusters[-1][-1].pos_mm <= split_mm:
            clusters[-1].append(reading)
        else:
            clusters.append([reading])
    rows = []
    for i, cluster in enumerate(clusters):
        heights = [r.h_obj_mm for r in cluster]
        rows.append(
            {
                "object": i,
                "pos_mm": round(float(statistics.median(r.pos_mm for r in cluster)), 2),
                "columns": len(cluster),
                "predicted": round(float(statistics.median(heights)), 2),
            }
        )
    return rows


def cmd_height(args: argparse.Namespace) -> int:
    calib = _load_calib(args.calib)
    config = _pipeline_config(calib, args.config)
    baseline = _baseline_from(calib, config, args.baseline)
    pipeline = stripe.StripePipeline(calib, config, baseline=baseline)
    last = None
    for frame in frameio.iter_frames(args.frames, fps=args.fps):
        last = pipeline.process(frame)
    if last is None:
        raise UsageError(f"no frames under {args.frames}")
    rows = _cluster_heights(last.heights)
    rmse = None
    if args.truth:
        truth = [float(t) for t in args.truth.split(",")]
        if len(truth) != len(rows):
            raise UsageError(
                f"--truth lists {len(truth)} heights but {len(rows)} objects were found"
            )
        errors = []
        table = []
        for row, gt in zip(rows, truth):
            err = row["predicted"] - gt
            errors.append(err)
            table.append(
                {
                    "object": row["object"],
                    "ground_truth": gt,
                    "predicted": row["predicted"],
                    "error": round(err, 2),
                }
            )
        rows = table
        rmse = float(np.sqrt(np.mean(np.square(errors)))) if errors else 0.0
    _write_rows(rows, args.format, args.out)
    summary = {"objects": len(rows)}
    if rmse is not None:
        summary["rmse_mm"] = round(rmse, 3)
    print(json.dumps(summary), file=sys.stderr if args.out is None else sys.stdout)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = _load_json(args.scene)
    try:
        scene, setup = simulator.scene_from_dict(raw), None
        if "setup" in raw:
            setup = simulator.setup_from_dict(raw["setup"])
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad scene {args.scene}: {exc}")
    if not scene.obstacles:
        raise UsageError("sweep scene needs at least one obstacle")
    heights = [float(h) for h in args.heights.split(",") if h.strip()]
    if len(heights) < 2:
        raise UsageError("sweep needs at least 2 camera heights")
    setup = setup or simulator.DEFAULT_SETUP
    rest = replace(scene, obstacles=scene.obstacles[1:])
    samples = simulator.placement_sweep(
        scene.obstacles[0], heights, setup=setup,
        scene=rest if rest.obstacles else None, seed=args.seed,
    )
    rows = [
        {
            "h_cam_mm": s.h_cam_mm,
            "mean_shift_px": round(s.mean_shift_px, 3),
            "spread_px": round(s.spread_px, 3),
            "rectified_shift_mm": round(s.rectified_shift_mm, 3),
            "n_rows": s.n_rows,
        }
        for s in samples
    ]
    _write_rows(rows, args.format, args.out)
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    raw = _load_json(args.config) if args.config else {}
    try:
        config = datagen.DatasetConfig.from_dict(raw)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.count is not None:
            splits = raw.get("splits")
            if splits is None:
                train = args.count - 2 * (args.count // 10)
                rest = args.count // 10
                splits = (train, rest, args.count - train - rest)
            config = replace(config, count=args.count, splits=tuple(splits))
    except ValueError as exc:
        raise UsageError(f"bad dataset config: {exc}")
    assets = Path(args.assets)
    if args.starter_assets and not (assets / "cutouts").is_dir():
        datagen.make_starter_assets(assets, seed=config.seed)
    try:
        manifest = datagen.generate_dataset(config, assets, args.out or "dataset")
    except datagen.DatagenError as exc:
        raise UsageError(str(exc))
    by_split: dict[str, int] = {}
    for entry in manifest["images"]:
        by_split[entry["split"]] = by_split.get(entry["split"], 0) + 1
    print(
        json.dumps(
            {
                "images": len(manifest["images"]),
                "splits": by_split,
                "out": str(args.out or "dataset"),
                "config_digest": config_digest(config.to_dict()),
            },
            indent=2,
        )
    )
    return 0


def cmd_decide(args: argparse.Namespace) -> int:
    table = decision.DEFAULT_TABLE
    if args.table:
        try:
            table = decision.load_action_table(args.table)
        except (ValueError, OSError) as exc:
            raise UsageError(f"bad action table: {exc}")
    if not Path(args.events).is_file():
        raise UsageError(f"events file not found: {args.events}")
    if args.tier3:
        if args.mm_per_unit is None:
            raise UsageError("--mm-per-unit is required with --tier3")
        try:
            events = datagen.detections_to_events(
                args.events, mm_per_unit=args.mm_per_unit, zone=args.zone
            )
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad detections: {exc}")
    else:
        events = []
        with open(args.events, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise UsageError(f"{args.events}:{ln}: invalid JSON: {exc.msg}")
                events.extend(decision.perception_to_events(record, zone=args.zone))
    records = [decision.decision_record(e, table, args.policy) for e in events]
    fmt = args.format
    handle = _out_handle(args.out)
    try:
        if fmt == "csv":
            if records:
                writer = csv.DictWriter(handle, fieldnames=list(records[0]))
                writer.writeheader()
                writer.writerows(records)
        else:
            for record in records:
                handle.write(json.dumps(record) + "\n")
    finally:
        if handle is not sys.stdout:
            handle.close()
    overall = decision.aggregate(
        decision.Action(r["action"]) for r in records
    )
    print(
        json.dumps({"events": len(records), "aggregate": overall.value}),
        file=sys.stderr if args.out is None else sys.stdout,
    )
    return 0


# --------------------------------------------------------------------------
# Parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearfield",
        description="Near-field stripe perception: simulate, detect, decide.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="render a scene to frames plus ground truth")
    sim.add_argument("--scene", required=True, help="scene JSON file")
    sim.add_argument("--calib", help="write a matching calibration (with baseline) here")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", help="output directory (default sim_out)")
    sim.add_argument("--frames", type=int, default=10, help="number of frames")
    sim.add_argument("--fps", type=float, default=50.0)
    sim.set_defaults(func=cmd_simulate)

    det = sub.add_parser("detect", help="run the stripe pipeline over a frame sequence")
    det.add_argument("--frames", required=True, help="frame directory or single image")
    det.add_argument("--calib", help="calibration JSON")
    det.add_argument("--config", help="pipeline config JSON overriding calibration extras")
    det.add_argument("--baseline", help="empty-scene frames for baseline capture")
    det.add_argument("--out", help="events JSON-lines output path")
    det.add_argument("--fps", type=float, default=50.0)
    det.add_argument("--bench", action="store_true", help="preload frames and report timing")
    det.set_defaults(func=cmd_detect)

    hgt = sub.add_parser("height", help="tabulate object heights from the last frame")
    hgt.add_argument("--frames", required=True)
    hgt.add_argument("--calib", help="calibration JSON")
    hgt.add_argument("--config", help="pipeline config JSON")
    hgt.add_argument("--baseline", help="empty-scene frames for baseline capture")
    hgt.add_argument("--truth", help="comma-separated ground-truth heights, in y order")
    hgt.add_argument("--format", choices=("json", "csv"), default="csv")
    hgt.add_argument("--out")
    hgt.add_argument("--fps", type=float, default=50.0)
    hgt.set_defaults(func=cmd_height)

    swp = sub.add_parser("sweep", help="stripe shift across camera mounting heights")
    swp.add_argument("--scene", required=True, help="scene JSON with the probe obstacle")
    swp.add_argument("--heights", required=True, help="comma-separated camera heights (mm)")
    swp.add_argument("--seed", type=int, default=0)
    swp.add_argument("--format", choices=("json", "csv"), default="csv")
    swp.add_argument("--out")
    swp.set_defaults(func=cmd_sweep)

    gen = sub.add_parser("gen", help="generate a synthetic detection dataset")
    gen.add_argument("--config", help="dataset config JSON")
    gen.add_argument("--assets", required=True, help="asset tree (cutouts/, backgrounds/)")
    gen.add_argument("--out", help="dataset output directory")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--count", type=int, help="override image count (splits rescaled)")
    gen.add_argument(
        "--starter-assets", action="store_true",
        help="write the procedural starter assets if the tree is missing",
    )
    gen.set_defaults(func=cmd_gen)

    dec = sub.add_parser("decide", help="map perception or detector events to actions")
    dec.add_argument("--events", required=True, help="JSON-lines events file")
    dec.add_argument("--table", help="action table JSON")
    dec.add_argument("--zone", default="B", choices=list(decision.ZONE_LABELS))
    dec.add_argument(
        "--policy", default="conservative", choices=("conservative", "reroute-first")
    )
    dec.add_argument("--tier3", action="store_true", help="events are detector output")
    dec.add_argument("--mm-per-unit", type=float, help="box-to-mm scale for --tier3")
    dec.add_argument("--format", choices=("json", "csv"), default="json")
    dec.add_argument("--out")
    dec.set_defaults(func=cmd_decide)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("NEARFIELD_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except BrokenPipeError:
        # Downstream consumer (head, less) closed stdout; not our failure.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except Exception as exc:
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
