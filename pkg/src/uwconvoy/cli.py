"""Command-line front end binding the toolkit into runnable tools.

Subcommands: ``eval`` (score prediction files against annotations), ``sim``
(closed-loop convoy run, trace CSV plus optional PGM footage), ``mdpm``
(periodic-motion detection over a frame directory, emitting a prediction
file), and ``servo-sim`` (convoy run plus a tracking-error summary).

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, fileio
from .mdpm import MdpmTracker
from .sim import FootageScene, run_convoy, render_trace_frames, trace_annotations

USAGE_ERROR = 1
DATA_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwconvoy",
        description="Tracking-by-detection convoy toolkit",
    )
    sub = parser.add_subparsers(dest="command")

    p_eval = sub.add_parser("eval", help="score predictions against annotations")
    p_eval.add_argument("--annotations", required=True)
    p_eval.add_argument("--predictions", required=True)
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--threshold", type=float)
    group.add_argument("--auto-threshold", action="store_true")
    p_eval.add_argument("--fps", type=float, help="sequence frame rate for track statistics")
    p_eval.add_argument("--report-dir", help="write CSV reports into this directory")

    p_sim = sub.add_parser("sim", help="run the convoy simulation")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True, help="trace CSV path")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.add_argument("--frames-out", help="also render PGM footage into this directory")
    p_sim.add_argument(
        "--annotations-out",
        help="write ground-truth annotations aligned with the rendered frames",
    )

    p_mdpm = sub.add_parser("mdpm", help="detect periodic motion over a frame directory")
    p_mdpm.add_argument("--frames", required=True, help="directory of PGM frames")
    p_mdpm.add_argument("--fps", type=float, required=True)
    p_mdpm.add_argument("--out", required=True, help="prediction CSV path")

    p_servo = sub.add_parser("servo-sim", help="convoy run with a servo error summary")
    p_servo.add_argument("--config", required=True)
    p_servo.add_argument("--out", required=True, help="trace CSV path")
    return parser


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise fileio.DataFormatError(f"cannot read {path}: {exc}") from None


def _cmd_eval(args) -> int:
    annotations = fileio.parse_annotations(_read_text(args.annotations))
    predictions = fileio.parse_predictions(_read_text(args.predictions))
    if args.auto_threshold:
        threshold = evaluation.select_threshold(annotations, predictions)
        print(f"selected threshold: {threshold:.6f}")
    else:
        threshold = args.threshold
    results = evaluation.classify_frames(annotations, predictions, threshold)
    report = evaluation.metrics_summary(results)
    tracks = evaluation.track_statistics(results, args.fps) if args.fps else None
    sys.stdout.write(fileio.format_metrics_text(report, tracks))
    if args.report_dir:
        out = Path(args.report_dir)
        out.mkdir(parents=True, exist_ok=True)
        hist = evaluation.histogram_report(results)
        (out / "metrics.csv").write_text(fileio.format_metrics_csv(report))
        (out / "area_histogram.csv").write_text(fileio.format_area_histogram_csv(hist))
        (out / "center_bias.csv").write_text(fileio.format_bias_histogram_csv(hist))
        (out / "negative_runs.csv").write_text(fileio.format_runs_histogram_csv(hist))
    return 0


def _load_config(args) -> fileio.ToolConfig:
    config = fileio.parse_config(_read_text(args.config))
    if getattr(args, "seed", None) is not None:
        config.convoy = replace(config.convoy, seed=args.seed)
    return config


def _cmd_sim(args) -> int:
    config = _load_config(args)
    trace = run_convoy(config.convoy)
    Path(args.out).write_text(fileio.format_trace_csv(trace))
    if args.frames_out:
        render_rng = np.random.default_rng(
            np.random.SeedSequence(config.convoy.seed).spawn(2)[1]
        )
        scene = FootageScene(
            camera=config.convoy.camera,
            target=config.convoy.target,
            rng=render_rng,
        )
        frames = render_trace_frames(trace, scene, config.frame_rate)
        fileio.write_frame_dir(frames, args.frames_out)
    if args.annotations_out:
        annotations = trace_annotations(trace, config.frame_rate)
        Path(args.annotations_out).write_text(fileio.format_annotations(annotations))
    return 0


def _cmd_mdpm(args) -> int:
    frames = fileio.load_frame_dir(args.frames, args.fps)
    tracker = MdpmTracker()
    rows = []
    for i, frame in enumerate(frames):
        detection = tracker.push(frame)
        rows.append((i, detection.bbox if detection is not None else None))
    Path(args.out).write_text(fileio.format_predictions(rows))
    return 0


def _cmd_servo_sim(args) -> int:
    config = _load_config(args)
    trace = run_convoy(config.convoy)
    Path(args.out).write_text(fileio.format_trace_csv(trace))
    desired = config.convoy.servo.desired_area
    tail = [r for r in trace.records if r.t >= trace.records[-1].t / 2 and r.true_box]
    if tail:
        dx = [abs(r.true_box.x + r.true_box.w / 2 - 0.5) for r in tail]
        dy = [abs(r.true_box.y + r.true_box.h / 2 - 0.5) for r in tail]
        da = [abs(r.true_box.w * r.true_box.h - desired) / desired for r in tail]
        print(f"final-half ticks with target visible: {len(tail)}")
        print(f"|dx|  mean {np.mean(dx):.4f}  max {np.max(dx):.4f}")
        print(f"|dy|  mean {np.mean(dy):.4f}  max {np.max(dy):.4f}")
        print(f"area error/desired  mean {np.mean(da):.4f}  max {np.max(da):.4f}")
    else:
        print("target never visible in the final half of the run")
    return 0


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help; map usage failures to exit code 1
        return 0 if exc.code == 0 else USAGE_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    handler = {
        "eval": _cmd_eval,
        "sim": _cmd_sim,
        "mdpm": _cmd_mdpm,
        "servo-sim": _cmd_servo_sim,
    }[args.command]
    try:
        return handler(args)
    except (fileio.DataFormatError, evaluation.ThresholdNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(run_cli())
