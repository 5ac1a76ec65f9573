"""File formats: annotation/prediction CSV, plain-text config, PGM frames,
trace CSV, and report rendering.

All files use normalized coordinates and 6-decimal float formatting, so a
parse -> write round trip is byte-stable. Every parse error names the line
it came from.
"""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import HistogramReport, MetricsReport, TrackStats
from .geometry import Annotation, BoundingBox, IntensityGrid
from .mdpm import MdpmConfig
from .servo import ServoConfig
from .sim import (
    CameraModel,
    ConvoyConfig,
    DetectorNoise,
    Pose,
    SimTrace,
    TargetModel,
    TrajectoryScript,
    depth_script,
    forward_script,
    turn_script,
)

ANNOTATION_HEADER = "frame,present,x,y,w,h"
PREDICTION_HEADER = "frame,confidence,x,y,w,h"


class DataFormatError(ValueError):
    """Malformed input file; the message carries the line number."""


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _fmt_opt(v: float | None) -> str:
    return "" if v is None else _fmt(v)


# ---------------------------------------------------------------------------
# annotations

def format_annotations(annotations: Sequence[Annotation]) -> str:
    lines = [ANNOTATION_HEADER]
    for ann in annotations:
        if ann.present:
            b = ann.truth_box
            lines.append(
                f"{ann.frame_index},1,{_fmt(b.x)},{_fmt(b.y)},{_fmt(b.w)},{_fmt(b.h)}"
            )
        else:
            lines.append(f"{ann.frame_index},0,,,,")
    return "\n".join(lines) + "\n"


def _split_row(line: str, line_no: int, n_fields: int) -> list[str]:
    parts = line.split(",")
    if len(parts) != n_fields:
        raise DataFormatError(
            f"line {line_no}: expected {n_fields} fields, got {len(parts)}"
        )
    return parts


def _parse_float(raw: str, line_no: int, name: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise DataFormatError(f"line {line_no}: field {name} is not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"line {line_no}: field {name} is not finite")
    return v


def _parse_box(parts: list[str], line_no: int, confidence: float) -> BoundingBox:
    vals = [_parse_float(raw, line_no, name) for raw, name in zip(parts, "xywh")]
    try:
        return BoundingBox(*vals, p=confidence)
    except ValueError as exc:
        raise DataFormatError(f"line {line_no}: {exc}") from None


def parse_annotations(text: str) -> list[Annotation]:
    """Parse an annotation file; frames must be strictly increasing."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != ANNOTATION_HEADER:
        raise DataFormatError(f"line 1: expected header {ANNOTATION_HEADER!r}")
    annotations = []
    prev_frame = -1
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = _split_row(line, line_no, 6)
        try:
            frame = int(parts[0])
        except ValueError:
            raise DataFormatError(f"line {line_no}: bad frame index {parts[0]!r}") from None
        if frame <= prev_frame:
            raise DataFormatError(
                f"line {line_no}: frame {frame} not after frame {prev_frame}"
            )
        prev_frame = frame
        if parts[1] == "1":
            box = _parse_box(parts[2:6], line_no, confidence=1.0)
            annotations.append(Annotation(frame, True, box))
        elif parts[1] == "0":
            if any(p.strip() for p in parts[2:6]):
                raise DataFormatError(
                    f"line {line_no}: absent frame must leave box fields empty"
                )
            annotations.append(Annotation(frame, False))
        else:
            raise DataFormatError(
                f"line {line_no}: present flag must be 0 or 1, got {parts[1]!r}"
            )
    return annotations


# ---------------------------------------------------------------------------
# predictions

def format_predictions(predictions: Sequence[tuple[int, BoundingBox | None]]) -> str:
    lines = [PREDICTION_HEADER]
    for frame, box in predictions:
        if box is None:
            lines.append(f"{frame},{_fmt(0.0)},,,,")
        else:
            lines.append(
                f"{frame},{_fmt(box.p)},{_fmt(box.x)},{_fmt(box.y)},{_fmt(box.w)},{_fmt(box.h)}"
            )
    return "\n".join(lines) + "\n"


def parse_predictions(text: str) -> list[tuple[int, BoundingBox | None]]:
    """Parse a prediction file into (frame, optional box) pairs.

    The parsed box carries the row's confidence in its p field.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != PREDICTION_HEADER:
        raise DataFormatError(f"line 1: expected header {PREDICTION_HEADER!r}")
    predictions: list[tuple[int, BoundingBox | None]] = []
    prev_frame = -1
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = _split_row(line, line_no, 6)
        try:
            frame = int(parts[0])
        except ValueError:
            raise DataFormatError(f"line {line_no}: bad frame index {parts[0]!r}") from None
        if frame <= prev_frame:
            raise DataFormatError(
                f"line {line_no}: frame {frame} not after frame {prev_frame}"
            )
        prev_frame = frame
        confidence = _parse_float(parts[1], line_no, "confidence")
        if not 0.0 <= confidence <= 1.0:
            raise DataFormatError(
                f"line {line_no}: confidence {confidence} outside [0,1]"
            )
        if any(p.strip() for p in parts[2:6]):
            box = _parse_box(parts[2:6], line_no, confidence)
            predictions.append((frame, box))
        else:
            predictions.append((frame, None))
    return predictions


# ---------------------------------------------------------------------------
# config files

def _parse_occlusions(raw: str, line_no: int) -> tuple[tuple[float, float], ...]:
    intervals = []
    for chunk in raw.split(","):
        m = re.fullmatch(r"\s*([0-9.eE+-]+):([0-9.eE+-]+)\s*", chunk)
        if not m:
            raise DataFormatError(
                f"line {line_no}: occlusions must be start:end pairs, got {chunk!r}"
            )
        intervals.append((float(m.group(1)), float(m.group(2))))
    return tuple(intervals)


_INT_KEYS = {
    "sim.seed",
    "sim.image_width",
    "sim.image_height",
    "mdpm.window_size",
    "mdpm.buffer_length",
    "mdpm.prune_count",
}
_STR_KEYS = {"sim.script", "sim.occlusions"}
_FLOAT_KEYS = {
    "sim.duration", "sim.physics_rate", "sim.detector_rate", "sim.frame_rate",
    "sim.script_speed", "sim.script_rate",
    "sim.leader_x", "sim.leader_y", "sim.leader_z", "sim.leader_yaw",
    "sim.follower_x", "sim.follower_y", "sim.follower_z", "sim.follower_yaw",
    "sim.current_x", "sim.current_y", "sim.current_z",
    "sim.camera_hfov", "sim.camera_aspect",
    "sim.target_length", "sim.target_height",
    "sim.gait_frequency", "sim.gait_jitter",
    "sim.noiseless",
    "servo.desired_area", "servo.command_rate", "servo.loss_timeout",
    "servo.yaw_kp", "servo.yaw_ki", "servo.yaw_kd",
    "servo.depth_gain", "servo.speed_gain",
    "servo.yaw_rate_limit", "servo.vertical_speed_limit", "servo.forward_speed_limit",
    "mdpm.band_low", "mdpm.band_high", "mdpm.band_step",
    "mdpm.threshold_factor", "mdpm.amplitude_threshold", "mdpm.motion_sigma",
    "detector_noise.miss_prob_small", "detector_noise.miss_prob_base",
    "detector_noise.small_area", "detector_noise.center_sigma",
    "detector_noise.scale_sigma", "detector_noise.confidence_sigma",
    "detector_noise.false_positive_prob",
}
KNOWN_KEYS = _INT_KEYS | _STR_KEYS | _FLOAT_KEYS


class ToolConfig:
    """Bundle of the per-module configs assembled from one config file."""

    def __init__(self, convoy: ConvoyConfig, mdpm: MdpmConfig, frame_rate: float):
        self.convoy = convoy
        self.mdpm = mdpm
        self.frame_rate = frame_rate


def parse_config(text: str) -> ToolConfig:
    """Parse key=value config lines into the simulator/servo/mdpm configs.

    Unknown keys are rejected with their line number; '#' starts a comment.
    """
    values: dict[str, object] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"line {line_no}: expected key=value, got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise DataFormatError(f"line {line_no}: unknown config key {key!r}")
        if key in values:
            raise DataFormatError(f"line {line_no}: duplicate config key {key!r}")
        if key in _INT_KEYS:
            try:
                values[key] = int(raw_value)
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: key {key} needs an integer, got {raw_value!r}"
                ) from None
        elif key in _FLOAT_KEYS:
            values[key] = _parse_float(raw_value, line_no, key)
        elif key == "sim.occlusions":
            values[key] = _parse_occlusions(raw_value, line_no)
        else:
            values[key] = raw_value

    def take(key: str, default):
        return values.get(key, default)

    try:
        servo = ServoConfig(
            desired_area=take("servo.desired_area", 0.5),
            command_rate=take("servo.command_rate", 10.0),
            loss_timeout=take("servo.loss_timeout", 2.0),
            yaw_kp=take("servo.yaw_kp", ServoConfig.yaw_kp),
            yaw_ki=take("servo.yaw_ki", ServoConfig.yaw_ki),
            yaw_kd=take("servo.yaw_kd", ServoConfig.yaw_kd),
            depth_gain=take("servo.depth_gain", ServoConfig.depth_gain),
            speed_gain=take("servo.speed_gain", ServoConfig.speed_gain),
            yaw_rate_limit=take("servo.yaw_rate_limit", ServoConfig.yaw_rate_limit),
            vertical_speed_limit=take(
                "servo.vertical_speed_limit", ServoConfig.vertical_speed_limit
            ),
            forward_speed_limit=take(
                "servo.forward_speed_limit", ServoConfig.forward_speed_limit
            ),
        )
        camera = CameraModel(
            horizontal_fov=take("sim.camera_hfov", math.pi / 2),
            aspect=take("sim.camera_aspect", 4.0 / 3.0),
            image_width=take("sim.image_width", 320),
            image_height=take("sim.image_height", 240),
        )
        target = TargetModel(
            body_length=take("sim.target_length", 0.65),
            body_height=take("sim.target_height", 0.30),
            gait_frequency=take("sim.gait_frequency", 2.0),
            gait_jitter=take("sim.gait_jitter", 0.0),
        )
        leader_pose = Pose(
            position=(
                take("sim.leader_x", 2.0),
                take("sim.leader_y", 0.0),
                take("sim.leader_z", 0.0),
            ),
            yaw=take("sim.leader_yaw", 0.0),
        )
        follower_pose = Pose(
            position=(
                take("sim.follower_x", 0.0),
                take("sim.follower_y", 0.0),
                take("sim.follower_z", 0.0),
            ),
            yaw=take("sim.follower_yaw", 0.0),
        )
        script = _build_script(
            str(take("sim.script", "forward")),
            take("sim.script_speed", 0.6),
            take("sim.script_rate", 0.3),
            leader_pose,
        )
        if take("sim.noiseless", 0.0):
            noise = DetectorNoise.noiseless()
        else:
            noise = DetectorNoise(
                miss_prob_small=take("detector_noise.miss_prob_small", DetectorNoise.miss_prob_small),
                miss_prob_base=take("detector_noise.miss_prob_base", DetectorNoise.miss_prob_base),
                small_area=take("detector_noise.small_area", DetectorNoise.small_area),
                center_sigma=take("detector_noise.center_sigma", DetectorNoise.center_sigma),
                scale_sigma=take("detector_noise.scale_sigma", DetectorNoise.scale_sigma),
                confidence_sigma=take("detector_noise.confidence_sigma", DetectorNoise.confidence_sigma),
                false_positive_prob=take(
                    "detector_noise.false_positive_prob", DetectorNoise.false_positive_prob
                ),
            )
        convoy = ConvoyConfig(
            duration=take("sim.duration", 60.0),
            physics_rate=take("sim.physics_rate", 50.0),
            detector_rate=take("sim.detector_rate", 7.0),
            seed=take("sim.seed", 0),
            script=script,
            initial_follower=follower_pose,
            servo=servo,
            camera=camera,
            target=target,
            detector_noise=noise,
            occlusions=take("sim.occlusions", ()),
            current=(
                take("sim.current_x", 0.0),
                take("sim.current_y", 0.0),
                take("sim.current_z", 0.0),
            ),
        )
        mdpm = MdpmConfig(
            window_size=take("mdpm.window_size", 30),
            buffer_length=take("mdpm.buffer_length", 10),
            prune_count=take("mdpm.prune_count", 10),
            band=(take("mdpm.band_low", 1.0), take("mdpm.band_high", 3.0)),
            band_step=take("mdpm.band_step", 0.1),
            threshold_factor=take("mdpm.threshold_factor", 6.0),
            amplitude_threshold=take("mdpm.amplitude_threshold", None),
            motion_sigma=take("mdpm.motion_sigma", 1.0),
        )
    except ValueError as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"invalid config value: {exc}") from None
    return ToolConfig(convoy, mdpm, take("sim.frame_rate", 15.0))


def _build_script(kind: str, speed: float, rate: float, start: Pose) -> TrajectoryScript:
    if kind == "forward":
        return forward_script(speed, start)
    if kind == "turn_in_place":
        return turn_script(rate, start)
    if kind == "depth_change":
        return depth_script(speed, start)
    raise DataFormatError(f"unknown sim.script {kind!r}")


# ---------------------------------------------------------------------------
# PGM frames

def write_pgm(grid: IntensityGrid) -> bytes:
    """Binary 8-bit PGM (P5) with a fixed header layout."""
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    data = np.clip(np.rint(grid.samples * 255.0), 0, 255).astype(np.uint8)
    return header + data.tobytes()


def _pgm_tokens(data: bytes):
    pos = 0
    while pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        yield pos, data[pos:end]
        pos = end


def read_pgm(data: bytes, timestamp: float = 0.0) -> IntensityGrid:
    """Read a binary (P5) or ASCII (P2) grayscale PGM into [0, 1] samples."""
    tokens = _pgm_tokens(data)
    try:
        _, magic = next(tokens)
    except StopIteration:
        raise DataFormatError("empty PGM data") from None
    if magic not in (b"P5", b"P2"):
        raise DataFormatError(f"not a PGM file (magic {magic!r})")
    try:
        _, w_tok = next(tokens)
        _, h_tok = next(tokens)
        max_pos, max_tok = next(tokens)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except (StopIteration, ValueError):
        raise DataFormatError("malformed PGM header") from None
    if width <= 0 or height <= 0 or maxval <= 0:
        raise DataFormatError("PGM header fields must be positive")

    if magic == b"P5":
        start = max_pos + len(max_tok) + 1  # single whitespace after maxval
        raw = data[start : start + width * height]
        if len(raw) != width * height:
            raise DataFormatError("PGM pixel payload truncated")
        samples = np.frombuffer(raw, dtype=np.uint8).astype(float)
    else:
        values = []
        for _, tok in tokens:
            try:
                values.append(int(tok))
            except ValueError:
                raise DataFormatError(f"bad P2 pixel value {tok!r}") from None
        if len(values) != width * height:
            raise DataFormatError(
                f"P2 payload holds {len(values)} values, expected {width * height}"
            )
        samples = np.asarray(values, dtype=float)
    return IntensityGrid(
        width, height, (samples / maxval).reshape(height, width), timestamp
    )


def write_frame_dir(frames: Sequence[IntensityGrid], directory: str | Path) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = out / f"frame_{i:06d}.pgm"
        path.write_bytes(write_pgm(frame))
        paths.append(path)
    return paths


def load_frame_dir(directory: str | Path, fps: float) -> list[IntensityGrid]:
    """Load a directory of PGM frames in lexicographic filename order."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise DataFormatError(f"no .pgm frames in {directory}")
    return [read_pgm(p.read_bytes(), timestamp=i / fps) for i, p in enumerate(files)]


# ---------------------------------------------------------------------------
# trace CSV

TRACE_HEADER = (
    "t,leader_x,leader_y,leader_z,leader_yaw,leader_pitch,"
    "follower_x,follower_y,follower_z,follower_yaw,follower_pitch,"
    "true_present,true_x,true_y,true_w,true_h,"
    "det_present,det_conf,det_x,det_y,det_w,det_h,"
    "cmd_yaw_rate,cmd_pitch_rate,cmd_roll_rate,cmd_forward_speed,cmd_vertical_speed"
)


def format_trace_csv(trace: SimTrace) -> str:
    lines = [TRACE_HEADER]
    for r in trace.records:
        lp, fp_ = r.leader, r.follower
        tb, db, cmd = r.true_box, r.detection, r.command
        fields = [
            _fmt(r.t),
            _fmt(lp.position[0]), _fmt(lp.position[1]), _fmt(lp.position[2]),
            _fmt(lp.yaw), _fmt(lp.pitch),
            _fmt(fp_.position[0]), _fmt(fp_.position[1]), _fmt(fp_.position[2]),
            _fmt(fp_.yaw), _fmt(fp_.pitch),
            "1" if tb else "0",
            _fmt_opt(tb.x if tb else None), _fmt_opt(tb.y if tb else None),
            _fmt_opt(tb.w if tb else None), _fmt_opt(tb.h if tb else None),
            "1" if db else "0",
            _fmt_opt(db.p if db else None),
            _fmt_opt(db.x if db else None), _fmt_opt(db.y if db else None),
            _fmt_opt(db.w if db else None), _fmt_opt(db.h if db else None),
            _fmt(cmd.yaw_rate), _fmt(cmd.pitch_rate), _fmt(cmd.roll_rate),
            _fmt(cmd.forward_speed), _fmt(cmd.vertical_speed),
        ]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# report rendering

def _cell(v: float | None, percent: bool = False) -> str:
    if v is None:
        return "—"
    return f"{100 * v:.1f}%" if percent else f"{v:.4f}"


def format_metrics_text(report: MetricsReport, tracks: TrackStats | None = None) -> str:
    rows = [
        ("images", str(report.n_images)),
        ("TP / TN / FP / FN", f"{report.n_tp} / {report.n_tn} / {report.n_fp} / {report.n_fn}"),
        ("accuracy", _cell(report.accuracy)),
        ("precision", _cell(report.precision)),
        ("recall", _cell(report.recall)),
        ("avg IOU", _cell(report.avg_iou)),
        ("LFR", _cell(report.lfr, percent=True)),
    ]
    if report.fps is not None:
        rows.append(("FPS", f"{report.fps:.2f}"))
    if tracks is not None:
        rows.append(("tracks", str(tracks.count)))
        rows.append(("track mean (s)", _cell(tracks.mean_duration)))
        rows.append(("track std (s)", _cell(tracks.std_duration)))
        rows.append(("track max (s)", _cell(tracks.max_duration)))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def _csv_cell(v: float | None) -> str:
    return "" if v is None else _fmt(v)


def format_metrics_csv(report: MetricsReport) -> str:
    header = "n_images,n_tp,n_tn,n_fp,n_fn,accuracy,precision,recall,avg_iou,lfr,fps"
    row = ",".join(
        [
            str(report.n_images), str(report.n_tp), str(report.n_tn),
            str(report.n_fp), str(report.n_fn),
            _fmt(report.accuracy), _csv_cell(report.precision), _csv_cell(report.recall),
            _csv_cell(report.avg_iou), _csv_cell(report.lfr), _csv_cell(report.fps),
        ]
    )
    return header + "\n" + row + "\n"


def format_area_histogram_csv(hist: HistogramReport) -> str:
    lines = ["area_lo,area_hi,tp_count,fn_count"]
    for i in range(len(hist.area_edges) - 1):
        lines.append(
            f"{_fmt(hist.area_edges[i])},{_fmt(hist.area_edges[i + 1])},"
            f"{hist.tp_by_area[i]},{hist.fn_by_area[i]}"
        )
    return "\n".join(lines) + "\n"


def format_bias_histogram_csv(hist: HistogramReport) -> str:
    lines = ["area_lo,area_hi,count,bias_mean,bias_std"]
    for i in range(len(hist.area_edges) - 1):
        lines.append(
            f"{_fmt(hist.area_edges[i])},{_fmt(hist.area_edges[i + 1])},"
            f"{hist.bias_count[i]},{_fmt(hist.bias_mean[i])},{_fmt(hist.bias_std[i])}"
        )
    return "\n".join(lines) + "\n"


def format_runs_histogram_csv(hist: HistogramReport) -> str:
    lines = ["frames_lo,frames_hi,tn_runs,fn_runs"]
    for i in range(len(hist.duration_edges) - 1):
        lines.append(
            f"{_fmt(hist.duration_edges[i])},{_fmt(hist.duration_edges[i + 1])},"
            f"{hist.tn_runs[i]},{hist.fn_runs[i]}"
        )
    return "\n".join(lines) + "\n"
