"""Frame-level detector evaluation: confusion metrics, threshold selection,
track statistics, and failure histograms.

A frame counts as a true positive purely by presence agreement at the
chosen confidence threshold; localization quality is reported separately
through the average overlap and the localization failure rate over true
positives. Ratio metrics with empty denominators are reported as None
("undefined"), never silently zero.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Annotation, BoundingBox, box_center, iou

Classification = str  # "TP" | "TN" | "FP" | "FN"


class ThresholdNotFoundError(ValueError):
    """No confidence threshold reaches the required precision floor."""


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    annotation: Annotation
    prediction: BoundingBox | None
    classification: Classification
    iou: float | None = None


@dataclass(frozen=True)
class MetricsReport:
    n_images: int
    n_tp: int
    n_tn: int
    n_fp: int
    n_fn: int
    accuracy: float
    precision: float | None
    recall: float | None
    avg_iou: float | None
    lfr: float | None
    fps: float | None = None


@dataclass(frozen=True)
class TrackStats:
    count: int
    durations: tuple[float, ...]
    mean_duration: float | None
    std_duration: float | None
    max_duration: float | None


def classify_frames(
    annotations: Sequence[Annotation],
    predictions: Sequence[tuple[int, BoundingBox | None]],
    threshold: float,
) -> list[FrameResult]:
    """Label every frame TP/TN/FP/FN at the given confidence threshold.

    A prediction counts as present iff it carries a box whose confidence is
    at or above the threshold. Annotation and prediction frame sets must
    match exactly.
    """
    ann_by_frame: dict[int, Annotation] = {}
    for ann in annotations:
        if ann.frame_index in ann_by_frame:
            raise ValueError(f"duplicate annotation frame {ann.frame_index}")
        ann_by_frame[ann.frame_index] = ann
    pred_by_frame: dict[int, BoundingBox | None] = {}
    for frame, box in predictions:
        if frame in pred_by_frame:
            raise ValueError(f"duplicate prediction frame {frame}")
        pred_by_frame[frame] = box
    if set(ann_by_frame) != set(pred_by_frame):
        missing = sorted(set(ann_by_frame) ^ set(pred_by_frame))
        raise ValueError(f"annotation/prediction frame mismatch at frames {missing[:5]}")

    results = []
    for frame in sorted(ann_by_frame):
        ann = ann_by_frame[frame]
        box = pred_by_frame[frame]
        detected = box is not None and box.p >= threshold
        if ann.present and detected:
            label, overlap = "TP", iou(box, ann.truth_box)
        elif ann.present:
            label, overlap = "FN", None
        elif detected:
            label, overlap = "FP", None
        else:
            label, overlap = "TN", None
        results.append(FrameResult(frame, ann, box, label, overlap))
    return results


def metrics_summary(results: Sequence[FrameResult], fps: float | None = None) -> MetricsReport:
    """Aggregate frame results into the full metric set."""
    if not results:
        raise ValueError("no frame results to summarize")
    counts = {"TP": 0, "TN": 0, "FP": 0, "FN": 0}
    for r in results:
        counts[r.classification] += 1
    n = len(results)
    tp, tn, fp, fn = counts["TP"], counts["TN"], counts["FP"], counts["FN"]
    tp_ious = [r.iou for r in results if r.classification == "TP"]
    return MetricsReport(
        n_images=n,
        n_tp=tp,
        n_tn=tn,
        n_fp=fp,
        n_fn=fn,
        accuracy=(tp + tn) / n,
        precision=tp / (tp + fp) if tp + fp > 0 else None,
        recall=tp / (tp + fn) if tp + fn > 0 else None,
        avg_iou=sum(tp_ious) / len(tp_ious) if tp_ious else None,
        lfr=sum(1 for v in tp_ious if v < 0.5) / len(tp_ious) if tp_ious else None,
        fps=fps,
    )


def select_threshold(
    annotations: Sequence[Annotation],
    predictions: Sequence[tuple[int, BoundingBox | None]],
    min_precision: float = 0.95,
) -> float:
    """Best-recall confidence threshold subject to a precision floor.

    Sweeps the distinct confidence values of the boxed predictions; among
    thresholds meeting the floor the one with the highest recall wins, ties
    going to the lower threshold.
    """
    candidates = sorted({box.p for _, box in predictions if box is not None})
    best: tuple[float, float] | None = None  # (recall, threshold)
    for threshold in candidates:
        report = metrics_summary(classify_frames(annotations, predictions, threshold))
        if report.precision is None or report.precision < min_precision:
            continue
        recall = report.recall if report.recall is not None else 0.0
        if best is None or recall > best[0]:
            best = (recall, threshold)
    if best is None:
        raise ThresholdNotFoundError(
            f"no confidence threshold reaches precision {min_precision}"
        )
    return best[1]


def track_statistics(
    results: Sequence[FrameResult], fps: float, max_gap: float = 3.0
) -> TrackStats:
    """Group true positives into tracks tolerating bounded interruptions.

    An interruption of up to max_gap seconds (inclusive) of non-TP frames
    keeps a track alive; track duration spans first through last TP frame.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    frames = [r.frame_index for r in results if r.classification == "TP"]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("results must be in increasing frame order")
    if not frames:
        return TrackStats(0, (), None, None, None)

    spans: list[tuple[int, int]] = []
    start = prev = frames[0]
    for f in frames[1:]:
        if (f - prev - 1) / fps <= max_gap:
            prev = f
        else:
            spans.append((start, prev))
            start = prev = f
    spans.append((start, prev))

    durations = tuple((last - first + 1) / fps for first, last in spans)
    return TrackStats(
        count=len(durations),
        durations=durations,
        mean_duration=statistics.fmean(durations),
        std_duration=statistics.pstdev(durations),
        max_duration=max(durations),
    )


@dataclass(frozen=True)
class HistogramReport:
    """Binned failure analyses mirroring the field-trial figures."""

    area_edges: tuple[float, ...]
    # per area bin: TP count, FN count
    tp_by_area: tuple[int, ...]
    fn_by_area: tuple[int, ...]
    # per area bin: sample count, mean and std of center bias over TPs
    bias_count: tuple[int, ...]
    bias_mean: tuple[float, ...]
    bias_std: tuple[float, ...]
    duration_edges: tuple[float, ...]
    # per duration bin: counts of TN runs and FN runs of that length (frames)
    tn_runs: tuple[int, ...]
    fn_runs: tuple[int, ...]


def _run_lengths(results: Sequence[FrameResult], label: str) -> list[int]:
    """Lengths of maximal runs of frame-contiguous results with the label."""
    lengths = []
    run = 0
    prev_frame = None
    for r in results:
        if r.classification == label:
            if run > 0 and r.frame_index != prev_frame + 1:
                lengths.append(run)
                run = 0
            run += 1
        elif run:
            lengths.append(run)
            run = 0
        prev_frame = r.frame_index
    if run:
        lengths.append(run)
    return lengths


def histogram_report(
    results: Sequence[FrameResult],
    area_edges: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    duration_edges: Sequence[float] = (1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0),
) -> HistogramReport:
    """Bin detector outcomes by annotated box area and by negative-run length.

    The last bin of each axis includes its right edge; earlier bins are
    half-open on the right.
    """
    for edges in (area_edges, duration_edges):
        if len(edges) < 2:
            raise ValueError("bin spec needs at least two edges")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be strictly increasing")

    tp_areas = []
    fn_areas = []
    biases = []
    bias_areas = []
    for r in results:
        if r.classification == "TP":
            area = r.annotation.truth_box.w * r.annotation.truth_box.h
            tp_areas.append(area)
            pcx, pcy = box_center(r.prediction)
            tcx, tcy = box_center(r.annotation.truth_box)
            biases.append(float(np.hypot(pcx - tcx, pcy - tcy)))
            bias_areas.append(area)
        elif r.classification == "FN":
            fn_areas.append(r.annotation.truth_box.w * r.annotation.truth_box.h)

    tp_hist, _ = np.histogram(tp_areas, bins=area_edges)
    fn_hist, _ = np.histogram(fn_areas, bins=area_edges)

    n_bins = len(area_edges) - 1
    bias_count = np.zeros(n_bins, dtype=int)
    bias_mean = np.zeros(n_bins)
    bias_std = np.zeros(n_bins)
    if biases:
        which = np.clip(np.digitize(bias_areas, area_edges) - 1, 0, n_bins - 1)
        biases_arr = np.asarray(biases)
        for b in range(n_bins):
            sel = biases_arr[which == b]
            bias_count[b] = sel.size
            if sel.size:
                bias_mean[b] = sel.mean()
                bias_std[b] = sel.std()

    tn_hist, _ = np.histogram(_run_lengths(results, "TN"), bins=duration_edges)
    fn_run_hist, _ = np.histogram(_run_lengths(results, "FN"), bins=duration_edges)

    return HistogramReport(
        area_edges=tuple(area_edges),
        tp_by_area=tuple(int(v) for v in tp_hist),
        fn_by_area=tuple(int(v) for v in fn_hist),
        bias_count=tuple(int(v) for v in bias_count),
        bias_mean=tuple(float(v) for v in bias_mean),
        bias_std=tuple(float(v) for v in bias_std),
        duration_edges=tuple(duration_edges),
        tn_runs=tuple(int(v) for v in tn_hist),
        fn_runs=tuple(int(v) for v in fn_run_hist),
    )


def measure_fps(detector: Callable[[object], object], frames: Sequence[object]) -> float:
    """Median frames-per-second of the detector over five batch runs."""
    if not frames:
        raise ValueError("no frames to measure")
    rates = []
    for _ in range(5):
        start = time.perf_counter()
        for frame in frames:
            detector(frame)
        elapsed = max(time.perf_counter() - start, 1e-9)
        rates.append(len(frames) / elapsed)
    return statistics.median(rates)


def confidence_iou_correlation(results: Sequence[FrameResult]) -> float | None:
    """Pearson correlation between confidence and overlap across TPs.

    None when fewer than two TPs exist or either series is constant.
    """
    pairs = [
        (r.prediction.p, r.iou) for r in results if r.classification == "TP"
    ]
    if len(pairs) < 2:
        return None
    conf, overlap = np.asarray(pairs).T
    if conf.std() == 0 or overlap.std() == 0:
        return None
    return float(np.corrcoef(conf, overlap)[0, 1])
