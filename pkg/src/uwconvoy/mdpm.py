"""Periodic-motion target detection in the frequency domain.

The tracker tiles each frame into non-overlapping square sub-windows and
treats candidate motion directions as sequences of sub-windows across the
frame buffer (straight lines at cell velocities in {-1,0,1}^2, clamped at
the grid border). Directions are scored by a hidden-Markov construction:
Gaussian transition weights over cell displacement and emission weights
proportional to the normalized squared intensity change observed along the
direction. The surviving directions are scanned for high spectral amplitude
in the gait band; a sufficiently strong in-band peak localizes the target
at the direction's terminal sub-window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .geometry import BoundingBox, IntensityGrid

# Floor inside emission logs so zero-change steps stay finite.
_EMISSION_EPS = 1e-12


@dataclass(frozen=True)
class SubWindowGrid:
    """Non-overlapping square tiling of a frame; remainders are discarded."""

    window_size: int
    columns: int
    rows: int
    frame_width: int
    frame_height: int

    @classmethod
    def for_frame(cls, frame_width: int, frame_height: int, window_size: int = 30) -> "SubWindowGrid":
        if window_size <= 0:
            raise ValueError(f"window_size must be positive, got {window_size}")
        cols = frame_width // window_size
        rows = frame_height // window_size
        if cols == 0 or rows == 0:
            raise ValueError(
                f"frame {frame_width}x{frame_height} smaller than one "
                f"{window_size}px sub-window"
            )
        return cls(window_size, cols, rows, frame_width, frame_height)

    @property
    def cell_count(self) -> int:
        return self.rows * self.columns

    def cell_bbox(self, index: int, confidence: float = 1.0) -> BoundingBox:
        """Normalized box covering one sub-window of the original frame."""
        row, col = divmod(index, self.columns)
        return BoundingBox(
            col * self.window_size / self.frame_width,
            row * self.window_size / self.frame_height,
            self.window_size / self.frame_width,
            self.window_size / self.frame_height,
            confidence,
        )


@dataclass(eq=False)
class MotionDirection:
    """A candidate motion hypothesis: one sub-window per buffered frame."""

    window_path: tuple[int, ...]
    intensity_series: np.ndarray
    likelihood: float = 0.0


@dataclass(frozen=True)
class SpectralDetection:
    """A periodic-motion hit: winning sub-window, peak frequency, strength."""

    window_index: int
    peak_frequency: float
    amplitude: float
    bbox: BoundingBox


@dataclass(frozen=True)
class MdpmConfig:
    window_size: int = 30
    buffer_length: int = 10
    prune_count: int = 10
    band: tuple[float, float] = (1.0, 3.0)
    band_step: float = 0.1
    # Detection fires when the best in-band amplitude exceeds
    # threshold_factor times the median scanned amplitude over all candidate
    # directions; amplitude_threshold, when set, overrides with an absolute
    # level.
    threshold_factor: float = 6.0
    amplitude_threshold: float | None = None
    motion_sigma: float = 1.0

    def __post_init__(self):
        if self.buffer_length < 1:
            raise ValueError("buffer_length must be >= 1")
        if self.prune_count < 1:
            raise ValueError("prune_count must be >= 1")
        if not 0 < self.band[0] < self.band[1]:
            raise ValueError(f"invalid frequency band {self.band}")
        if self.band_step <= 0:
            raise ValueError("band_step must be positive")
        if self.motion_sigma <= 0:
            raise ValueError("motion_sigma must be positive")


def dtft_amplitude(series: Sequence[float], sample_rate: float, frequency: float) -> float:
    """Spectral amplitude of a mean-removed series at one frequency.

    Mean removal suppresses the DC term so constant series score 0 at every
    frequency.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("series must hold at least 2 samples")
    if not 0.0 < frequency < sample_rate / 2.0:
        raise ValueError(
            f"frequency {frequency} outside (0, Nyquist={sample_rate / 2.0})"
        )
    centered = s - s.mean()
    t = np.arange(s.size)
    return float(abs(np.sum(centered * np.exp(-2j * np.pi * frequency * t / sample_rate))))


@lru_cache(maxsize=32)
def _candidate_paths(rows: int, cols: int, length: int) -> np.ndarray:
    """All straight-line sub-window paths, border-clamped and deduplicated.

    Returns flat cell indices, shape (n_paths, length), lexicographically
    sorted for a stable candidate order.
    """
    t = np.arange(length)
    vel = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)])
    r0, c0 = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    starts = np.stack([r0.ravel(), c0.ravel()], axis=1)  # (cells, 2)
    # (cells, vel, T): start + t*velocity, clamped inside the grid
    r = np.clip(starts[:, None, 0:1] + t * vel[None, :, 0:1], 0, rows - 1)
    c = np.clip(starts[:, None, 1:2] + t * vel[None, :, 1:2], 0, cols - 1)
    flat = (r * cols + c).reshape(-1, length)
    return np.unique(flat, axis=0)


def _transition_log_scores(paths: np.ndarray, cols: int, sigma: float) -> np.ndarray:
    """Sum of Gaussian displacement log-weights along each path."""
    rows_idx, cols_idx = np.divmod(paths, cols)
    d2 = np.diff(rows_idx, axis=1) ** 2 + np.diff(cols_idx, axis=1) ** 2
    return -d2.sum(axis=1) / (2.0 * sigma * sigma)


def _emission_log_scores(series: np.ndarray) -> np.ndarray:
    """Sum of normalized squared-change log-weights along each series.

    Normalization is by the largest squared step change over the whole
    candidate set, so scores are comparative within one buffer.
    """
    if series.shape[1] < 2:
        return np.zeros(series.shape[0])
    q = np.diff(series, axis=1) ** 2
    top = q.max()
    return np.log((q + _EMISSION_EPS) / (top + _EMISSION_EPS)).sum(axis=1)


def _path_order(likelihood: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Indices by descending likelihood; ties by lowest terminal window then
    lexicographic path (the input is pre-sorted lexicographically)."""
    return np.lexsort((np.arange(len(likelihood)), paths[:, -1], -likelihood))


def _gather_series(means: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Intensity series per path, shape (n_paths, T)."""
    t = np.arange(means.shape[0])
    flat_means = means.reshape(means.shape[0], -1)
    return flat_means[t[None, :], paths].astype(float)


def _frame_cell_means(samples: np.ndarray, grid: SubWindowGrid) -> np.ndarray:
    """Mean intensity of every sub-window in one frame, shape (rows, cols)."""
    ws = grid.window_size
    cropped = samples[: grid.rows * ws, : grid.columns * ws]
    return cropped.reshape(grid.rows, ws, grid.columns, ws).mean(axis=(1, 3))


def _check_buffer(frames: Sequence[IntensityGrid]) -> tuple[int, int]:
    if not frames:
        raise ValueError("empty frame buffer")
    w, h = frames[0].width, frames[0].height
    for f in frames[1:]:
        if (f.width, f.height) != (w, h):
            raise ValueError(
                f"mismatched frame dimensions: {f.width}x{f.height} vs {w}x{h}"
            )
    return w, h


def enumerate_directions(
    frames: Sequence[IntensityGrid], grid: SubWindowGrid | None = None
) -> list[MotionDirection]:
    """Candidate motion directions with their captured intensity series.

    Every direction steps through spatially adjacent (or identical)
    sub-windows, one per buffered frame.
    """
    w, h = _check_buffer(frames)
    if grid is None:
        grid = SubWindowGrid.for_frame(w, h)
    means = np.stack([_frame_cell_means(f.samples, grid) for f in frames])
    paths = _candidate_paths(grid.rows, grid.columns, len(frames))
    series = _gather_series(means, paths)
    return [
        MotionDirection(tuple(int(i) for i in paths[d]), series[d])
        for d in range(paths.shape[0])
    ]


def hmm_prune(
    directions: Sequence[MotionDirection],
    prune_count: int,
    grid: SubWindowGrid,
    motion_sigma: float = 1.0,
) -> list[MotionDirection]:
    """Keep the most likely directions, sorted by descending path likelihood.

    Likelihood combines Gaussian transition weights over cell displacement
    with emission weights on the squared intensity changes along the path;
    the grid maps flat window indices back onto cells.
    """
    if not directions:
        raise ValueError("no directions to prune")
    if prune_count < 1:
        raise ValueError("prune_count must be >= 1")
    paths = np.array([d.window_path for d in directions])
    series = np.stack([np.asarray(d.intensity_series, dtype=float) for d in directions])
    scores = _transition_log_scores(paths, grid.columns, motion_sigma)
    scores = scores + _emission_log_scores(series)
    order = _path_order(scores, paths)
    return [
        replace(directions[i], likelihood=float(scores[i]))
        for i in order[:prune_count]
    ]


def _band_frequencies(config: MdpmConfig, sample_rate: float) -> np.ndarray:
    lo, hi = config.band
    if hi >= sample_rate / 2.0:
        raise ValueError(
            f"band {config.band} reaches Nyquist for sample rate {sample_rate}"
        )
    n = int(math.floor((hi - lo) / config.band_step + 1e-9))
    return lo + config.band_step * np.arange(n + 1)


def _amplitude_matrix(series: np.ndarray, sample_rate: float, freqs: np.ndarray) -> np.ndarray:
    """|DTFT| of each mean-removed series at each frequency, (n_series, n_freqs)."""
    centered = series - series.mean(axis=1, keepdims=True)
    t = np.arange(series.shape[1])
    kernel = np.exp(-2j * np.pi * np.outer(t, freqs) / sample_rate)
    return np.abs(centered @ kernel)


def detect_periodic_target(
    buffer: Sequence[IntensityGrid], config: MdpmConfig = MdpmConfig()
) -> SpectralDetection | None:
    """Locate a periodically moving target in the buffered frames.

    Scans the pruned directions over the configured band on a fixed
    frequency grid and reports the strongest peak if it clears the
    threshold. Ties break toward the lowest terminal window index, then the
    lowest frequency. Buffers longer than the configured length use the
    most recent frames; shorter buffers are an error.
    """
    if len(buffer) < config.buffer_length:
        raise ValueError(
            f"buffer holds {len(buffer)} frames, need {config.buffer_length}"
        )
    if config.buffer_length < 2:
        raise ValueError("detection needs a buffer of at least 2 frames")
    frames = list(buffer)[-config.buffer_length:]
    w, h = _check_buffer(frames)
    grid = SubWindowGrid.for_frame(w, h, config.window_size)
    means = np.stack([_frame_cell_means(f.samples, grid) for f in frames])
    timestamps = np.array([f.timestamp for f in frames])
    return _detect_from_means(means, timestamps, grid, config)


def _detect_from_means(
    means: np.ndarray, timestamps: np.ndarray, grid: SubWindowGrid, config: MdpmConfig
) -> SpectralDetection | None:
    span = timestamps[-1] - timestamps[0]
    if span <= 0 or np.any(np.diff(timestamps) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    sample_rate = (len(timestamps) - 1) / span

    paths = _candidate_paths(grid.rows, grid.columns, means.shape[0])
    series = _gather_series(means, paths)
    scores = _transition_log_scores(paths, grid.columns, config.motion_sigma)
    scores = scores + _emission_log_scores(series)
    order = _path_order(scores, paths)
    survivors = order[: config.prune_count]

    freqs = _band_frequencies(config, sample_rate)
    amplitudes = _amplitude_matrix(series, sample_rate, freqs)
    if config.amplitude_threshold is not None:
        threshold = config.amplitude_threshold
    else:
        threshold = config.threshold_factor * float(np.median(amplitudes))

    sub = amplitudes[survivors]
    best_amp = float(sub.max())
    if not best_amp > threshold:
        return None
    hits = np.argwhere(sub == best_amp)
    # lowest terminal window first, then lowest frequency
    key = [(int(paths[survivors[d], -1]), float(freqs[k])) for d, k in hits]
    d_best, k_best = hits[min(range(len(key)), key=key.__getitem__)]
    window = int(paths[survivors[d_best], -1])
    confidence = min(1.0, best_amp / (means.shape[0] / 2.0))
    return SpectralDetection(
        window_index=window,
        peak_frequency=float(freqs[k_best]),
        amplitude=best_amp,
        bbox=grid.cell_bbox(window, confidence),
    )


class MdpmTracker:
    """Rolling-buffer front end for per-frame detection.

    Owns the frame buffer (append-only, single writer) and caches sub-window
    means so each pushed frame is reduced exactly once.
    """

    def __init__(self, config: MdpmConfig = MdpmConfig()):
        self.config = config
        self._grid: SubWindowGrid | None = None
        self._means: list[np.ndarray] = []
        self._timestamps: list[float] = []

    @property
    def grid(self) -> SubWindowGrid | None:
        return self._grid

    def push(self, frame: IntensityGrid) -> SpectralDetection | None:
        """Add a frame; detect once the buffer is full."""
        if self._grid is None:
            self._grid = SubWindowGrid.for_frame(
                frame.width, frame.height, self.config.window_size
            )
        elif (frame.width, frame.height) != (
            self._grid.frame_width,
            self._grid.frame_height,
        ):
            raise ValueError("frame dimensions changed mid-stream")
        self._means.append(_frame_cell_means(frame.samples, self._grid))
        self._timestamps.append(frame.timestamp)
        if len(self._means) > self.config.buffer_length:
            self._means.pop(0)
            self._timestamps.pop(0)
        if len(self._means) < self.config.buffer_length:
            return None
        return _detect_from_means(
            np.stack(self._means),
            np.array(self._timestamps),
            self._grid,
            self.config,
        )
