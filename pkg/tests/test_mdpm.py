import math

import numpy as np
import pytest

from uwconvoy.geometry import IntensityGrid
from uwconvoy.mdpm import (
    MdpmConfig,
    MdpmTracker,
    SubWindowGrid,
    detect_periodic_target,
    dtft_amplitude,
    enumerate_directions,
    hmm_prune,
)

from oracles import all_adjacent_paths, reference_dft_amplitude, score_path


def frames_from_cells(cell_values: np.ndarray, window_size: int = 10, fps: float = 15.0):
    """Build frames whose sub-window means equal the given (T, rows, cols) values."""
    t, rows, cols = cell_values.shape
    frames = []
    for i in range(t):
        img = np.kron(cell_values[i], np.ones((window_size, window_size)))
        frames.append(
            IntensityGrid(cols * window_size, rows * window_size, img, timestamp=i / fps)
        )
    return frames


# ---------------------------------------------------------------------------
# dtft

def test_dtft_constant_series_is_zero_everywhere():
    series = np.full(32, 0.7)
    for f in (1.0, 1.5, 2.9):
        assert dtft_amplitude(series, 15.0, f) == pytest.approx(0.0, abs=1e-12)


def test_dtft_integer_period_sine_peak():
    fs, n = 15.0, 150
    series = np.sin(2 * np.pi * 2.0 * np.arange(n) / fs)
    assert dtft_amplitude(series, fs, 2.0) == pytest.approx(75.0, abs=1e-6)
    scan = np.round(np.arange(1.0, 3.0 + 1e-9, 0.1), 10)
    amps = [dtft_amplitude(series, fs, f) for f in scan]
    assert scan[int(np.argmax(amps))] == 2.0


def test_dtft_matches_reference_sum():
    rng = np.random.default_rng(1)
    series = rng.uniform(0, 1, 24)
    for f in (1.0, 2.2, 3.0):
        assert dtft_amplitude(series, 15.0, f) == pytest.approx(
            reference_dft_amplitude(series, 15.0, f), abs=1e-9
        )


def test_dtft_offset_invariance_and_linearity():
    rng = np.random.default_rng(2)
    series = rng.uniform(0, 1, 20)
    base = dtft_amplitude(series, 15.0, 2.0)
    assert dtft_amplitude(series + 0.35, 15.0, 2.0) == pytest.approx(base, abs=1e-9)
    assert dtft_amplitude(series * 3.0, 15.0, 2.0) == pytest.approx(3.0 * base, rel=1e-12)


def test_dtft_preconditions():
    with pytest.raises(ValueError):
        dtft_amplitude([0.5], 15.0, 2.0)
    with pytest.raises(ValueError):
        dtft_amplitude([0.5, 0.6], 15.0, 0.0)
    with pytest.raises(ValueError):
        dtft_amplitude([0.5, 0.6], 15.0, 7.5)  # at Nyquist


# ---------------------------------------------------------------------------
# grid

def test_grid_discards_remainders():
    grid = SubWindowGrid.for_frame(320, 240, 30)
    assert (grid.columns, grid.rows) == (10, 8)
    box = grid.cell_bbox(0)
    assert (box.x, box.y) == (0.0, 0.0)
    assert box.w == pytest.approx(30 / 320)
    assert box.h == pytest.approx(30 / 240)
    last = grid.cell_bbox(grid.cell_count - 1)
    assert last.x == pytest.approx(9 * 30 / 320)
    assert last.y == pytest.approx(7 * 30 / 240)


def test_grid_rejects_tiny_frames():
    with pytest.raises(ValueError):
        SubWindowGrid.for_frame(20, 20, 30)


# ---------------------------------------------------------------------------
# enumerate_directions

def test_single_frame_buffer_gives_single_window_paths():
    frames = frames_from_cells(np.full((1, 3, 3), 0.5))
    grid = SubWindowGrid.for_frame(30, 30, 10)
    directions = enumerate_directions(frames, grid)
    assert len(directions) == 9
    assert sorted(d.window_path for d in directions) == [(i,) for i in range(9)]
    assert all(d.intensity_series.shape == (1,) for d in directions)


def test_uniform_frames_give_constant_series():
    frames = frames_from_cells(np.full((10, 3, 4), 0.5))
    grid = SubWindowGrid.for_frame(40, 30, 10)
    for d in enumerate_directions(frames, grid):
        assert np.all(d.intensity_series == 0.5)


def test_paths_satisfy_adjacency_invariant():
    frames = frames_from_cells(np.full((10, 4, 5), 0.3))
    grid = SubWindowGrid.for_frame(50, 40, 10)
    for d in enumerate_directions(frames, grid):
        assert len(d.window_path) == len(d.intensity_series) == 10
        for a, b in zip(d.window_path, d.window_path[1:]):
            ra, ca = divmod(a, grid.columns)
            rb, cb = divmod(b, grid.columns)
            assert abs(ra - rb) <= 1 and abs(ca - cb) <= 1


def _moving_blob_cells(length: int, cols: int, background=0.4, bright=0.95, dim=0.15):
    """Single-row footage with a blob stepping right, alternating brightness."""
    cells = np.full((length, 1, cols), background)
    for t in range(length):
        cells[t, 0, t % cols] = bright if t % 2 == 0 else dim
    return cells


def test_blob_following_series_has_largest_variance():
    cells = _moving_blob_cells(10, 10)
    frames = frames_from_cells(cells)
    grid = SubWindowGrid.for_frame(100, 10, 10)
    directions = {d.window_path: d for d in enumerate_directions(frames, grid)}
    follower = directions[tuple(range(10))]
    follower_var = float(np.var(follower.intensity_series))
    for path, d in directions.items():
        if len(set(path)) == 1:  # static paths
            assert float(np.var(d.intensity_series)) < follower_var


def test_mismatched_frame_dimensions_rejected():
    a = IntensityGrid(30, 30, np.zeros((30, 30)), 0.0)
    b = IntensityGrid(40, 30, np.zeros((30, 40)), 0.1)
    with pytest.raises(ValueError):
        enumerate_directions([a, b], SubWindowGrid.for_frame(30, 30, 10))
    with pytest.raises(ValueError):
        enumerate_directions([], SubWindowGrid.for_frame(30, 30, 10))


# ---------------------------------------------------------------------------
# hmm_prune

def test_prune_keeps_all_when_p_large():
    frames = frames_from_cells(_moving_blob_cells(3, 3))
    grid = SubWindowGrid.for_frame(30, 10, 10)
    directions = enumerate_directions(frames, grid)
    pruned = hmm_prune(directions, len(directions) + 5, grid)
    assert len(pruned) == len(directions)
    likes = [d.likelihood for d in pruned]
    assert likes == sorted(likes, reverse=True)
    assert {d.window_path for d in pruned} == {d.window_path for d in directions}


def test_prune_winner_matches_exhaustive_oracle_on_3x3():
    # blob walks the diagonal with strongly alternating brightness
    cells = np.full((3, 3, 3), 0.4)
    cells[0, 0, 0] = 0.95
    cells[1, 1, 1] = 0.15
    cells[2, 2, 2] = 0.95
    frames = frames_from_cells(cells)
    grid = SubWindowGrid.for_frame(30, 30, 10)
    directions = enumerate_directions(frames, grid)

    winner = hmm_prune(directions, 1, grid)[0]
    follower_path = (0, 4, 8)
    assert winner.window_path == follower_path

    # oracle: score every 8-adjacent path (not just the straight candidates)
    flat = cells.reshape(3, 9)
    all_series = {
        p: [flat[t, p[t]] for t in range(3)] for p in all_adjacent_paths(3, 3, 3)
    }
    top_change = max(
        (s1 - s0) ** 2 for s in all_series.values() for s0, s1 in zip(s, s[1:])
    )
    scores = {
        p: score_path(p, s, 3, 1.0, top_change) for p, s in all_series.items()
    }
    oracle_best = max(scores, key=lambda p: (scores[p], -p[-1]))
    assert oracle_best == follower_path
    assert winner.likelihood == pytest.approx(scores[follower_path], abs=1e-9)


def test_prune_tie_order_on_identical_series():
    frames = frames_from_cells(np.full((5, 3, 3), 0.5))
    grid = SubWindowGrid.for_frame(30, 30, 10)
    directions = enumerate_directions(frames, grid)
    pruned = hmm_prune(directions, 4, grid)
    # stay-in-place paths tie at the top; lowest window indices win
    assert [d.window_path for d in pruned] == [
        (0,) * 5, (1,) * 5, (2,) * 5, (3,) * 5
    ]


def test_prune_rejects_empty_and_bad_p():
    frames = frames_from_cells(np.full((3, 3, 3), 0.5))
    grid = SubWindowGrid.for_frame(30, 30, 10)
    directions = enumerate_directions(frames, grid)
    with pytest.raises(ValueError):
        hmm_prune([], 1, grid)
    with pytest.raises(ValueError):
        hmm_prune(directions, 0, grid)


# ---------------------------------------------------------------------------
# detect_periodic_target

def oscillating_cell_frames(
    n_frames=10,
    fps=15.0,
    rows=8,
    cols=10,
    cell=(4, 5),
    freq=2.0,
    amplitude=0.3,
    noise=0.01,
    seed=0,
    phase=0.0,
):
    rng = np.random.default_rng(seed)
    cells = np.full((n_frames, rows, cols), 0.4)
    if noise:
        cells += rng.normal(0, noise, cells.shape)
    t = np.arange(n_frames) / fps
    cells[:, cell[0], cell[1]] = 0.5 + amplitude * np.sin(2 * np.pi * freq * t + phase)
    return frames_from_cells(np.clip(cells, 0, 1), window_size=30, fps=fps)


def test_detect_constant_gray_returns_none():
    frames = frames_from_cells(np.full((10, 8, 10), 0.4), window_size=30)
    assert detect_periodic_target(frames) is None


def test_detect_oscillating_cell():
    frames = oscillating_cell_frames(phase=0.7)
    det = detect_periodic_target(frames)
    assert det is not None
    grid = SubWindowGrid.for_frame(320, 240, 30)
    assert det.window_index == 4 * grid.columns + 5
    assert abs(det.peak_frequency - 2.0) <= 0.3
    assert 1.0 <= det.peak_frequency <= 3.0
    assert 0.0 < det.bbox.p <= 1.0
    # bbox covers the oscillating window's center
    cx = (5 * 30 + 15) / 320
    cy = (4 * 30 + 15) / 240
    assert det.bbox.x <= cx <= det.bbox.x + det.bbox.w
    assert det.bbox.y <= cy <= det.bbox.y + det.bbox.h


def test_detect_matches_public_op_composition():
    frames = oscillating_cell_frames(seed=3, phase=2.1)
    config = MdpmConfig()
    det = detect_periodic_target(frames, config)

    grid = SubWindowGrid.for_frame(320, 240, config.window_size)
    directions = enumerate_directions(frames, grid)
    survivors = hmm_prune(directions, config.prune_count, grid, config.motion_sigma)
    fs = (len(frames) - 1) / (frames[-1].timestamp - frames[0].timestamp)
    scan = [
        round(config.band[0] + k * config.band_step, 10)
        for k in range(int(round((config.band[1] - config.band[0]) / config.band_step)) + 1)
    ]
    all_amps = [
        dtft_amplitude(d.intensity_series, fs, f) for d in directions for f in scan
    ]
    threshold = config.threshold_factor * float(np.median(all_amps))
    best = max(
        ((d, f) for d in survivors for f in scan),
        key=lambda pair: (
            dtft_amplitude(pair[0].intensity_series, fs, pair[1]),
            -pair[0].window_path[-1],
            -pair[1],
        ),
    )
    best_amp = dtft_amplitude(best[0].intensity_series, fs, best[1])
    assert det is not None and best_amp > threshold
    assert det.window_index == best[0].window_path[-1]
    assert det.peak_frequency == pytest.approx(best[1], abs=1e-9)
    assert det.amplitude == pytest.approx(best_amp, abs=1e-9)


def test_detect_noise_only_rarely_fires():
    fires = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        cells = 0.4 + rng.normal(0, 0.02 / 30.0, (10, 8, 10))
        frames = frames_from_cells(cells, window_size=30)
        if detect_periodic_target(frames) is not None:
            fires += 1
    assert fires <= 1


def test_detect_buffer_length_requirements():
    frames = oscillating_cell_frames(n_frames=8)
    with pytest.raises(ValueError):
        detect_periodic_target(frames)  # shorter than the configured buffer
    longer = oscillating_cell_frames(n_frames=14, phase=0.3)
    det = detect_periodic_target(longer)  # uses the most recent 10
    assert det is not None


def test_detect_respects_absolute_threshold_override():
    frames = oscillating_cell_frames(phase=1.0)
    high = MdpmConfig(amplitude_threshold=1e9)
    assert detect_periodic_target(frames, high) is None


def test_tracker_matches_one_shot_detection():
    frames = oscillating_cell_frames(n_frames=25, seed=9, phase=0.2)
    tracker = MdpmTracker()
    pushed = [tracker.push(f) for f in frames]
    assert all(r is None for r in pushed[:9])
    for i in range(9, 25):
        expected = detect_periodic_target(frames[i - 9 : i + 1])
        got = pushed[i]
        if expected is None:
            assert got is None
        else:
            assert got is not None
            assert got.window_index == expected.window_index
            assert got.peak_frequency == expected.peak_frequency
            assert got.amplitude == pytest.approx(expected.amplitude, rel=1e-12)


def test_detect_never_reports_out_of_band_frequency():
    for seed in range(5):
        frames = oscillating_cell_frames(seed=seed, freq=1.0 + 0.4 * seed, phase=seed)
        det = detect_periodic_target(frames)
        if det is not None:
            assert 1.0 <= det.peak_frequency <= 3.0


# ---------------------------------------------------------------------------
# simulated footage end to end

def test_detect_on_sim_footage_localizes_flipper():
    import math

    from uwconvoy.sim import CameraModel, FootageScene, Pose, TargetModel

    scene = FootageScene(
        target=TargetModel(gait_frequency=2.0),
        rng=np.random.default_rng(77),
        gait_phase0=0.4,
    )
    leader = Pose(position=(1.2, 0.0, 0.0))
    frames = scene.render_sequence(leader, Pose(), 10, 15.0)
    det = detect_periodic_target(frames)
    assert det is not None
    assert abs(det.peak_frequency - 2.0) <= 0.3
    # image location of the flipper patch center: dead ahead, slightly low
    cam = CameraModel()
    u = 0.5
    el = math.atan2(scene.target.flipper_offset[1], 1.2)
    v = 0.5 - el / cam.vertical_fov
    assert det.bbox.x <= u <= det.bbox.x + det.bbox.w
    assert det.bbox.y <= v <= det.bbox.y + det.bbox.h


def test_recall_and_precision_on_sim_sequences():
    """100-frame sequences, target visible for the first half only."""
    from uwconvoy.sim import FootageScene, Pose, TargetModel

    tp = fn = fp = tn = 0
    for i, gait in enumerate((1.5, 2.0, 2.5)):
        scene = FootageScene(
            target=TargetModel(gait_frequency=gait),
            rng=np.random.default_rng(600 + i),
        )
        visible = Pose(position=(1.2, 0.0, 0.0))
        hidden = Pose(position=(-5.0, 0.0, 0.0))
        tracker = MdpmTracker()
        for frame_index in range(100):
            leader = visible if frame_index < 50 else hidden
            det = tracker.push(scene.render(leader, Pose(), frame_index / 15.0))
            if 9 <= frame_index < 50:  # buffers fully inside the visible span
                tp += det is not None
                fn += det is None
            elif frame_index >= 59:  # buffers fully inside the empty span
                fp += det is not None
                tn += det is None
    recall = tp / (tp + fn)
    precision = tp / (tp + fp) if tp + fp else None
    assert recall >= 0.8
    assert precision is not None and precision >= 0.9
