"""Deterministic kinematic convoy simulator.

World frame: x east/forward, y north/left, z up. Poses carry yaw (about z,
wrapped to (-pi, pi]) and pitch (about the body y axis, clamped inside
(-pi/2, pi/2)). The camera looks along the body forward axis; image
coordinates are normalized with y growing downward, and bearing/elevation
angles map linearly onto the image (angular camera), so no calibration
matrix is involved anywhere.

The leader follows closed-form trajectory scripts; the follower integrates
velocity commands. A billboard rectangle stands in for the leader's body to
produce ground-truth boxes, synthetic grayscale footage with an oscillating
flipper region, and field-statistics-shaped noisy detections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Annotation, BoundingBox, IntensityGrid, clip_box_to_image, iou
from .servo import STOP_COMMAND, ControlCommand, ServoConfig, ServoState, servo_update

_PITCH_LIMIT = math.pi / 2 - 1e-6


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if not -_PITCH_LIMIT <= self.pitch <= _PITCH_LIMIT:
            raise ValueError(f"pitch {self.pitch} outside (-pi/2, pi/2)")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def forward(self) -> np.ndarray:
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        return np.array([cy * cp, sy * cp, sp])

    def left(self) -> np.ndarray:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw), 0.0])

    def up(self) -> np.ndarray:
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        return np.array([-sp * cy, -sp * sy, cp])


@dataclass(frozen=True)
class CameraModel:
    horizontal_fov: float = math.pi / 2
    aspect: float = 4.0 / 3.0
    image_width: int = 320
    image_height: int = 240

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError(f"horizontal_fov {self.horizontal_fov} outside (0, pi)")
        if self.aspect <= 0:
            raise ValueError("aspect must be positive")

    @property
    def vertical_fov(self) -> float:
        return self.horizontal_fov / self.aspect


@dataclass(frozen=True)
class TargetModel:
    """Billboard geometry and gait parameters of the leading robot."""

    body_length: float = 0.65
    body_height: float = 0.30
    # flipper patch center offset from the body center, in board coordinates
    # (horizontal toward the board's left axis, vertical up), and its size
    flipper_offset: tuple[float, float] = (0.0, -0.09)
    flipper_size: tuple[float, float] = (0.50, 0.12)
    gait_frequency: float = 2.0
    gait_jitter: float = 0.0

    def __post_init__(self):
        if not 1.0 <= self.gait_frequency <= 3.0:
            raise ValueError(
                f"gait_frequency {self.gait_frequency} outside the 1-3 Hz band"
            )
        if self.gait_jitter < 0:
            raise ValueError("gait_jitter must be >= 0")


# ---------------------------------------------------------------------------
# leader trajectory scripts

@dataclass(frozen=True)
class TrajectoryScript:
    """Closed-form leader motion: forward, turn_in_place, depth_change, or a
    composite sequence of timed segments."""

    kind: str
    speed: float = 0.0  # m/s for forward, m/s vertical for depth_change
    rate: float = 0.0  # rad/s for turn_in_place
    duration: float = math.inf  # finite only inside composites
    segments: tuple["TrajectoryScript", ...] = ()
    start_pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.kind not in ("forward", "turn_in_place", "depth_change", "composite"):
            raise ValueError(f"unknown trajectory script {self.kind!r}")
        if self.kind == "composite" and not all(
            math.isfinite(s.duration) and s.duration > 0 for s in self.segments
        ):
            raise ValueError("composite segments need finite positive durations")


def forward_script(speed: float = 0.6, start_pose: Pose = Pose(), duration: float = math.inf) -> TrajectoryScript:
    return TrajectoryScript("forward", speed=speed, start_pose=start_pose, duration=duration)


def turn_script(rate: float = 0.3, start_pose: Pose = Pose(), duration: float = math.inf) -> TrajectoryScript:
    return TrajectoryScript("turn_in_place", rate=rate, start_pose=start_pose, duration=duration)


def depth_script(speed: float = -0.1, start_pose: Pose = Pose(), duration: float = math.inf) -> TrajectoryScript:
    return TrajectoryScript("depth_change", speed=speed, start_pose=start_pose, duration=duration)


def composite_script(segments: tuple[TrajectoryScript, ...], start_pose: Pose = Pose()) -> TrajectoryScript:
    return TrajectoryScript("composite", segments=tuple(segments), start_pose=start_pose)


def _advance_pose(script: TrajectoryScript, start: Pose, t: float) -> Pose:
    if script.kind == "forward":
        pos = np.asarray(start.position) + start.forward() * script.speed * t
        return replace(start, position=tuple(pos))
    if script.kind == "turn_in_place":
        return replace(start, yaw=wrap_angle(start.yaw + script.rate * t))
    if script.kind == "depth_change":
        x, y, z = start.position
        return replace(start, position=(x, y, z + script.speed * t))
    raise ValueError(f"unknown trajectory script {script.kind!r}")


def leader_trajectory(script: TrajectoryScript, t: float) -> Pose:
    """Leader pose at time t >= 0; composites hold the final pose when done."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pose = script.start_pose
    if script.kind != "composite":
        return _advance_pose(script, pose, t)
    remaining = t
    for seg in script.segments:
        if remaining < seg.duration:
            return _advance_pose(seg, pose, remaining)
        pose = _advance_pose(seg, pose, seg.duration)
        remaining -= seg.duration
    return pose


def step_follower(pose: Pose, cmd: ControlCommand, dt: float) -> Pose:
    """Integrate one velocity command over dt (velocity-level kinematics)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    yaw = wrap_angle(pose.yaw + cmd.yaw_rate * dt)
    pitch = min(max(pose.pitch + cmd.pitch_rate * dt, -_PITCH_LIMIT), _PITCH_LIMIT)
    turned = replace(pose, yaw=yaw, pitch=pitch)
    pos = np.asarray(pose.position)
    pos = pos + turned.forward() * cmd.forward_speed * dt
    pos = pos + np.array([0.0, 0.0, cmd.vertical_speed * dt])
    return replace(turned, position=tuple(pos))


# ---------------------------------------------------------------------------
# projection

def _project_rect(
    cam: CameraModel,
    follower: Pose,
    center: np.ndarray,
    h_axis: np.ndarray,
    v_axis: np.ndarray,
    half_w: float,
    half_h: float,
) -> BoundingBox | None:
    """Enclosing normalized box of an upright rectangle, or None if hidden."""
    fwd, left, up = follower.forward(), follower.left(), follower.up()
    eye = np.asarray(follower.position)

    rel_c = center - eye
    if rel_c @ fwd <= 0.0:
        return None

    corners = [
        center + sx * half_w * h_axis + sy * half_h * v_axis
        for sx in (-1.0, 1.0)
        for sy in (-1.0, 1.0)
    ]
    us, vs = [], []
    for corner in corners:
        rel = corner - eye
        xc, yc, zc = rel @ fwd, rel @ left, rel @ up
        if xc <= 1e-9:
            return None
        az = math.atan2(yc, xc)
        el = math.atan2(zc, math.hypot(xc, yc))
        us.append(0.5 - az / cam.horizontal_fov)
        vs.append(0.5 - el / cam.vertical_fov)
    x, y = min(us), min(vs)
    return clip_box_to_image(x, y, max(us) - x, max(vs) - y)


def project_bbox(
    cam: CameraModel, follower: Pose, leader: Pose, target: TargetModel
) -> BoundingBox | None:
    """Ground-truth box of the leader's body as seen by the follower."""
    center = np.asarray(leader.position)
    return _project_rect(
        cam,
        follower,
        center,
        leader.left(),
        np.array([0.0, 0.0, 1.0]),
        target.body_length / 2.0,
        target.body_height / 2.0,
    )


# ---------------------------------------------------------------------------
# synthetic footage

class _GaitPhase:
    """Flipper oscillation phase with optional per-cycle frequency jitter."""

    def __init__(self, frequency: float, jitter: float, rng: np.random.Generator, phase0: float):
        self.frequency = frequency
        self.jitter = jitter
        self.rng = rng
        self.phase0 = phase0
        self._phase = phase0
        self._last_t = 0.0
        self._boundary = phase0 + 2.0 * math.pi
        self._cycle_freq = self._draw()

    def _draw(self) -> float:
        if self.jitter == 0.0:
            return self.frequency
        factor = 1.0 + self.jitter * self.rng.standard_normal()
        return self.frequency * max(factor, 0.1)

    def at(self, t: float) -> float:
        if self.jitter == 0.0:
            return self.phase0 + 2.0 * math.pi * self.frequency * t
        if t < self._last_t:
            raise ValueError("render times must be non-decreasing with gait jitter")
        while True:
            dphase = 2.0 * math.pi * self._cycle_freq * (t - self._last_t)
            if self._phase + dphase < self._boundary:
                self._phase += dphase
                self._last_t = t
                return self._phase
            self._last_t += (self._boundary - self._phase) / (
                2.0 * math.pi * self._cycle_freq
            )
            self._phase = self._boundary
            self._boundary += 2.0 * math.pi
            self._cycle_freq = self._draw()


class FootageScene:
    """Stateful renderer for grayscale convoy footage.

    Background sits at a constant level plus optional Gaussian pixel noise;
    the target body renders brighter, and its flipper patch oscillates
    between the configured extremes at the gait frequency.
    """

    def __init__(
        self,
        camera: CameraModel = CameraModel(),
        target: TargetModel = TargetModel(),
        rng: np.random.Generator | None = None,
        background: float = 0.4,
        body_intensity: float = 0.85,
        flipper_range: tuple[float, float] = (0.15, 0.95),
        noise_sigma: float = 0.02,
        gait_phase0: float | None = None,
    ):
        self.camera = camera
        self.target = target
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.background = background
        self.body_intensity = body_intensity
        self.flipper_range = flipper_range
        self.noise_sigma = noise_sigma
        phase0 = (
            float(self.rng.uniform(0.0, 2.0 * math.pi))
            if gait_phase0 is None
            else gait_phase0
        )
        self._gait = _GaitPhase(target.gait_frequency, target.gait_jitter, self.rng, phase0)

    def _pixel_rect(self, box: BoundingBox) -> tuple[int, int, int, int]:
        w, h = self.camera.image_width, self.camera.image_height
        x0 = int(round(box.x * w))
        x1 = int(round((box.x + box.w) * w))
        y0 = int(round(box.y * h))
        y1 = int(round((box.y + box.h) * h))
        return x0, x1, y0, y1

    def render(self, leader: Pose, follower: Pose, t: float) -> IntensityGrid:
        cam = self.camera
        img = np.full((cam.image_height, cam.image_width), self.background)
        if self.noise_sigma > 0:
            img += self.rng.normal(0.0, self.noise_sigma, img.shape)
        phase = self._gait.at(t)

        body = project_bbox(cam, follower, leader, self.target)
        if body is not None:
            x0, x1, y0, y1 = self._pixel_rect(body)
            img[y0:y1, x0:x1] = self.body_intensity
            flipper = _project_rect(
                cam,
                follower,
                np.asarray(leader.position)
                + self.target.flipper_offset[0] * leader.left()
                + np.array([0.0, 0.0, self.target.flipper_offset[1]]),
                leader.left(),
                np.array([0.0, 0.0, 1.0]),
                self.target.flipper_size[0] / 2.0,
                self.target.flipper_size[1] / 2.0,
            )
            if flipper is not None:
                lo, hi = self.flipper_range
                level = lo + (hi - lo) * 0.5 * (1.0 + math.sin(phase))
                x0, x1, y0, y1 = self._pixel_rect(flipper)
                img[y0:y1, x0:x1] = level

        np.clip(img, 0.0, 1.0, out=img)
        return IntensityGrid(cam.image_width, cam.image_height, img, timestamp=t)

    def render_sequence(
        self, leader: Pose, follower: Pose, frame_count: int, fps: float
    ) -> list[IntensityGrid]:
        """Static-pose footage: frame i is rendered at time i/fps."""
        return [self.render(leader, follower, i / fps) for i in range(frame_count)]


# ---------------------------------------------------------------------------
# detector noise model

@dataclass(frozen=True)
class DetectorNoise:
    """Field-statistics-shaped detection noise.

    Misses concentrate on small boxes, detected centers carry Gaussian bias,
    sizes carry log-normal scatter, and confidence tracks the achieved
    overlap with the truth.
    """

    miss_prob_small: float = 0.30
    miss_prob_base: float = 0.05
    small_area: float = 0.20
    center_sigma: float = 0.05
    scale_sigma: float = 0.02
    confidence_sigma: float = 0.10
    false_positive_prob: float = 0.01

    @classmethod
    def noiseless(cls) -> "DetectorNoise":
        return cls(0.0, 0.0, 0.20, 0.0, 0.0, 0.0, 0.0)


def noisy_detector(
    true_box: BoundingBox | None,
    rng: np.random.Generator,
    noise: DetectorNoise = DetectorNoise(),
) -> BoundingBox | None:
    """Corrupt a ground-truth box the way the field detector statistics do."""
    if true_box is None:
        if noise.false_positive_prob > 0 and rng.uniform() < noise.false_positive_prob:
            cx, cy = rng.uniform(0.25, 0.75, 2)
            w, h = rng.uniform(0.05, 0.30, 2)
            conf = float(np.clip(rng.normal(0.35, 0.15), 0.0, 1.0))
            return clip_box_to_image(cx - w / 2.0, cy - h / 2.0, w, h, conf)
        return None

    area = true_box.w * true_box.h
    miss_prob = noise.miss_prob_small if area < noise.small_area else noise.miss_prob_base
    if miss_prob > 0 and rng.uniform() < miss_prob:
        return None

    if noise.center_sigma == 0.0 and noise.scale_sigma == 0.0:
        boxed = replace(true_box, p=1.0)
    else:
        dx, dy = rng.normal(0.0, noise.center_sigma, 2)
        sw, sh = np.exp(rng.normal(0.0, noise.scale_sigma, 2))
        w = min(true_box.w * sw, 1.0)
        h = min(true_box.h * sh, 1.0)
        cx = true_box.x + true_box.w / 2.0 + dx
        cy = true_box.y + true_box.h / 2.0 + dy
        x = min(max(cx - w / 2.0, 0.0), 1.0 - w)
        y = min(max(cy - h / 2.0, 0.0), 1.0 - h)
        boxed = BoundingBox(x, y, w, h, 1.0)
    overlap = iou(boxed, true_box)
    conf = (
        overlap
        if noise.confidence_sigma == 0.0
        else float(np.clip(overlap + rng.normal(0.0, noise.confidence_sigma), 0.0, 1.0))
    )
    return replace(boxed, p=conf)


# ---------------------------------------------------------------------------
# closed-loop convoy run

@dataclass(frozen=True)
class TraceRecord:
    t: float
    leader: Pose
    follower: Pose
    true_box: BoundingBox | None
    detection: BoundingBox | None
    command: ControlCommand


@dataclass
class SimTrace:
    records: list[TraceRecord]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class ConvoyConfig:
    duration: float = 60.0
    physics_rate: float = 50.0
    detector_rate: float = 7.0
    seed: int = 0
    script: TrajectoryScript = field(
        default_factory=lambda: forward_script(0.6, Pose(position=(2.0, 0.0, 0.0)))
    )
    initial_follower: Pose = field(default_factory=Pose)
    servo: ServoConfig = field(default_factory=ServoConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    target: TargetModel = field(default_factory=TargetModel)
    detector_noise: DetectorNoise = field(default_factory=DetectorNoise)
    # intervals [start, end) during which the detector is forced blind
    occlusions: tuple[tuple[float, float], ...] = ()
    # constant water-current drift applied to the follower, m/s
    current: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        for name in ("physics_rate", "detector_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _occluded(t: float, occlusions: tuple[tuple[float, float], ...]) -> bool:
    return any(start <= t < end for start, end in occlusions)


def run_convoy(config: ConvoyConfig) -> SimTrace:
    """Run the fixed-step convoy loop and return the full trace.

    Physics advances every tick; the detector and the servo fire at their
    own rates on the ticks that cross their schedules. Detections are
    latched between detector ticks, commands between control ticks. Equal
    seeds and configs give bit-identical traces.
    """
    dt = 1.0 / config.physics_rate
    n_ticks = round(config.duration * config.physics_rate)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])

    leader = leader_trajectory(config.script, 0.0)
    follower = config.initial_follower
    servo_state = ServoState.initial(config.servo)
    latched: BoundingBox | None = None
    command = STOP_COMMAND
    det_i = 0
    ctl_i = 0
    records = []
    drift = np.asarray(config.current)

    for k in range(n_ticks):
        t = k / config.physics_rate
        true_box = project_bbox(config.camera, follower, leader, config.target)

        if t >= det_i / config.detector_rate - 1e-12:
            if _occluded(t, config.occlusions):
                latched = None
            else:
                latched = noisy_detector(true_box, rng, config.detector_noise)
            det_i += 1
        if t >= ctl_i / config.servo.command_rate - 1e-12:
            command, servo_state = servo_update(servo_state, latched, t)
            ctl_i += 1

        records.append(TraceRecord(t, leader, follower, true_box, latched, command))

        leader = leader_trajectory(config.script, (k + 1) / config.physics_rate)
        follower = step_follower(follower, command, dt)
        if drift.any():
            follower = replace(
                follower, position=tuple(np.asarray(follower.position) + drift * dt)
            )

    return SimTrace(records)


def _trace_frame_records(trace: SimTrace, fps: float):
    """Yield (frame_index, record, frame_time) sampling the trace at fps."""
    records = trace.records
    if not records:
        return
    idx = 0
    end = records[-1].t
    i = 0
    while i / fps <= end + 1e-12:
        t = i / fps
        while idx + 1 < len(records) and records[idx + 1].t <= t + 1e-12:
            idx += 1
        yield i, records[idx], t
        i += 1


def render_trace_frames(
    trace: SimTrace, scene: FootageScene, fps: float = 15.0
) -> list[IntensityGrid]:
    """Replay a trace into footage at the given frame rate.

    Each frame samples the most recent trace record at or before its
    timestamp, so footage is a pure function of the trace and scene.
    """
    return [
        scene.render(record.leader, record.follower, t)
        for _, record, t in _trace_frame_records(trace, fps)
    ]


def trace_annotations(trace: SimTrace, fps: float = 15.0) -> list[Annotation]:
    """Ground-truth annotations aligned with render_trace_frames output."""
    return [
        Annotation(i, record.true_box is not None, record.true_box)
        for i, record, _ in _trace_frame_records(trace, fps)
    ]
