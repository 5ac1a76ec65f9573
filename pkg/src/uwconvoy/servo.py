"""Image-based visual servoing from bounding-box errors.

The controller regulates three image-space errors (Fig.-style horizontal
offset, vertical offset, and area shortfall) into 5-DOF velocity commands:
a PID on the horizontal offset drives yaw rate, proportional gains map the
vertical offset to vertical speed and the area shortfall to forward speed.
Pitch and roll rates stay zero (left to the vehicle's attitude autopilot).
If no box arrives within the loss timeout the vehicle is stopped.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .geometry import BoundingBox, box_area, box_center


@dataclass(frozen=True)
class ControlCommand:
    """Velocity-level command for a 5-DOF vehicle."""

    yaw_rate: float = 0.0
    pitch_rate: float = 0.0
    roll_rate: float = 0.0
    forward_speed: float = 0.0
    vertical_speed: float = 0.0

    def is_stop(self) -> bool:
        return self == STOP_COMMAND


STOP_COMMAND = ControlCommand()


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


@dataclass(frozen=True)
class PidState:
    """Immutable PID controller state; stepping returns the successor."""

    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral: float = 0.0
    prev_error: float | None = None
    output_bounds: tuple[float, float] = (float("-inf"), float("inf"))
    integral_bounds: tuple[float, float] = (-10.0, 10.0)

    def reset(self) -> "PidState":
        return replace(self, integral=0.0, prev_error=None)


def pid_step(state: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One PID update; integral is clamped for anti-windup."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    integral = _clamp(state.integral + error * dt, *state.integral_bounds)
    derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    raw = state.kp * error + state.ki * integral + state.kd * derivative
    output = _clamp(raw, *state.output_bounds)
    return output, replace(state, integral=integral, prev_error=error)


@dataclass(frozen=True)
class ServoConfig:
    desired_area: float = 0.5
    command_rate: float = 10.0
    loss_timeout: float = 2.0
    # gains tuned against the closed-loop simulation; all configurable
    yaw_kp: float = 1.2
    yaw_ki: float = 0.05
    yaw_kd: float = 0.1
    depth_gain: float = 0.8
    speed_gain: float = 12.0
    yaw_rate_limit: float = 1.0
    vertical_speed_limit: float = 0.5
    forward_speed_limit: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.desired_area <= 1.0:
            raise ValueError(f"desired_area must be in (0, 1], got {self.desired_area}")
        if self.command_rate <= 0:
            raise ValueError("command_rate must be positive")
        if self.loss_timeout <= 0:
            raise ValueError("loss_timeout must be positive")

    def yaw_pid(self) -> PidState:
        return PidState(
            kp=self.yaw_kp,
            ki=self.yaw_ki,
            kd=self.yaw_kd,
            output_bounds=(-self.yaw_rate_limit, self.yaw_rate_limit),
            integral_bounds=(-2.0, 2.0),
        )


def compute_errors(box: BoundingBox, cfg: ServoConfig) -> tuple[float, float, float]:
    """Image-space errors (dx, dy, dA) for one observed box.

    dx, dy are the box center's offset from the image center; dA is the
    desired-minus-observed area, positive when the target looks too small
    (too far away).
    """
    cx, cy = box_center(box)
    return cx - 0.5, cy - 0.5, cfg.desired_area - box_area(box)


@dataclass(frozen=True)
class ServoState:
    """Controller state threaded through successive updates."""

    config: ServoConfig
    yaw_pid: PidState
    last_detection_time: float | None = None
    last_update_time: float | None = None
    last_command: ControlCommand = STOP_COMMAND

    @classmethod
    def initial(cls, config: ServoConfig = ServoConfig()) -> "ServoState":
        return cls(config=config, yaw_pid=config.yaw_pid())


def servo_update(
    state: ServoState, detection: BoundingBox | None, now: float
) -> tuple[ControlCommand, ServoState]:
    """Produce the command for one control tick.

    With a detection, commands follow the error mappings; without one the
    previous command is held until the loss timeout elapses, after which the
    vehicle stops and the yaw integrator resets. Call times must not go
    backwards.
    """
    cfg = state.config
    if state.last_update_time is not None and now < state.last_update_time:
        raise ValueError(
            f"time went backwards: {now} < {state.last_update_time}"
        )

    if detection is None:
        never_seen = state.last_detection_time is None
        if never_seen or now - state.last_detection_time > cfg.loss_timeout:
            stopped = replace(
                state,
                yaw_pid=state.yaw_pid.reset(),
                last_update_time=now,
                last_command=STOP_COMMAND,
            )
            return STOP_COMMAND, stopped
        return state.last_command, replace(state, last_update_time=now)

    if state.last_update_time is None or now == state.last_update_time:
        dt = 1.0 / cfg.command_rate
    else:
        dt = now - state.last_update_time

    dx, dy, d_area = compute_errors(detection, cfg)
    yaw_out, yaw_pid = pid_step(state.yaw_pid, dx, dt)
    # positive dx = target right of center = yaw clockwise (negative rate,
    # z-up convention); positive dy = target low in the image = descend
    command = ControlCommand(
        yaw_rate=-yaw_out,
        pitch_rate=0.0,
        roll_rate=0.0,
        forward_speed=(
            _clamp(cfg.speed_gain * d_area, 0.0, cfg.forward_speed_limit)
            if d_area > 0.0
            else 0.0
        ),
        vertical_speed=_clamp(
            -cfg.depth_gain * dy, -cfg.vertical_speed_limit, cfg.vertical_speed_limit
        ),
    )
    next_state = replace(
        state,
        yaw_pid=yaw_pid,
        last_detection_time=now,
        last_update_time=now,
        last_command=command,
    )
    return command, next_state
