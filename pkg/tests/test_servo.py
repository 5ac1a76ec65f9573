import pytest

from uwconvoy.geometry import BoundingBox
from uwconvoy.servo import (
    STOP_COMMAND,
    ControlCommand,
    PidState,
    ServoConfig,
    ServoState,
    compute_errors,
    pid_step,
    servo_update,
)

CFG = ServoConfig()

# centered box with exactly the desired area (0.5)
CENTERED_AT_SETPOINT = BoundingBox(0.0, 0.25, 1.0, 0.5, 1.0)


def test_errors_at_setpoint_are_zero():
    assert compute_errors(CENTERED_AT_SETPOINT, CFG) == (0.0, 0.0, 0.0)


def test_errors_offcenter_box():
    # center (0.7, 0.5), area 0.6*0.5/0.6 ... chosen to equal the desired 0.5
    box = BoundingBox(0.4, 0.5 - 0.5 / 0.6 / 2, 0.6, 0.5 / 0.6, 1.0)
    dx, dy, da = compute_errors(box, CFG)
    assert dx == pytest.approx(0.2, abs=1e-12)
    assert dy == pytest.approx(0.0, abs=1e-12)
    assert da == pytest.approx(0.0, abs=1e-12)


def test_errors_area_surplus():
    box = BoundingBox(0.0, 0.15, 1.0, 0.7, 1.0)  # centered, area 0.7
    dx, dy, da = compute_errors(box, CFG)
    assert (dx, dy) == (0.0, 0.0)
    assert da == pytest.approx(-0.2, abs=1e-12)


def test_pid_zero_error_zero_history():
    out, _ = pid_step(PidState(kp=1.0, ki=0.5, kd=0.2), 0.0, 0.1)
    assert out == 0.0


def test_pid_pure_proportional():
    out, _ = pid_step(PidState(kp=1.0), 0.3, 0.1)
    assert out == pytest.approx(0.3, abs=1e-12)


def test_pid_two_step_integral():
    state = PidState(kp=0.5, ki=0.1)
    out1, state = pid_step(state, 0.2, 0.1)
    assert out1 == pytest.approx(0.102, abs=1e-12)
    out2, state = pid_step(state, 0.2, 0.1)
    assert out2 == pytest.approx(0.104, abs=1e-12)


def test_pid_output_saturation_and_antiwindup():
    state = PidState(kp=10.0, ki=1.0, output_bounds=(-0.5, 0.5), integral_bounds=(-0.1, 0.1))
    out, state = pid_step(state, 1.0, 1.0)
    assert out == 0.5
    assert state.integral == 0.1
    with pytest.raises(ValueError):
        pid_step(state, 0.1, 0.0)


def test_servo_stop_after_timeout():
    state = ServoState.initial(CFG)
    _, state = servo_update(state, CENTERED_AT_SETPOINT, 0.0)
    cmd, state = servo_update(state, None, 2.5)
    assert cmd == STOP_COMMAND
    assert state.yaw_pid.integral == 0.0


def test_servo_setpoint_gives_zero_command():
    state = ServoState.initial(CFG)
    cmd, _ = servo_update(state, CENTERED_AT_SETPOINT, 0.0)
    assert cmd == ControlCommand(0.0, 0.0, 0.0, 0.0, 0.0)


def test_servo_forward_clamped_at_zero_when_too_close():
    state = ServoState.initial(CFG)
    too_big = BoundingBox(0.0, 0.15, 1.0, 0.7, 1.0)  # area 0.7 > desired
    cmd, _ = servo_update(state, too_big, 0.0)
    assert cmd.forward_speed == 0.0


def test_servo_never_seen_stops():
    cmd, _ = servo_update(ServoState.initial(CFG), None, 0.0)
    assert cmd == STOP_COMMAND


def test_servo_holds_last_command_within_timeout():
    state = ServoState.initial(CFG)
    small = BoundingBox(0.4, 0.4, 0.2, 0.2, 1.0)  # far target, forward > 0
    cmd0, state = servo_update(state, small, 0.0)
    assert cmd0.forward_speed > 0.0
    cmd1, state = servo_update(state, None, 0.5)
    assert cmd1 == cmd0
    cmd2, state = servo_update(state, None, 1.9)
    assert cmd2 == cmd0
    cmd3, state = servo_update(state, None, 2.1)
    assert cmd3 == STOP_COMMAND


def test_servo_stop_rule_holds_for_every_late_update():
    state = ServoState.initial(CFG)
    _, state = servo_update(state, CENTERED_AT_SETPOINT, 0.0)
    for now in (2.01, 3.0, 7.5, 30.0):
        cmd, state = servo_update(state, None, now)
        assert cmd == STOP_COMMAND


def test_servo_mirror_negates_yaw():
    box = BoundingBox(0.55, 0.25, 0.4, 0.5, 1.0)
    mirrored = BoundingBox(1.0 - 0.55 - 0.4, 0.25, 0.4, 0.5, 1.0)
    cmd_a, _ = servo_update(ServoState.initial(CFG), box, 0.0)
    cmd_b, _ = servo_update(ServoState.initial(CFG), mirrored, 0.0)
    assert cmd_a.yaw_rate == pytest.approx(-cmd_b.yaw_rate, abs=1e-12)
    assert cmd_a.yaw_rate != 0.0


def test_servo_vertical_sign_and_limits():
    state = ServoState.initial(CFG)
    low_target = BoundingBox(0.3, 0.7, 0.4, 0.3, 1.0)  # center y = 0.85, below middle
    cmd, _ = servo_update(state, low_target, 0.0)
    assert cmd.vertical_speed < 0.0  # descend toward a low target (z-up frame)
    assert abs(cmd.vertical_speed) <= CFG.vertical_speed_limit
    assert abs(cmd.yaw_rate) <= CFG.yaw_rate_limit
    assert 0.0 <= cmd.forward_speed <= CFG.forward_speed_limit


def test_servo_command_saturation_random():
    import numpy as np

    rng = np.random.default_rng(8)
    state = ServoState.initial(CFG)
    t = 0.0
    for _ in range(200):
        t += 0.1
        if rng.uniform() < 0.2:
            det = None
        else:
            w = rng.uniform(0.05, 0.9)
            h = rng.uniform(0.05, 0.9)
            det = BoundingBox(rng.uniform(0, 1 - w), rng.uniform(0, 1 - h), w, h, 1.0)
        cmd, state = servo_update(state, det, t)
        assert abs(cmd.yaw_rate) <= CFG.yaw_rate_limit
        assert abs(cmd.vertical_speed) <= CFG.vertical_speed_limit
        assert 0.0 <= cmd.forward_speed <= CFG.forward_speed_limit
        assert cmd.pitch_rate == 0.0 and cmd.roll_rate == 0.0


def test_servo_deterministic_sequences():
    inputs = [
        (BoundingBox(0.3, 0.3, 0.3, 0.3, 1.0), 0.0),
        (None, 0.1),
        (BoundingBox(0.35, 0.3, 0.3, 0.3, 1.0), 0.2),
        (BoundingBox(0.4, 0.35, 0.25, 0.25, 1.0), 0.3),
        (None, 3.0),
    ]

    def run():
        state = ServoState.initial(CFG)
        out = []
        for det, now in inputs:
            cmd, state = servo_update(state, det, now)
            out.append(cmd)
        return out

    assert run() == run()


def test_servo_time_regression_rejected():
    state = ServoState.initial(CFG)
    _, state = servo_update(state, CENTERED_AT_SETPOINT, 1.0)
    with pytest.raises(ValueError):
        servo_update(state, CENTERED_AT_SETPOINT, 0.5)


def test_servo_config_validation():
    with pytest.raises(ValueError):
        ServoConfig(desired_area=0.0)
    with pytest.raises(ValueError):
        ServoConfig(command_rate=0.0)
    with pytest.raises(ValueError):
        ServoConfig(loss_timeout=-1.0)
