import numpy as np
import pytest

from tiltmpc import so3, trajectories


def check_velocity_consistency(traj, skip_times=(), tol=1e-3):
    """Finite-difference p_r against v_r and q_r against omega_r at 1 kHz."""
    dt = 1e-3
    t = np.arange(dt, traj.duration - dt, dt)
    keep = np.ones(len(t), dtype=bool)
    for s in skip_times:
        keep &= np.abs(t - s) > 5 * dt
    pos, vel, quat, omega = traj.sample(t)
    pos_p, _, quat_p, _ = traj.sample(t + dt)
    pos_m, _, quat_m, _ = traj.sample(t - dt)
    v_fd = (pos_p - pos_m) / (2 * dt)
    scale = max(1.0, np.max(np.linalg.norm(vel, axis=1)))
    assert np.max(np.linalg.norm((v_fd - vel)[keep], axis=1)) / scale < tol
    # body rate from the quaternion increment over 2*dt
    for i in np.flatnonzero(keep)[:: max(1, len(t) // 400)]:
        dq = so3.quat_multiply(so3.quat_conjugate(quat_m[i]), quat_p[i])
        w_fd = 2.0 * so3.attitude_error(so3.IDENTITY_QUAT, dq) / (2 * dt)
        assert np.linalg.norm(w_fd - omega[i]) < tol * max(1.0, np.linalg.norm(omega[i]))


class TestSquare:
    def test_corners_visited_in_order(self):
        traj = trajectories.square(leg=1.0, v_max=0.5)
        t_leg = traj.duration / 4.0
        expected = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]
        for k, (x, y) in enumerate(expected):
            point = traj.sample(min(k * t_leg, traj.duration))
            np.testing.assert_allclose(point.pos[:2], [x, y], atol=1e-9)

    def test_peak_speed_exact(self):
        traj = trajectories.square(leg=1.0, v_max=3.0)
        t = np.arange(0, traj.duration, 1e-3)
        _, vel, _, _ = traj.sample(t)
        assert abs(np.max(np.linalg.norm(vel, axis=1)) - 3.0) < 1e-9

    def test_closed(self):
        traj = trajectories.square(leg=1.0, v_max=1.0)
        start = traj.sample(0.0)
        end = traj.sample(traj.duration)
        np.testing.assert_allclose(start.pos, end.pos, atol=1e-9)

    def test_derivative_consistency(self):
        # Corners are passed at rest but with an acceleration jump, which the
        # central difference smears; exclude those four instants.
        traj = trajectories.square(leg=1.0, v_max=1.5)
        t_leg = traj.duration / 4.0
        check_velocity_consistency(traj, skip_times=[k * t_leg for k in range(1, 4)])


class TestAttitudeProfile:
    def test_max_roll_attained(self):
        traj = trajectories.attitude_profile(max_angle=np.deg2rad(45.0), duration=27.0)
        t = np.arange(0, traj.duration, 1e-3)
        _, _, quat, _ = traj.sample(t)
        rolls = so3.quat_to_euler(quat)[:, 0]
        assert np.max(rolls) == pytest.approx(np.deg2rad(45.0), abs=1e-4)
        assert np.min(rolls) == pytest.approx(-np.deg2rad(45.0), abs=1e-4)

    def test_position_constant(self):
        traj = trajectories.attitude_profile()
        t = np.arange(0, traj.duration, 0.01)
        pos, vel, _, _ = traj.sample(t)
        assert np.ptp(pos, axis=0).max() == 0.0
        assert np.all(vel == 0.0)

    def test_omega_consistency(self):
        traj = trajectories.attitude_profile(duration=12.0)
        check_velocity_consistency(traj)


class TestLemniscate:
    def test_slow_preset_speed_band(self):
        traj = trajectories.lemniscate_slow()
        assert traj.duration == 15.0
        t = np.arange(0, traj.duration, 1e-3)
        _, vel, _, _ = traj.sample(t)
        assert 0.85 <= np.max(np.linalg.norm(vel, axis=1)) <= 0.95

    def test_fast_preset_speed_band(self):
        traj = trajectories.lemniscate_fast()
        assert traj.duration == 5.5
        t = np.arange(0, traj.duration, 1e-3)
        _, vel, _, _ = traj.sample(t)
        assert 2.7 <= np.max(np.linalg.norm(vel, axis=1)) <= 3.0

    def test_pitch_peak(self):
        traj = trajectories.lemniscate_slow()
        t = np.arange(0, traj.duration, 1e-3)
        _, _, quat, _ = traj.sample(t)
        pitch = so3.quat_to_euler(quat)[:, 1]
        assert np.max(np.abs(pitch)) == pytest.approx(np.deg2rad(30.0), abs=np.deg2rad(0.5))

    def test_derivative_consistency(self):
        check_velocity_consistency(trajectories.lemniscate_slow())


class TestStepX:
    def test_unit_discontinuity(self):
        traj = trajectories.step_x(length=1.0, dwell=6.0)
        before = traj.sample(5.999)
        after = traj.sample(6.001)
        assert after.pos[0] - before.pos[0] == pytest.approx(1.0)

    def test_velocity_zero_everywhere(self):
        traj = trajectories.step_x()
        t = np.arange(0, traj.duration, 0.01)
        _, vel, _, _ = traj.sample(t)
        assert np.all(vel == 0.0)

    def test_dwell_enforced(self):
        with pytest.raises(ValueError):
            trajectories.step_x(dwell=2.0)


class TestCommon:
    @pytest.mark.parametrize("name", ["hover", "square", "attitude", "lemniscate_slow", "lemniscate_fast", "step_x"])
    def test_presets_deterministic(self, name):
        traj_a = trajectories.by_name(name)
        traj_b = trajectories.by_name(name)
        t = np.linspace(0, traj_a.duration * 1.1, 257)
        for arr_a, arr_b in zip(traj_a.sample(t), traj_b.sample(t)):
            np.testing.assert_array_equal(arr_a, arr_b)

    def test_hold_after_duration(self):
        traj = trajectories.square(leg=1.0, v_max=1.0)
        end = traj.sample(traj.duration + 5.0)
        np.testing.assert_allclose(end.pos, traj.sample(traj.duration).pos)
        assert np.all(end.vel == 0.0)

    def test_csv_round_trip(self, tmp_path):
        traj = trajectories.lemniscate_slow()
        t = np.arange(0, traj.duration + 1e-9, 0.01)
        rows = traj.reference_rows(t)
        path = tmp_path / "traj.csv"
        header = "t," + ",".join(f"c{i}" for i in range(13))
        np.savetxt(path, np.column_stack([t, rows]), delimiter=",", header=header, comments="")
        loaded = trajectories.from_csv(path)
        probe = np.arange(0.005, 14.0, 0.5)
        pos_l, vel_l, quat_l, _ = loaded.sample(probe)
        pos_t, vel_t, quat_t, _ = traj.sample(probe)
        np.testing.assert_allclose(pos_l, pos_t, atol=1e-4)
        np.testing.assert_allclose(vel_l, vel_t, atol=1e-3)
        assert np.max(np.abs(np.abs(np.sum(quat_l * quat_t, axis=1)) - 1.0)) < 1e-6
