import numpy as np
import pytest

from tiltmpc import so3
from tiltmpc.errors import AttitudeAntipodal, GimbalDegenerate


def random_quats(rng, n):
    return so3.quat_normalize(rng.normal(size=(n, 4)))


class TestQuatMultiply:
    def test_identity(self):
        q = so3.quat_from_axis_angle([0.3, -0.5, 0.8], 1.1)
        np.testing.assert_allclose(so3.quat_multiply(so3.IDENTITY_QUAT, q), q, atol=1e-15)

    def test_inverse_gives_identity(self):
        q = so3.quat_from_axis_angle([1.0, 2.0, -1.0], 0.7)
        np.testing.assert_allclose(so3.quat_multiply(q, so3.quat_inverse(q)), so3.IDENTITY_QUAT, atol=1e-15)

    def test_compose_two_quarter_turns(self):
        # Oracle: compose the rotation matrices and convert back.
        q90 = so3.quat_from_axis_angle([0, 0, 1], np.pi / 2)
        composed = so3.quat_multiply(q90, q90)
        oracle = so3.rotmat_to_quat(so3.rotz(np.pi / 2) @ so3.rotz(np.pi / 2))
        np.testing.assert_allclose(composed, oracle, atol=1e-12)
        np.testing.assert_allclose(composed, [0.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_matches_rotation_composition(self):
        rng = np.random.default_rng(7)
        for qa, qb in zip(random_quats(rng, 20), random_quats(rng, 20)):
            r = so3.quat_to_rotmat(so3.quat_multiply(qa, qb))
            np.testing.assert_allclose(r, so3.quat_to_rotmat(qa) @ so3.quat_to_rotmat(qb), atol=1e-12)


class TestQuatToRotmat:
    def test_identity(self):
        np.testing.assert_allclose(so3.quat_to_rotmat(so3.IDENTITY_QUAT), np.eye(3), atol=1e-15)

    def test_half_turn_about_x(self):
        np.testing.assert_allclose(
            so3.quat_to_rotmat(np.array([0.0, 1.0, 0.0, 0.0])), np.diag([1.0, -1.0, -1.0]), atol=1e-15
        )

    def test_matches_quaternion_sandwich(self):
        rng = np.random.default_rng(11)
        q = random_quats(rng, 1)[0]
        r = so3.quat_to_rotmat(q)
        for v in rng.normal(size=(100, 3)):
            np.testing.assert_allclose(r @ v, so3.quat_rotate(q, v), atol=1e-12)

    def test_orthonormal_det_plus_one(self):
        rng = np.random.default_rng(3)
        for q in random_quats(rng, 50):
            r = so3.quat_to_rotmat(q)
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_round_trip_with_rotmat_to_quat(self):
        rng = np.random.default_rng(19)
        for q in random_quats(rng, 100):
            back = so3.rotmat_to_quat(so3.quat_to_rotmat(q))
            np.testing.assert_allclose(back, so3.quat_normalize(q), atol=1e-9)


class TestAttitudeError:
    def test_zero_for_equal(self):
        q = so3.quat_from_euler(0.2, -0.1, 0.4)
        np.testing.assert_allclose(so3.attitude_error(q, q), np.zeros(3), atol=1e-12)

    def test_small_yaw_rotation(self):
        # 10 deg about z: half-angle closed form gives e_z = tan(5 deg).
        q_ref = so3.quat_from_axis_angle([0, 0, 1], np.deg2rad(10.0))
        e = so3.attitude_error(so3.IDENTITY_QUAT, q_ref)
        np.testing.assert_allclose(e, [0.0, 0.0, np.tan(np.deg2rad(5.0))], atol=1e-12)

    def test_antipodal_raises(self):
        q_ref = so3.quat_from_axis_angle([1, 0, 0], np.pi)
        with pytest.raises(AttitudeAntipodal):
            so3.attitude_error(so3.IDENTITY_QUAT, q_ref)

    def test_recovers_error_vector(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            q = random_quats(rng, 1)[0]
            e = rng.uniform(-0.5, 0.5, size=3)
            q_ref = so3.quat_multiply(q, so3.quat_from_error_vector(e))
            np.testing.assert_allclose(so3.attitude_error(q, q_ref), e, atol=1e-9)


class TestYaw:
    def test_identity(self):
        assert so3.yaw_of(so3.IDENTITY_QUAT) == 0.0

    def test_pure_yaw(self):
        q = so3.quat_from_euler(0.0, 0.0, np.deg2rad(30.0))
        assert so3.yaw_of(q) == pytest.approx(0.5235987755982988, abs=1e-12)

    def test_yaw_with_pitch(self):
        # Oracle: build from ZYX angles and re-extract.
        q = so3.quat_from_euler(0.0, np.deg2rad(20.0), np.deg2rad(30.0))
        assert so3.yaw_of(q) == pytest.approx(np.deg2rad(30.0), abs=1e-12)

    def test_yaw_of_rotz_sweep(self):
        for psi in np.linspace(-np.pi + 1e-9, np.pi, 37):
            q = so3.rotmat_to_quat(so3.rotz(psi))
            assert so3.yaw_of(q) == pytest.approx(psi, abs=1e-12)

    def test_gimbal_degenerate(self):
        q = so3.quat_from_euler(0.0, np.pi / 2, 0.0)
        with pytest.raises(GimbalDegenerate):
            so3.yaw_of(q)


class TestErrorEuler:
    def test_zero_for_equal(self):
        q = so3.quat_from_euler(0.7, 0.3, -0.2)
        np.testing.assert_allclose(so3.error_euler(q, q), np.zeros(3), atol=1e-12)

    def test_single_axis_roll(self):
        q_ref = so3.quat_from_euler(np.deg2rad(45.0), 0.0, 0.0)
        q = so3.quat_from_euler(np.deg2rad(50.0), 0.0, 0.0)
        np.testing.assert_allclose(so3.error_euler(q, q_ref), [np.deg2rad(5.0), 0.0, 0.0], atol=1e-12)

    def test_magnitude_close_to_geodesic_for_small_errors(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            q_ref = random_quats(rng, 1)[0]
            axis = rng.normal(size=3)
            angle = rng.uniform(0.01, np.deg2rad(10.0))
            q = so3.quat_multiply(q_ref, so3.quat_from_axis_angle(axis, angle))
            geodesic = 2.0 * np.arccos(np.clip(abs(np.dot(q, q_ref)), 0, 1))
            mag = np.linalg.norm(so3.error_euler(q, q_ref))
            assert abs(mag - geodesic) < 0.15 * geodesic


class TestBatching:
    def test_batched_ops_match_loop(self):
        rng = np.random.default_rng(41)
        qa = random_quats(rng, 8)
        qb = random_quats(rng, 8)
        v = rng.normal(size=(8, 3))
        batched = so3.quat_multiply(qa, qb)
        rot = so3.quat_rotate(qa, v)
        mats = so3.quat_to_rotmat(qa)
        err = so3.attitude_error(qa, qb)
        for i in range(8):
            np.testing.assert_allclose(batched[i], so3.quat_multiply(qa[i], qb[i]), atol=1e-14)
            np.testing.assert_allclose(rot[i], so3.quat_rotate(qa[i], v[i]), atol=1e-14)
            np.testing.assert_allclose(mats[i], so3.quat_to_rotmat(qa[i]), atol=1e-14)
            np.testing.assert_allclose(err[i], so3.attitude_error(qa[i], qb[i]), atol=1e-14)
