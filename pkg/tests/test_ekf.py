import numpy as np
import pytest

from tiltmpc import so3
from tiltmpc.dynamics import InertialParams, RigidState, gravity_compensation_wrench, rk4_step
from tiltmpc.ekf import (
    EkfNoise,
    EkfState,
    disturbance_in_body,
    ekf_predict,
    ekf_update,
    error_state_jacobian,
    PoseMeasurement,
)

PARAMS = InertialParams()


def hover_ekf_state():
    return EkfState.from_rigid(RigidState.hover().as_vector())


def inject_error(state: EkfState, delta: np.ndarray) -> EkfState:
    out = EkfState(
        pos=state.pos + delta[0:3],
        vel=state.vel + delta[3:6],
        quat=so3.quat_normalize(so3.hamilton(state.quat, np.concatenate([[1.0], 0.5 * delta[6:9]])), canonical=False),
        omega=state.omega + delta[9:12],
        dist_force_local=state.dist_force_local + delta[12:15],
        dist_torque=state.dist_torque + delta[15:18],
        cov=state.cov,
    )
    return out


def error_coords(ref: EkfState, other: EkfState) -> np.ndarray:
    return np.concatenate(
        [
            other.pos - ref.pos,
            other.vel - ref.vel,
            2.0 * so3.attitude_error(ref.quat, so3.quat_normalize(other.quat)),
            other.omega - ref.omega,
            other.dist_force_local - ref.dist_force_local,
            other.dist_torque - ref.dist_torque,
        ]
    )


class TestPredict:
    def test_equilibrium_mean_unchanged_cov_grows(self):
        s = hover_ekf_state()
        wrench = gravity_compensation_wrench(s.quat, PARAMS)
        out = ekf_predict(s, wrench, 1e-3, EkfNoise(), PARAMS)
        np.testing.assert_allclose(out.rigid_vector(), s.rigid_vector(), atol=1e-12)
        assert np.trace(out.cov) > np.trace(s.cov)

    def test_local_force_accelerates_body_x(self):
        s = hover_ekf_state()
        s.dist_force_local = np.array([1.0, 0.0, 0.0])
        wrench = gravity_compensation_wrench(s.quat, PARAMS)
        dt = 1e-3
        out = ekf_predict(s, wrench, dt, EkfNoise(), PARAMS)
        np.testing.assert_allclose(out.vel, [dt / PARAMS.mass, 0.0, 0.0], atol=1e-10)

    def test_jacobian_matches_central_differences(self):
        # Generic operating point with attitude, rates and disturbances.
        s = EkfState(
            pos=np.array([0.3, -0.2, 1.1]),
            vel=np.array([0.4, 0.1, -0.2]),
            quat=so3.quat_from_euler(0.25, -0.3, 0.8),
            omega=np.array([0.3, -0.5, 0.2]),
            dist_force_local=np.array([1.2, -0.7, 0.5]),
            dist_torque=np.array([0.04, 0.02, -0.05]),
        )
        wrench = np.array([1.0, -2.0, 44.0, 0.1, -0.05, 0.08])
        dt = 1e-3
        noise = EkfNoise()

        f_cont = error_state_jacobian(s, PARAMS)
        f2 = f_cont @ f_cont
        f_d = np.eye(18) + dt * f_cont + dt**2 / 2 * f2 + dt**3 / 6 * f2 @ f_cont

        base = ekf_predict(s, wrench, dt, noise, PARAMS)
        eps = 1e-6
        fd = np.zeros((18, 18))
        for j in range(18):
            dplus = np.zeros(18)
            dplus[j] = eps
            plus = ekf_predict(inject_error(s, dplus), wrench, dt, noise, PARAMS)
            minus = ekf_predict(inject_error(s, -dplus), wrench, dt, noise, PARAMS)
            fd[:, j] = (error_coords(base, plus) - error_coords(base, minus)) / (2 * eps)
        np.testing.assert_allclose(f_d, fd, atol=1e-5)


class TestUpdate:
    def test_exact_measurement_keeps_state_shrinks_cov(self):
        s = hover_ekf_state()
        meas = PoseMeasurement(pos=s.pos.copy(), quat=s.quat.copy())
        out, accepted = ekf_update(s, meas, EkfNoise())
        assert accepted
        np.testing.assert_allclose(out.rigid_vector(), s.rigid_vector(), atol=1e-12)
        assert np.trace(out.cov) < np.trace(s.cov)

    def test_antipodal_measurement_sign_handled(self):
        s = hover_ekf_state()
        meas = PoseMeasurement(pos=s.pos.copy(), quat=-s.quat)
        out, accepted = ekf_update(s, meas, EkfNoise())
        assert accepted
        np.testing.assert_allclose(out.quat, s.quat, atol=1e-12)

    def test_outlier_rejected(self):
        s = hover_ekf_state()
        meas = PoseMeasurement(pos=s.pos + np.array([5.0, 0.0, 0.0]), quat=s.quat.copy())
        out, accepted = ekf_update(s, meas, EkfNoise())
        assert not accepted
        np.testing.assert_allclose(out.rigid_vector(), s.rigid_vector())


class TestDisturbanceInBody:
    def test_identity_attitude_passthrough(self):
        s = hover_ekf_state()
        s.dist_force_local = np.array([1.0, -2.0, 0.5])
        s.dist_torque = np.array([0.1, 0.0, -0.1])
        np.testing.assert_allclose(disturbance_in_body(s), [1.0, -2.0, 0.5, 0.1, 0.0, -0.1], atol=1e-14)

    def test_pure_yaw_cancels(self):
        s = hover_ekf_state()
        s.quat = so3.quat_from_euler(0.0, 0.0, 1.2)
        s.dist_force_local = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(disturbance_in_body(s)[:3], s.dist_force_local, atol=1e-12)

    def test_pitch_rotates_against_body(self):
        s = hover_ekf_state()
        s.quat = so3.quat_from_euler(0.0, np.deg2rad(30.0), 0.0)
        s.dist_force_local = np.array([1.0, 0.0, 0.0])
        rot = so3.quat_to_rotmat(s.quat)
        np.testing.assert_allclose(disturbance_in_body(s)[:3], rot.T @ [1.0, 0.0, 0.0], atol=1e-12)


def pd_hover_wrench(x: np.ndarray, params: InertialParams) -> np.ndarray:
    """Simple PD hover hold used to keep the estimation rig stable."""
    q = x[3:7]
    rot = so3.quat_to_rotmat(q)
    acc_world = -8.0 * x[0:3] - 5.0 * (rot @ x[7:10])
    force = params.mass * rot.T @ (acc_world - params.gravity)
    att_err = so3.attitude_error(q, so3.IDENTITY_QUAT)
    torque = params.inertia @ (8.0 * att_err - 3.0 * x[10:13])
    return np.concatenate([force, torque])


class TestClosedLoopEstimation:
    def test_constant_disturbance_recovery(self):
        rng = np.random.default_rng(42)
        noise = EkfNoise()
        true_force_local = np.array([1.0, 0.5, -0.5])
        true_torque = np.array([0.02, -0.02, 0.05])
        x = RigidState.hover().as_vector()
        ekf = EkfState.from_rigid(x)
        dt = 1e-3
        min_eig = 1.0
        for k in range(3000):
            wrench = pd_hover_wrench(x, PARAMS)
            psi = so3.yaw_of(x[3:7])
            rot = so3.quat_to_rotmat(x[3:7])
            body_force = rot.T @ so3.rotz(psi) @ true_force_local
            residual = np.concatenate([body_force, true_torque])
            x = rk4_step(x, wrench, residual, PARAMS, dt)
            ekf = ekf_predict(ekf, wrench, dt, noise, PARAMS)
            if (k + 1) % 10 == 0:
                meas = PoseMeasurement(
                    pos=x[0:3] + noise.meas_sigma_pos * rng.normal(size=3),
                    quat=so3.quat_multiply(
                        x[3:7], so3.quat_from_error_vector(0.5 * noise.meas_sigma_att * rng.normal(size=3))
                    ),
                )
                ekf, _ = ekf_update(ekf, meas, noise)
            if k % 100 == 0:
                min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(ekf.cov))))
        assert min_eig > -1e-10
        force_err = np.linalg.norm(ekf.dist_force_local - true_force_local)
        torque_err = np.linalg.norm(ekf.dist_torque - true_torque)
        assert force_err < 0.05 * np.linalg.norm(true_force_local)
        assert torque_err < 0.05 * np.linalg.norm(true_torque)

    def test_exact_tracking_with_perfect_setup(self):
        # Zero rigid process noise, disturbance known exactly, measurements
        # exact: the estimate replicates the plant trajectory.
        noise = EkfNoise(pos_psd=0.0, vel_psd=0.0, att_psd=0.0, omega_psd=0.0)
        x = RigidState.hover().as_vector()
        ekf = EkfState.from_rigid(x)
        wrench = gravity_compensation_wrench(x[3:7], PARAMS) + np.array([0.5, -0.2, 0.0, 0.01, 0.0, -0.005])
        for k in range(200):
            x = rk4_step(x, wrench, np.zeros(6), PARAMS, 1e-3)
            ekf = ekf_predict(ekf, wrench, 1e-3, noise, PARAMS)
            if (k + 1) % 10 == 0:
                ekf, accepted = ekf_update(ekf, PoseMeasurement(pos=x[0:3].copy(), quat=x[3:7].copy()), noise)
                assert accepted
        assert np.linalg.norm(ekf.rigid_vector() - x) < 1e-9
