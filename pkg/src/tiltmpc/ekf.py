"""Joint state and constant-disturbance estimation from pose measurements.

The filter carries the rigid state plus a constant disturbance wrench whose
force part lives in the local frame (world rotated by the platform yaw only),
so the estimate is invariant under pure yaw. Internally it is an error-state
EKF: the quaternion is corrected multiplicatively and the 18-dimensional
error covariance uses the minimal attitude parameterization
``[dp, dv, dtheta, domega, df_local, dtau]``.

Inputs are the commanded actuator wrench; measurements are noisy pose
samples. Measurements failing a chi-square innovation gate are rejected and
logged rather than fused.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .dynamics import InertialParams, dynamics, rk4

logger = logging.getLogger(__name__)

# chi-square 0.999 quantile, 6 degrees of freedom
INNOVATION_GATE = 22.457744484825323


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@dataclass
class EkfNoise:
    """Process and measurement covariance configuration.

    Process entries are continuous-time power spectral densities; the
    defaults are artifact tuning values (the underlying platform publishes
    none) and are exposed through the experiment config.
    """

    pos_psd: float = 1e-8
    vel_psd: float = 3e-4
    att_psd: float = 1e-6
    omega_psd: float = 1e-4
    force_psd: float = 4e-3  # (0.063 N)^2 per second
    torque_psd: float = 1e-5  # (0.0032 N m)^2 per second
    meas_sigma_pos: float = 0.002  # m
    meas_sigma_att: float = np.deg2rad(0.2)  # rad

    def process_psd(self) -> np.ndarray:
        return np.diag(
            [self.pos_psd] * 3
            + [self.vel_psd] * 3
            + [self.att_psd] * 3
            + [self.omega_psd] * 3
            + [self.force_psd] * 3
            + [self.torque_psd] * 3
        )

    def measurement_cov(self) -> np.ndarray:
        return np.diag([self.meas_sigma_pos**2] * 3 + [self.meas_sigma_att**2] * 3)


def default_initial_cov() -> np.ndarray:
    return np.diag([1e-4] * 3 + [2.5e-3] * 3 + [1e-4] * 3 + [2.5e-3] * 3 + [4.0] * 3 + [4e-2] * 3)


@dataclass
class EkfState:
    pos: np.ndarray
    vel: np.ndarray
    quat: np.ndarray
    omega: np.ndarray
    dist_force_local: np.ndarray
    dist_torque: np.ndarray
    cov: np.ndarray = field(default_factory=default_initial_cov)

    @staticmethod
    def from_rigid(x: np.ndarray, cov: np.ndarray | None = None) -> "EkfState":
        return EkfState(
            pos=x[0:3].copy(),
            vel=x[7:10].copy(),
            quat=x[3:7].copy(),
            omega=x[10:13].copy(),
            dist_force_local=np.zeros(3),
            dist_torque=np.zeros(3),
            cov=default_initial_cov() if cov is None else cov.copy(),
        )

    def rigid_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.quat, self.vel, self.omega])


def disturbance_in_body(state: EkfState) -> np.ndarray:
    """Estimated residual wrench in the body frame, (force, torque)."""
    psi = so3.yaw_of(state.quat)
    rot = so3.quat_to_rotmat(state.quat)
    force = rot.T @ so3.rotz(psi) @ state.dist_force_local
    return np.concatenate([force, state.dist_torque])


def _mean_derivative(x19: np.ndarray, wrench: np.ndarray, params: InertialParams) -> np.ndarray:
    """Derivative of the 19-dim mean ``[p q v w f_L tau]``; batched."""
    rigid = x19[..., 0:13]
    f_local = x19[..., 13:16]
    tau = x19[..., 16:19]
    q = rigid[..., 3:7]
    psi = so3.quat_to_euler(q)[..., 2]
    c, s = np.cos(psi), np.sin(psi)
    f_world = np.stack(
        [c * f_local[..., 0] - s * f_local[..., 1], s * f_local[..., 0] + c * f_local[..., 1], f_local[..., 2]],
        axis=-1,
    )
    f_body = so3.quat_rotate(so3.quat_conjugate(q), f_world)
    residual = np.concatenate([f_body, tau], axis=-1)
    out = np.zeros_like(x19)
    out[..., 0:13] = dynamics(rigid, wrench, residual, params)
    return out


def ekf_predict(state: EkfState, wrench: np.ndarray, dt: float, noise: EkfNoise, params: InertialParams) -> EkfState:
    """Propagate mean by RK4 and covariance by the error-state transition."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x19 = np.concatenate([state.rigid_vector(), state.dist_force_local, state.dist_torque])
    x_next = rk4(lambda x: _mean_derivative(x, wrench, params), x19, dt)
    x_next[3:7] = so3.quat_normalize(x_next[3:7], canonical=False)

    f_cont = error_state_jacobian(state, params)
    # third-order Taylor transition keeps the FD-validation tolerance at dt=1 ms
    f2 = f_cont @ f_cont
    f_d = np.eye(18) + dt * f_cont + (dt**2 / 2.0) * f2 + (dt**3 / 6.0) * f2 @ f_cont
    cov = f_d @ state.cov @ f_d.T + noise.process_psd() * dt
    cov = 0.5 * (cov + cov.T)
    return EkfState(
        pos=x_next[0:3],
        quat=x_next[3:7],
        vel=x_next[7:10],
        omega=x_next[10:13],
        dist_force_local=x_next[13:16],
        dist_torque=x_next[16:19],
        cov=cov,
    )


def error_state_jacobian(state: EkfState, params: InertialParams) -> np.ndarray:
    """Continuous-time Jacobian of the error dynamics.

    Error order: ``[dp, dv, dtheta, domega, df_local, dtau]``. The attitude
    block of the velocity row includes the yaw-coupling of the local-frame
    force parameterization, i.e. the sensitivity of ``R_B' R_z(psi(q)) f_L``
    to a multiplicative body-frame attitude perturbation.
    """
    rot = so3.quat_to_rotmat(state.quat)
    euler = so3.quat_to_euler(state.quat)
    roll, pitch, psi = euler
    rot_l = so3.rotz(psi)
    m = params.mass
    j_mat = params.inertia
    j_inv = params.inertia_inv

    f_body = rot.T @ rot_l @ state.dist_force_local
    e_z = np.array([0.0, 0.0, 1.0])
    yaw_coupling = rot.T @ _skew(e_z) @ rot_l @ state.dist_force_local
    dpsi_dtheta = np.array([0.0, np.sin(roll) / np.cos(pitch), np.cos(roll) / np.cos(pitch)])

    f = np.zeros((18, 18))
    f[0:3, 3:6] = rot
    f[0:3, 6:9] = -rot @ _skew(state.vel)
    f[3:6, 3:6] = -_skew(state.omega)
    f[3:6, 6:9] = _skew(rot.T @ params.gravity) + (_skew(f_body) + np.outer(yaw_coupling, dpsi_dtheta)) / m
    f[3:6, 9:12] = _skew(state.vel)
    f[3:6, 12:15] = rot.T @ rot_l / m
    f[6:9, 6:9] = -_skew(state.omega)
    f[6:9, 9:12] = np.eye(3)
    f[9:12, 9:12] = j_inv @ (_skew(j_mat @ state.omega) - _skew(state.omega) @ j_mat)
    f[9:12, 15:18] = j_inv
    return f


@dataclass
class PoseMeasurement:
    pos: np.ndarray
    quat: np.ndarray
    timestamp: float = 0.0


def ekf_update(state: EkfState, meas: PoseMeasurement, noise: EkfNoise, gate: float = INNOVATION_GATE):
    """Fuse one pose measurement. Returns ``(new_state, accepted)``.

    Measurements whose Mahalanobis distance exceeds the chi-square(6, 0.999)
    gate are rejected (state returned unchanged) and logged. Callers should
    stop gating after a few consecutive rejections (pass ``gate=inf``), since
    a run of rejections means the filter, not the data, has drifted.
    """
    innov = np.concatenate(
        [meas.pos - state.pos, 2.0 * so3.attitude_error(state.quat, so3.quat_normalize(meas.quat))]
    )
    h_mat = np.zeros((6, 18))
    h_mat[0:3, 0:3] = np.eye(3)
    h_mat[3:6, 6:9] = np.eye(3)
    r_mat = noise.measurement_cov()
    s_mat = h_mat @ state.cov @ h_mat.T + r_mat
    s_inv = np.linalg.inv(s_mat)
    maha = float(innov @ s_inv @ innov)
    if maha > gate:
        logger.warning("pose measurement rejected: mahalanobis %.1f > gate %.1f", maha, gate)
        return state, False

    gain = state.cov @ h_mat.T @ s_inv
    delta = gain @ innov
    i_kh = np.eye(18) - gain @ h_mat
    cov = i_kh @ state.cov @ i_kh.T + gain @ r_mat @ gain.T
    cov = 0.5 * (cov + cov.T)
    quat = so3.quat_normalize(so3.hamilton(state.quat, np.concatenate([[1.0], 0.5 * delta[6:9]])), canonical=False)
    return (
        EkfState(
            pos=state.pos + delta[0:3],
            vel=state.vel + delta[3:6],
            quat=quat,
            omega=state.omega + delta[9:12],
            dist_force_local=state.dist_force_local + delta[12:15],
            dist_torque=state.dist_torque + delta[15:18],
            cov=cov,
        ),
        True,
    )
