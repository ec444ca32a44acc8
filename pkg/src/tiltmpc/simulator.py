"""Deterministic closed-loop plant: rigid body, actuator lag, sensors,
ground-truth disturbances, controller and estimator, stepped at 1 kHz.

Layout of one episode tick (time t):

1. due pose measurements (sampled earlier, delayed by the sensor latency)
   are fused into the disturbance observer;
2. on control ticks the active controller solves one real-time iteration
   from the true rigid state and its own command state, and the command
   state integrates the first optimized rate;
3. the actuator plant tracks the commanded tilt angles and thrusts through
   rate-limited first-order lags, the realized wrench and the ground-truth
   residual drive the rigid body one RK4 step, and the observer predicts
   with the commanded wrench.

Every random draw comes from named seeded generators with a fixed draw
schedule, so identical configs and seeds reproduce logs bitwise. Wall-clock
solver times are kept out of the main log table for the same reason; they
live in a sidecar.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .allocation import Allocation, PlatformGeometry
from .controllers import ActuatorMpc, ControllerConfig, WrenchMpc, post_mpc_correct
from .dynamics import InertialParams, gravity_compensation_wrench, rk4_step
from .ekf import INNOVATION_GATE, EkfNoise, EkfState, PoseMeasurement, disturbance_in_body, ekf_predict, ekf_update
from .errors import ConfigError
from .residual import ResidualModel, TrainingLog, build_features
from .trajectories import ReferenceTrajectory

logger = logging.getLogger(__name__)

RESIDUAL_MODES = ("nc", "in_mpc", "post_mpc", "do")


@dataclass
class ActuatorPlantModel:
    """First-order, rate- and range-limited actuator behavior (non-paper)."""

    servo_tau: float = 0.05
    servo_rate_limit: float = 12.0
    thrust_tau: float = 0.03
    thrust_rate_limit: float = 40.0
    thrust_floor: float = 0.0
    thrust_ceil: float = 18.0

    def track(self, state: np.ndarray, cmd: np.ndarray, tau: float, rate_limit: float, dt: float) -> np.ndarray:
        rate = np.clip((cmd - state) / tau, -rate_limit, rate_limit)
        return state + rate * dt


@dataclass
class SensorSuite:
    pose_rate_hz: float = 100.0
    sigma_pos: float = 0.002
    sigma_att: float = np.deg2rad(0.2)
    latency: float = 0.0
    imu_rate_hz: float = 200.0
    accel_noise: float = 0.02
    gyro_noise: float = 0.002
    accel_bias: np.ndarray = field(default_factory=lambda: np.array([0.05, -0.03, 0.04]))


@dataclass
class TrueDisturbance:
    """Ground-truth residual wrench generator.

    Modes: ``zero``; ``constant_local`` (force constant in the yaw-local
    frame, torque constant in body); ``linear_features`` (linear in the same
    feature vector the residual model uses, evaluated on the realized wrench
    and true attitude); ``constant_plus_noise`` (constant_local plus white
    per-tick noise).
    """

    mode: str = "zero"
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    coefficients: np.ndarray | None = None
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("zero", "constant_local", "linear_features", "constant_plus_noise"):
            raise ConfigError(f"disturbance.mode: unknown mode '{self.mode}'")
        if self.mode == "linear_features" and self.coefficients is None:
            raise ConfigError("disturbance.coefficients: required for linear_features mode")
        self.wrench = np.asarray(self.wrench, dtype=float)

    def evaluate(self, rigid: np.ndarray, applied_wrench: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.mode == "zero":
            return np.zeros(6)
        if self.mode == "linear_features":
            feats = build_features(applied_wrench, rigid[3:7])
            return np.asarray(self.coefficients) @ np.concatenate([feats, [1.0]])
        quat = rigid[3:7]
        psi = so3.yaw_of(quat)
        force = so3.quat_to_rotmat(quat).T @ so3.rotz(psi) @ self.wrench[:3]
        out = np.concatenate([force, self.wrench[3:]])
        if self.mode == "constant_plus_noise":
            out = out + self.sigma * rng.normal(size=6)
        return out


@dataclass
class EpisodeSetup:
    """Everything one closed-loop run needs, already materialized."""

    controller_cfg: ControllerConfig
    trajectory: ReferenceTrajectory
    params: InertialParams = field(default_factory=InertialParams)
    geometry: PlatformGeometry = field(default_factory=PlatformGeometry)
    residual_mode: str = "nc"
    residual_model: ResidualModel | None = None
    disturbance: TrueDisturbance = field(default_factory=TrueDisturbance)
    actuators: ActuatorPlantModel = field(default_factory=ActuatorPlantModel)
    sensors: SensorSuite = field(default_factory=SensorSuite)
    ekf_noise: EkfNoise = field(default_factory=EkfNoise)
    estimator_enabled: bool | None = None  # default: only for "do"
    seed: int = 0
    duration: float | None = None
    settle_time: float = 0.0
    plant_dt: float = 1e-3
    control_rate_hz: float = 100.0
    log_imu: bool = False
    solver_iterations: int = 1

    def validate(self) -> None:
        if self.controller_cfg.kind not in ("wmpc", "ampc"):
            raise ConfigError(f"controller.kind: unknown kind '{self.controller_cfg.kind}'")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ConfigError(f"residual.mode: unknown mode '{self.residual_mode}'")
        if self.controller_cfg.kind == "ampc" and self.residual_mode in ("in_mpc", "post_mpc"):
            raise ConfigError("residual.mode: the actuator-level controller only supports 'nc' or 'do'")
        if self.residual_mode in ("in_mpc", "post_mpc") and self.residual_model is None:
            raise ConfigError("residual.model: a trained model is required for in_mpc/post_mpc")
        if self.plant_dt <= 0:
            raise ConfigError("sim.plant_dt: must be positive")
        ticks_per_control = (1.0 / self.control_rate_hz) / self.plant_dt
        if abs(ticks_per_control - round(ticks_per_control)) > 1e-9:
            raise ConfigError("sim.control_rate_hz: control period must be a multiple of plant_dt")


@dataclass
class SimLog:
    """Per-tick arrays plus episode metadata; see ``CSV_COLUMNS`` for layout."""

    time: np.ndarray
    state: np.ndarray  # (n, 13) rigid state
    ref: np.ndarray  # (n, 13) reference rows
    cmd_wrench: np.ndarray  # (n, 6) wrench handed to allocation / produced by commands
    real_wrench: np.ndarray  # (n, 6) realized actuator wrench
    alpha_cmd: np.ndarray
    thrust_cmd: np.ndarray
    alpha_state: np.ndarray
    thrust_state: np.ndarray
    dist_true: np.ndarray
    dist_est: np.ndarray
    dist_model: np.ndarray
    qp_iters: np.ndarray
    fallback: np.ndarray
    solve_time: np.ndarray  # wall clock; excluded from the deterministic CSV
    meta: dict = field(default_factory=dict)
    imu: TrainingLog | None = None

    @property
    def n_ticks(self) -> int:
        return self.time.shape[0]

    def csv_columns(self) -> list:
        cols = (
            ["t"]
            + ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
            + ["ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz", "ref_qw", "ref_qx", "ref_qy", "ref_qz", "ref_wx", "ref_wy", "ref_wz"]
            + ["cmd_fx", "cmd_fy", "cmd_fz", "cmd_tx", "cmd_ty", "cmd_tz"]
            + ["real_fx", "real_fy", "real_fz", "real_tx", "real_ty", "real_tz"]
            + [f"alpha_cmd_{i}" for i in range(self.alpha_cmd.shape[1])]
            + [f"thrust_cmd_{i}" for i in range(self.thrust_cmd.shape[1])]
            + [f"alpha_{i}" for i in range(self.alpha_state.shape[1])]
            + [f"thrust_{i}" for i in range(self.thrust_state.shape[1])]
            + ["dtrue_fx", "dtrue_fy", "dtrue_fz", "dtrue_tx", "dtrue_ty", "dtrue_tz"]
            + ["dest_fx", "dest_fy", "dest_fz", "dest_tx", "dest_ty", "dest_tz"]
            + ["dmodel_fx", "dmodel_fy", "dmodel_fz", "dmodel_tx", "dmodel_ty", "dmodel_tz"]
            + ["qp_iters", "fallback"]
        )
        return cols

    def data_matrix(self) -> np.ndarray:
        return np.column_stack(
            [
                self.time,
                self.state,
                self.ref,
                self.cmd_wrench,
                self.real_wrench,
                self.alpha_cmd,
                self.thrust_cmd,
                self.alpha_state,
                self.thrust_state,
                self.dist_true,
                self.dist_est,
                self.dist_model,
                self.qp_iters,
                self.fallback,
            ]
        )

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data_matrix(), delimiter=",", header=",".join(self.csv_columns()), comments="", fmt="%.17g")

    def solver_times_to_csv(self, path) -> None:
        mask = np.isfinite(self.solve_time)
        np.savetxt(
            path,
            np.column_stack([self.time[mask], self.solve_time[mask]]),
            delimiter=",",
            header="t,solve_time",
            comments="",
            fmt="%.17g",
        )

    @staticmethod
    def from_csv(path, n_arms=6, n_rotors=12) -> "SimLog":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        idx = 0

        def take(n):
            nonlocal idx
            out = data[:, idx : idx + n]
            idx += n
            return out

        time = take(1)[:, 0]
        return SimLog(
            time=time,
            state=take(13),
            ref=take(13),
            cmd_wrench=take(6),
            real_wrench=take(6),
            alpha_cmd=take(n_arms),
            thrust_cmd=take(n_rotors),
            alpha_state=take(n_arms),
            thrust_state=take(n_rotors),
            dist_true=take(6),
            dist_est=take(6),
            dist_model=take(6),
            qp_iters=take(1)[:, 0],
            fallback=take(1)[:, 0],
            solve_time=np.full_like(time, np.nan),
        )


def run_episode(setup: EpisodeSetup) -> SimLog:
    """Execute one deterministic closed-loop episode."""
    setup.validate()
    cfg = setup.controller_cfg
    params = setup.params
    allocation = Allocation(setup.geometry)
    n_arms, n_rotors = setup.geometry.n_arms, setup.geometry.n_rotors
    dt = setup.plant_dt
    control_every = round((1.0 / setup.control_rate_hz) / dt)
    pose_every = max(1, round((1.0 / setup.sensors.pose_rate_hz) / dt))
    imu_every = max(1, round((1.0 / setup.sensors.imu_rate_hz) / dt))
    duration = setup.duration if setup.duration is not None else setup.trajectory.duration
    n_ticks = int(round((setup.settle_time + duration) / dt))
    estimator_on = setup.estimator_enabled if setup.estimator_enabled is not None else (setup.residual_mode == "do")

    rng_pose = np.random.default_rng([setup.seed, 1])
    rng_imu = np.random.default_rng([setup.seed, 2])
    rng_dist = np.random.default_rng([setup.seed, 3])

    # start on the trajectory with matching attitude, zero twist
    start = setup.trajectory.sample(0.0)
    rigid = np.concatenate([start.pos, start.quat, np.zeros(3), np.zeros(3)])

    if cfg.kind == "wmpc":
        controller = WrenchMpc(cfg, params)
        wrench_cmd = gravity_compensation_wrench(rigid[3:7], params)
        alpha_cmd, thrust_cmd, _ = allocation.allocate(wrench_cmd)
    else:
        controller = ActuatorMpc(cfg, params, allocation)
        alpha_cmd, thrust_cmd = controller.hover_reference(rigid[3:7])
        wrench_cmd = allocation.forward_wrench(alpha_cmd, thrust_cmd)
    alpha_state = alpha_cmd.copy()
    thrust_state = thrust_cmd.copy()
    outgoing_wrench = wrench_cmd.copy()

    ekf = EkfState.from_rigid(rigid) if estimator_on else None
    pending_meas: list[PoseMeasurement] = []
    consecutive_rejects = 0

    mpc_grid = np.arange(cfg.horizon + 1) * cfg.dt
    dt_ctrl = control_every * dt

    log = SimLog(
        time=np.arange(n_ticks) * dt,
        state=np.zeros((n_ticks, 13)),
        ref=np.zeros((n_ticks, 13)),
        cmd_wrench=np.zeros((n_ticks, 6)),
        real_wrench=np.zeros((n_ticks, 6)),
        alpha_cmd=np.zeros((n_ticks, n_arms)),
        thrust_cmd=np.zeros((n_ticks, n_rotors)),
        alpha_state=np.zeros((n_ticks, n_arms)),
        thrust_state=np.zeros((n_ticks, n_rotors)),
        dist_true=np.zeros((n_ticks, 6)),
        dist_est=np.zeros((n_ticks, 6)),
        dist_model=np.zeros((n_ticks, 6)),
        qp_iters=np.full(n_ticks, -1.0),
        fallback=np.zeros(n_ticks),
        solve_time=np.full(n_ticks, np.nan),
        meta={
            "controller": cfg.kind,
            "residual_mode": setup.residual_mode,
            "seed": setup.seed,
            "trajectory": setup.trajectory.name,
            "duration": duration,
            "settle_time": setup.settle_time,
            "plant_dt": dt,
            "control_rate_hz": setup.control_rate_hz,
        },
    )
    imu_rows: list[np.ndarray] = []

    dist_model_pred = np.zeros(6)
    for k in range(n_ticks):
        t = k * dt
        t_traj = t - setup.settle_time

        # 1. sensing and estimation
        if estimator_on and k % pose_every == 0:
            noisy_pos = rigid[0:3] + setup.sensors.sigma_pos * rng_pose.normal(size=3)
            noise_q = so3.quat_from_error_vector(0.5 * setup.sensors.sigma_att * rng_pose.normal(size=3))
            pending_meas.append(PoseMeasurement(pos=noisy_pos, quat=so3.quat_multiply(rigid[3:7], noise_q), timestamp=t))
        if estimator_on:
            while pending_meas and pending_meas[0].timestamp <= t - setup.sensors.latency + 1e-12:
                gate = np.inf if consecutive_rejects >= 3 else INNOVATION_GATE
                ekf, accepted = ekf_update(ekf, pending_meas.pop(0), setup.ekf_noise, gate=gate)
                consecutive_rejects = 0 if accepted else consecutive_rejects + 1

        # 2. control
        if k % control_every == 0:
            dist_est = disturbance_in_body(ekf) if estimator_on else np.zeros(6)
            pose_refs = setup.trajectory.reference_rows(t_traj + mpc_grid)
            if cfg.kind == "wmpc":
                if setup.residual_mode == "in_mpc":
                    dist_model_pred = setup.residual_model.predict(build_features(wrench_cmd, rigid[3:7]))
                    result = controller.step(rigid, wrench_cmd, pose_refs, residual=dist_model_pred, mode="in_mpc", iterations=setup.solver_iterations, advance_time=dt_ctrl if k else 0.0)
                elif setup.residual_mode == "do":
                    result = controller.step(rigid, wrench_cmd, pose_refs, residual=dist_est, mode="in_mpc", iterations=setup.solver_iterations, advance_time=dt_ctrl if k else 0.0)
                else:
                    result = controller.step(rigid, wrench_cmd, pose_refs, mode="none", iterations=setup.solver_iterations, advance_time=dt_ctrl if k else 0.0)
                wrench_cmd = wrench_cmd + result.rates * dt_ctrl
                if setup.residual_mode == "post_mpc":
                    dist_model_pred = setup.residual_model.predict(build_features(wrench_cmd, rigid[3:7]))
                    hover = gravity_compensation_wrench(rigid[3:7], params)
                    outgoing_wrench, _ = post_mpc_correct(wrench_cmd, dist_model_pred, cfg, hover)
                else:
                    outgoing_wrench = wrench_cmd
                alpha_cmd, thrust_cmd, _ = allocation.allocate(outgoing_wrench)
            else:
                alpha_ref, thrust_ref = controller.hover_reference(rigid[3:7])
                refs = controller.build_refs(pose_refs, alpha_ref, thrust_ref)
                result = controller.step(rigid, alpha_cmd, thrust_cmd, refs, residual=dist_est, iterations=setup.solver_iterations, advance_time=dt_ctrl if k else 0.0)
                alpha_cmd = alpha_cmd + result.rates[0:n_arms] * dt_ctrl
                thrust_cmd = thrust_cmd + result.rates[n_arms:] * dt_ctrl
                outgoing_wrench = allocation.forward_wrench(alpha_cmd, thrust_cmd)
            if result.solution is not None:
                log.qp_iters[k] = result.solution.qp_iterations
                log.solve_time[k] = result.solution.solve_time
            log.fallback[k] = 1.0 if result.fallback else 0.0

        # 3. plant
        alpha_state = setup.actuators.track(alpha_state, alpha_cmd, setup.actuators.servo_tau, setup.actuators.servo_rate_limit, dt)
        thrust_state = setup.actuators.track(thrust_state, thrust_cmd, setup.actuators.thrust_tau, setup.actuators.thrust_rate_limit, dt)
        thrust_state = np.clip(thrust_state, setup.actuators.thrust_floor, setup.actuators.thrust_ceil)
        realized = allocation.forward_wrench(alpha_state, thrust_state)
        dist_true = setup.disturbance.evaluate(rigid, realized, rng_dist)

        ref_row = setup.trajectory.reference_rows(np.array([t_traj]))[0]
        log.state[k] = rigid
        log.ref[k] = ref_row
        log.cmd_wrench[k] = outgoing_wrench
        log.real_wrench[k] = realized
        log.alpha_cmd[k] = alpha_cmd
        log.thrust_cmd[k] = thrust_cmd
        log.alpha_state[k] = alpha_state
        log.thrust_state[k] = thrust_state
        log.dist_true[k] = dist_true
        log.dist_est[k] = disturbance_in_body(ekf) if estimator_on else 0.0
        log.dist_model[k] = dist_model_pred if setup.residual_mode in ("in_mpc", "post_mpc") else 0.0

        if setup.log_imu and k % imu_every == 0:
            accel = (realized[:3] + dist_true[:3]) / params.mass + setup.sensors.accel_noise * rng_imu.normal(size=3)
            gyro = rigid[10:13] + setup.sensors.gyro_noise * rng_imu.normal(size=3)
            imu_rows.append(np.concatenate([[t], outgoing_wrench, rigid[3:7], accel, gyro]))

        rigid = rk4_step(rigid, realized, dist_true, params, dt)
        if estimator_on:
            ekf = ekf_predict(ekf, outgoing_wrench, dt, setup.ekf_noise, params)

    if setup.log_imu and imu_rows:
        rows = np.array(imu_rows)
        log.imu = TrainingLog(time=rows[:, 0], wrench=rows[:, 1:7], quat=rows[:, 7:11], accel=rows[:, 11:14], gyro=rows[:, 14:17])
    return log
