"""Wrench-level and actuator-level MPC built on the shooting solver.

Both controllers track ``[p_r, v_r, q_r, w_r]`` references and differ in the
decision layer:

* WrenchMpc augments the rigid state with the commanded wrench (19 states)
  and decides wrench rates; allocation happens downstream. A predicted
  residual wrench can enter the prediction model ("in-MPC") or correct the
  optimized command afterwards (:func:`post_mpc_correct`).
* ActuatorMpc augments with tilt angles and rotor thrusts (31 states for the
  default platform), embeds the exact nonlinear allocation in the prediction
  model, decides tilt/thrust rates, and enforces the actuator boxes as hard
  constraints. The actuator reference is the minimum-norm hover allocation at
  the current attitude; its weights set how freely the allocation nullspace
  is explored.

Velocity and body-rate errors are expressed in the current body frame, i.e.
the reference twist is rotated by the attitude mismatch before subtraction,
matching the attitude-error parameterization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .allocation import Allocation
from .dynamics import InertialParams, dynamics, rk4
from .errors import NonFiniteLinearization, QpInfeasible, QpMaxIterations
from .ocp import OcpProblem, OcpSolution, OcpSolver

logger = logging.getLogger(__name__)

WMPC_STATE_DIM = 19
WMPC_RIGID = slice(6, 19)
WMPC_QUAT = slice(9, 13)


@dataclass
class ControllerConfig:
    """Horizon, bounds and weights for both controllers.

    The horizon/box values follow the published tuning table (N, dt, wrench
    and actuator limits); the wrench-rate bound and all Q/R weights are
    artifact tuning, exposed through the experiment config.
    """

    kind: str = "wmpc"
    horizon: int = 20
    dt: float = 0.05
    force_max: float = 20.0
    torque_max: float = 20.0
    # inner-box tightening [N / N m]: the wrench authority box is centered on
    # the weight-compensation wrench at the attitude current at solve time,
    # and the center moves as the vehicle rotates; the margin covers that
    # drift so the full box holds at every plant tick.
    wrench_box_margin: float = 1.0
    force_rate_max: float = 300.0
    torque_rate_max: float = 300.0
    thrust_min: float = 0.1
    thrust_max: float = 16.0
    thrust_rate_max: float = 29.0
    tilt_rate_max: float = 10.0
    weight_pos: float = 10.0
    weight_vel: float = 3.0
    weight_att: float = 30.0
    weight_omega: float = 3.0
    weight_force_rate: float = 2e-4
    weight_torque_rate: float = 2e-3
    weight_thrust: float = 1.0  # w_T
    weight_alpha: float = 10.0  # w_alpha
    weight_alpha_rate: float = 10.0  # w_alpha_dot
    weight_thrust_rate: float = 0.01
    terminal_scale: float = 5.0
    max_qp_iter: int = 500

    def pose_weight_diag(self) -> np.ndarray:
        return np.concatenate(
            [[self.weight_pos] * 3, [self.weight_vel] * 3, [self.weight_att] * 3, [self.weight_omega] * 3]
        )


@dataclass
class StepResult:
    rates: np.ndarray
    solution: OcpSolution | None
    fallback: bool = False


def pose_residual(rigid: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Tracking residual ``[p - p_r, v - v_r, q_e, w - R' R_r w_r]``; batched.

    ``rigid`` follows the dynamics layout ``[p, q, v, w]``; ``ref`` rows are
    ``[p_r, v_r(world), q_r, w_r(reference body)]``. Velocity and rate
    references are rotated into the current body frame.
    """
    pos = rigid[..., 0:3]
    quat = rigid[..., 3:7]
    vel = rigid[..., 7:10]
    omega = rigid[..., 10:13]
    q_conj = so3.quat_conjugate(quat)
    vel_err = vel - so3.quat_rotate(q_conj, ref[..., 3:6])
    q_rel = so3.hamilton(q_conj, ref[..., 6:10])
    q_rel = q_rel / np.linalg.norm(q_rel, axis=-1, keepdims=True)
    att_err = so3.attitude_error(quat, ref[..., 6:10])
    omega_err = omega - so3.quat_rotate(q_rel, ref[..., 10:13])
    return np.concatenate([pos - ref[..., 0:3], vel_err, att_err, omega_err], axis=-1)


def wrench_box_limit(cfg: ControllerConfig) -> np.ndarray:
    return np.array([cfg.force_max] * 3 + [cfg.torque_max] * 3)


def post_mpc_correct(wrench_cmd: np.ndarray, residual_pred: np.ndarray, cfg: ControllerConfig, hover_wrench: np.ndarray):
    """Correct an optimized wrench command by the predicted residual.

    The plant realizes command plus true residual, so subtracting the
    prediction makes the realized wrench track the optimizer's intent. The
    result is re-clamped to the wrench authority box around the
    weight-compensation wrench; the flag reports clamping.
    """
    corrected = wrench_cmd - residual_pred
    limit = wrench_box_limit(cfg) - cfg.wrench_box_margin
    clamped = np.clip(corrected, hover_wrench - limit, hover_wrench + limit)
    return clamped, bool(np.any(clamped != corrected))


class WrenchMpc:
    """MPC over ``[wrench, rigid]`` with wrench-rate decisions.

    The wrench box is an authority box around the attitude-dependent
    weight-compensation wrench (the printed 20 N force bound is below the
    hover force, so a literal box would make hover infeasible); it is
    re-centered at the measured attitude before every solve.
    """

    def __init__(self, cfg: ControllerConfig, params: InertialParams):
        self.cfg = cfg
        self.params = params
        self._residual = np.zeros(6)

        def dyn(x, u):
            def xdot(s):
                out = np.empty_like(s)
                out[..., 0:6] = u
                out[..., WMPC_RIGID] = dynamics(s[..., WMPC_RIGID], s[..., 0:6], self._residual, params)
                return out

            nxt = rk4(xdot, x, cfg.dt)
            nxt[..., WMPC_QUAT] = so3.quat_normalize(nxt[..., WMPC_QUAT], canonical=False)
            return nxt

        def residual_fn(x, ref):
            return pose_residual(x[..., WMPC_RIGID], ref)

        pose_diag = cfg.pose_weight_diag()
        limit = wrench_box_limit(cfg) - cfg.wrench_box_margin
        state_lower = np.full(WMPC_STATE_DIM, -np.inf)
        state_upper = np.full(WMPC_STATE_DIM, np.inf)
        hover0 = np.concatenate([-params.mass * params.gravity, np.zeros(3)])
        state_lower[0:6] = hover0 - limit
        state_upper[0:6] = hover0 + limit
        rate_limit = np.array([cfg.force_rate_max] * 3 + [cfg.torque_rate_max] * 3)
        problem = OcpProblem(
            horizon=cfg.horizon,
            dt=cfg.dt,
            state_dim=WMPC_STATE_DIM,
            input_dim=6,
            dynamics_fn=dyn,
            residual_fn=residual_fn,
            weight_stage=np.diag(pose_diag),
            weight_input=np.diag([cfg.weight_force_rate] * 3 + [cfg.weight_torque_rate] * 3),
            weight_terminal=np.diag(cfg.terminal_scale * pose_diag),
            state_lower=state_lower,
            state_upper=state_upper,
            input_lower=-rate_limit,
            input_upper=rate_limit,
            quat_slice=WMPC_QUAT,
        )
        self.solver = OcpSolver(problem, max_qp_iter=cfg.max_qp_iter)

    def reset(self) -> None:
        self.solver.reset()

    def step(
        self,
        rigid_state: np.ndarray,
        wrench_state: np.ndarray,
        refs: np.ndarray,
        residual: np.ndarray | None = None,
        mode: str = "none",
        iterations: int = 1,
        advance_time: float = 0.0,
    ) -> StepResult:
        """One control update. ``refs`` holds N+1 rows of ``[p, v, q, w]``.

        ``mode`` is "none" (residual-agnostic model) or "in_mpc" (the
        supplied residual wrench enters the prediction dynamics at every
        node). ``advance_time`` is the wall time since the previous step; the
        warm start is shifted by it. Solver failures fall back to holding the
        current wrench.
        """
        if mode not in ("none", "in_mpc"):
            raise ValueError(f"unknown wmpc mode '{mode}'")
        self._residual = residual if (mode == "in_mpc" and residual is not None) else np.zeros(6)
        self.solver.shift_time(advance_time)
        hover = np.concatenate([-self.params.mass * so3.quat_to_rotmat(rigid_state[3:7]).T @ self.params.gravity, np.zeros(3)])
        limit = wrench_box_limit(self.cfg) - self.cfg.wrench_box_margin
        self.solver.problem.state_lower[0:6] = hover - limit
        self.solver.problem.state_upper[0:6] = hover + limit
        x0 = np.concatenate([wrench_state, rigid_state])
        try:
            sol = self.solver.solve(x0, refs, iterations=iterations)
        except (QpInfeasible, QpMaxIterations, NonFiniteLinearization) as exc:
            logger.warning("wmpc solve failed (%s); holding current wrench", exc)
            self.solver.reset()
            return StepResult(rates=np.zeros(6), solution=None, fallback=True)
        return StepResult(rates=sol.inputs[0].copy(), solution=sol)

    def predicted_wrenches(self, sol: OcpSolution) -> np.ndarray:
        return sol.states[:, 0:6]


class ActuatorMpc:
    """MPC over ``[alpha, thrust, rigid]`` with tilt/thrust-rate decisions."""

    def __init__(self, cfg: ControllerConfig, params: InertialParams, allocation: Allocation):
        self.cfg = cfg
        self.params = params
        self.allocation = allocation
        n_arms = allocation.geometry.n_arms
        n_rot = allocation.geometry.n_rotors
        self.n_arms, self.n_rotors = n_arms, n_rot
        n_state = n_arms + n_rot + 13
        n_input = n_arms + n_rot
        self._rigid = slice(n_arms + n_rot, n_state)
        self._quat = slice(n_arms + n_rot + 3, n_arms + n_rot + 7)
        self._residual = np.zeros(6)

        def dyn(x, u):
            def xdot(s):
                out = np.empty_like(s)
                out[..., 0:n_input] = u
                wrench = allocation.forward_wrench(s[..., 0:n_arms], s[..., n_arms : n_arms + n_rot])
                out[..., self._rigid] = dynamics(s[..., self._rigid], wrench, self._residual, params)
                return out

            nxt = rk4(xdot, x, cfg.dt)
            nxt[..., self._quat] = so3.quat_normalize(nxt[..., self._quat], canonical=False)
            return nxt

        def residual_fn(x, ref):
            pose = pose_residual(x[..., self._rigid], ref)
            actuator = x[..., 0:n_input] - ref[..., 13 : 13 + n_input]
            return np.concatenate([pose, actuator], axis=-1)

        pose_diag = cfg.pose_weight_diag()
        stage_diag = np.concatenate([pose_diag, [cfg.weight_alpha] * n_arms, [cfg.weight_thrust] * n_rot])
        terminal_diag = np.concatenate([cfg.terminal_scale * pose_diag, [cfg.weight_alpha] * n_arms, [cfg.weight_thrust] * n_rot])
        state_lower = np.full(n_state, -np.inf)
        state_upper = np.full(n_state, np.inf)
        state_lower[n_arms : n_arms + n_rot] = cfg.thrust_min
        state_upper[n_arms : n_arms + n_rot] = cfg.thrust_max
        rate_limit = np.concatenate([[cfg.tilt_rate_max] * n_arms, [cfg.thrust_rate_max] * n_rot])
        problem = OcpProblem(
            horizon=cfg.horizon,
            dt=cfg.dt,
            state_dim=n_state,
            input_dim=n_input,
            dynamics_fn=dyn,
            residual_fn=residual_fn,
            weight_stage=np.diag(stage_diag),
            weight_input=np.diag([cfg.weight_alpha_rate] * n_arms + [cfg.weight_thrust_rate] * n_rot),
            weight_terminal=np.diag(terminal_diag),
            state_lower=state_lower,
            state_upper=state_upper,
            input_lower=-rate_limit,
            input_upper=rate_limit,
            quat_slice=self._quat,
        )
        self.solver = OcpSolver(problem, max_qp_iter=cfg.max_qp_iter)
        self._last_alpha_ref: np.ndarray | None = None

    def reset(self) -> None:
        self.solver.reset()
        self._last_alpha_ref = None

    def hover_reference(self, quat: np.ndarray):
        """Minimum-norm commands holding the weight at the current attitude,
        with tilt angles unwrapped continuously across atan2 branch cuts."""
        alpha, thrust = self.allocation.hover_command(quat, self.params)
        if self._last_alpha_ref is not None:
            alpha = alpha + 2.0 * np.pi * np.round((self._last_alpha_ref - alpha) / (2.0 * np.pi))
        self._last_alpha_ref = alpha
        return alpha, thrust

    def build_refs(self, pose_refs: np.ndarray, alpha_ref: np.ndarray, thrust_ref: np.ndarray) -> np.ndarray:
        """Append the actuator reference (held constant) to the pose rows."""
        n_nodes = pose_refs.shape[0]
        actuator = np.tile(np.concatenate([alpha_ref, thrust_ref]), (n_nodes, 1))
        return np.concatenate([pose_refs, actuator], axis=1)

    def step(
        self,
        rigid_state: np.ndarray,
        alpha_cmd: np.ndarray,
        thrust_cmd: np.ndarray,
        refs: np.ndarray,
        residual: np.ndarray | None = None,
        iterations: int = 1,
        advance_time: float = 0.0,
    ) -> StepResult:
        """One control update; ``refs`` rows are pose rows plus actuator
        reference (see :meth:`build_refs`). The residual estimate (from the
        disturbance observer) enters the prediction dynamics; the warm start
        is shifted by ``advance_time``. Failures fall back to zero actuator
        rates."""
        self._residual = residual if residual is not None else np.zeros(6)
        self.solver.shift_time(advance_time)
        x0 = np.concatenate([alpha_cmd, thrust_cmd, rigid_state])
        try:
            sol = self.solver.solve(x0, refs, iterations=iterations)
        except (QpInfeasible, QpMaxIterations, NonFiniteLinearization) as exc:
            logger.warning("ampc solve failed (%s); zero actuator rates", exc)
            self.solver.reset()
            return StepResult(rates=np.zeros(self.n_arms + self.n_rotors), solution=None, fallback=True)
        return StepResult(rates=sol.inputs[0].copy(), solution=sol)
