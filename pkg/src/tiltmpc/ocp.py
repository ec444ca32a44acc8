"""Multiple-shooting transcription and real-time-iteration SQP.

The discrete optimal-control problem

``min sum_k ||h(x_k, r_k)||^2_Q + ||u_k||^2_R + ||h_N(x_N, r_N)||^2_QN``
subject to ``x_{k+1} = g(x_k, u_k)``, ``x_0 = x(t)`` and box bounds on
states and inputs

is linearized node-wise (Gauss-Newton), condensed onto the input increments
so the QP decision vector is ``N * m`` entries, and solved with the dense
active-set solver. One linearize+solve+update per call is the
real-time-iteration mode; ``iterations > 1`` re-linearizes until the SQP
converges (used by tests and tuning).

Jacobians are forward finite differences, evaluated in a single batched call
of the dynamics over every node and perturbation, and validated against
central differences in the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import so3
from .errors import NonFiniteLinearization
from .qp import QpProblem, solve_qp

_FD_STEP = 1e-6


@dataclass
class OcpProblem:
    """Problem data for one controller instance. ``dynamics_fn`` and
    ``residual_fn`` must broadcast over leading batch dimensions."""

    horizon: int
    dt: float
    state_dim: int
    input_dim: int
    dynamics_fn: Callable
    residual_fn: Callable
    weight_stage: np.ndarray
    weight_input: np.ndarray
    weight_terminal: np.ndarray
    state_lower: np.ndarray = None
    state_upper: np.ndarray = None
    input_lower: np.ndarray = None
    input_upper: np.ndarray = None
    quat_slice: slice | None = None
    terminal_residual_fn: Callable | None = None

    def __post_init__(self) -> None:
        n, m = self.state_dim, self.input_dim
        if self.state_lower is None:
            self.state_lower = np.full(n, -np.inf)
        if self.state_upper is None:
            self.state_upper = np.full(n, np.inf)
        if self.input_lower is None:
            self.input_lower = np.full(m, -np.inf)
        if self.input_upper is None:
            self.input_upper = np.full(m, np.inf)
        if np.any(self.state_lower > self.state_upper) or np.any(self.input_lower > self.input_upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        if self.terminal_residual_fn is None:
            self.terminal_residual_fn = self.residual_fn
        self.bounded_states = np.flatnonzero(
            np.isfinite(self.state_lower) | np.isfinite(self.state_upper)
        )


@dataclass
class OcpSolution:
    states: np.ndarray
    inputs: np.ndarray
    objective: float
    kkt_residual: float
    qp_iterations: int
    solve_time: float
    sqp_iterations: int = 1
    active_set_size: int = 0


class OcpSolver:
    """Stateful solver: keeps the shooting trajectory as a warm start.

    Instances are single-threaded; run independent instances on independent
    problems for parallel episodes.
    """

    def __init__(self, problem: OcpProblem, max_qp_iter: int = 200):
        self.problem = problem
        self.max_qp_iter = max_qp_iter
        self.states: np.ndarray | None = None
        self.inputs: np.ndarray | None = None

    def reset(self) -> None:
        self.states = None
        self.inputs = None

    def cold_start(self, x_now: np.ndarray) -> None:
        """Initialize the shooting trajectory by rolling out zero inputs."""
        p = self.problem
        self.inputs = np.zeros((p.horizon, p.input_dim))
        self.inputs = np.clip(self.inputs, p.input_lower, p.input_upper)
        states = np.empty((p.horizon + 1, p.state_dim))
        states[0] = x_now
        for k in range(p.horizon):
            states[k + 1] = p.dynamics_fn(states[k], self.inputs[k])
        self.states = states

    def shift(self) -> None:
        """Shift the warm start by one shooting node (receding horizon)."""
        if self.states is None:
            return
        self.states[:-1] = self.states[1:]
        self.inputs[:-1] = self.inputs[1:]
        self.inputs[-1] = 0.0
        self.states[-1] = self.problem.dynamics_fn(self.states[-2], self.inputs[-1])

    def shift_time(self, interval: float) -> None:
        """Advance the warm start by an arbitrary time (sub-node intervals
        interpolate between shooting nodes).

        Controllers run faster than the shooting grid; re-anchoring the
        horizon without shifting would leave the stale plan inconsistent with
        the new initial state and its box constraints. Linear interpolation
        is exact for the integrator sub-states that carry boxes, so the
        shifted plan stays strictly feasible.
        """
        if self.states is None or interval <= 0.0:
            return
        frac = interval / self.problem.dt
        while frac >= 1.0 - 1e-12:
            self.shift()
            frac -= 1.0
        if frac <= 1e-12:
            return
        states, inputs = self.states, self.inputs
        new_states = states.copy()
        new_states[:-1] = (1.0 - frac) * states[:-1] + frac * states[1:]
        new_states[-1] = states[-1] + frac * (states[-1] - states[-2])
        new_inputs = inputs.copy()
        new_inputs[:-1] = (1.0 - frac) * inputs[:-1] + frac * inputs[1:]
        if self.problem.quat_slice is not None:
            new_states[:, self.problem.quat_slice] = so3.quat_normalize(
                new_states[:, self.problem.quat_slice], canonical=False
            )
        self.states, self.inputs = new_states, new_inputs

    def solve(self, x_now: np.ndarray, refs: np.ndarray, iterations: int = 1, converge_tol: float = 0.0) -> OcpSolution:
        """Run ``iterations`` Gauss-Newton steps from the stored warm start.

        ``iterations=1`` is the real-time-iteration mode and takes the full
        Gauss-Newton step. With more iterations a merit line search damps the
        steps so the converge mode is globally well behaved on hard instances.
        """
        t_start = time.perf_counter()
        if self.states is None:
            self.cold_start(np.asarray(x_now, dtype=float))
        qp_iters = 0
        active = 0
        sqp_done = 0
        for _ in range(iterations):
            qp_sol = self._iterate(np.asarray(x_now, dtype=float), refs, line_search=iterations > 1)
            qp_iters += qp_sol.iterations
            active = len(qp_sol.active_set)
            sqp_done += 1
            if converge_tol > 0.0 and self._kkt(refs) < converge_tol:
                break
        kkt = self._kkt(refs)
        objective = self._objective(refs)
        return OcpSolution(
            states=self.states.copy(),
            inputs=self.inputs.copy(),
            objective=objective,
            kkt_residual=kkt,
            qp_iterations=qp_iters,
            solve_time=time.perf_counter() - t_start,
            sqp_iterations=sqp_done,
            active_set_size=active,
        )

    # ------------------------------------------------------------------
    # internals
    # ------------------------------------------------------------------

    def _jacobians(self, states: np.ndarray, inputs: np.ndarray):
        """Forward-difference A_k, B_k and nominal g(x_k, u_k) for all nodes,
        evaluated in one batched dynamics call."""
        p = self.problem
        n, m, horizon = p.state_dim, p.input_dim, p.horizon
        n_pert = 1 + n + m
        xs = np.repeat(states[:horizon, None, :], n_pert, axis=1)
        us = np.repeat(inputs[:, None, :], n_pert, axis=1)
        eps_x = _FD_STEP * np.maximum(1.0, np.abs(states[:horizon]))
        eps_u = _FD_STEP * np.maximum(1.0, np.abs(inputs))
        idx = np.arange(n)
        xs[:, 1 + idx, idx] += eps_x
        idu = np.arange(m)
        us[:, 1 + n + idu, idu] += eps_u
        out = p.dynamics_fn(xs, us)
        if not np.all(np.isfinite(out)):
            raise NonFiniteLinearization("dynamics produced non-finite values during linearization")
        base = out[:, 0, :]
        a_mats = (out[:, 1 : 1 + n, :] - base[:, None, :]) / eps_x[:, :, None]
        b_mats = (out[:, 1 + n :, :] - base[:, None, :]) / eps_u[:, :, None]
        return np.swapaxes(a_mats, 1, 2), np.swapaxes(b_mats, 1, 2), base

    def _residual_jacobians(self, states: np.ndarray, refs: np.ndarray):
        """Node residuals and their state Jacobians, batched like _jacobians."""
        p = self.problem
        n = p.state_dim
        n_nodes = p.horizon + 1
        xs = np.repeat(states[:, None, :], 1 + n, axis=1)
        eps = _FD_STEP * np.maximum(1.0, np.abs(states))
        idx = np.arange(n)
        xs[:, 1 + idx, idx] += eps
        res_stage = p.residual_fn(xs[:-1], refs[:-1, None, :])
        res_term = p.terminal_residual_fn(xs[-1:], refs[-1:, None, :])
        res = np.concatenate([res_stage, res_term], axis=0)
        if not np.all(np.isfinite(res)):
            raise NonFiniteLinearization("residual produced non-finite values during linearization")
        base = res[:, 0, :]
        jac = (res[:, 1:, :] - base[:, None, :]) / eps[:, :, None]
        return np.swapaxes(jac, 1, 2), base

    def _iterate(self, x_now: np.ndarray, refs: np.ndarray, line_search: bool = False):
        p = self.problem
        n, m, horizon = p.state_dim, p.input_dim, p.horizon
        nu = horizon * m
        # Project the warm start into the state box before linearizing:
        # re-anchoring the horizon between nodes can leave stale predictions
        # marginally outside a bound, and feasibility of du = 0 must come
        # from the trajectory itself, not from relaxed constraints. The
        # resulting shooting defects are handled by the transcription.
        if p.bounded_states.size:
            bs = p.bounded_states
            self.states[:, bs] = np.clip(self.states[:, bs], p.state_lower[bs], p.state_upper[bs])
        self.inputs = np.clip(self.inputs, p.input_lower, p.input_upper)
        states, inputs = self.states, self.inputs

        a_mats, b_mats, g_nom = self._jacobians(states, inputs)
        defects = g_nom - states[1:]
        res_jac, res = self._residual_jacobians(states, refs)

        hess = np.zeros((nu, nu))
        grad = np.zeros(nu)
        for k in range(horizon):
            sl = slice(k * m, (k + 1) * m)
            hess[sl, sl] += p.weight_input
            grad[sl] += p.weight_input @ inputs[k]

        rows: list[np.ndarray] = []
        bounds: list[float] = []
        # input boxes directly on the decision variables
        eye_m = np.eye(m)
        for k in range(horizon):
            for j in range(m):
                row = np.zeros(nu)
                if np.isfinite(p.input_upper[j]):
                    row[k * m + j] = 1.0
                    rows.append(row.copy())
                    bounds.append(p.input_upper[j] - inputs[k, j])
                if np.isfinite(p.input_lower[j]):
                    row[:] = 0.0
                    row[k * m + j] = -1.0
                    rows.append(row.copy())
                    bounds.append(inputs[k, j] - p.input_lower[j])

        # condense: dx_k = T_k du + c_k
        t_mat = np.zeros((n, nu))
        c_vec = x_now - states[0]
        wq, wqn = p.weight_stage, p.weight_terminal
        for k in range(horizon + 1):
            jk = res_jac[k] @ t_mat
            rbar = res[k] + res_jac[k] @ c_vec
            w = wqn if k == horizon else wq
            hess += jk.T @ (w @ jk)
            grad += jk.T @ (w @ rbar)
            if k > 0 and p.bounded_states.size:
                # State rows are relaxed to "no worse than the warm start":
                # re-anchoring the horizon between shooting nodes can leave the
                # stale prediction marginally outside a box, and du = 0 must
                # stay feasible for the real-time iteration. The commanded
                # (node-interpolated) quantities remain inside the box.
                for j in p.bounded_states:
                    offset = states[k, j] + c_vec[j]
                    if np.isfinite(p.state_upper[j]):
                        rows.append(t_mat[j].copy())
                        bounds.append(max(p.state_upper[j] - offset, 0.0))
                    if np.isfinite(p.state_lower[j]):
                        rows.append(-t_mat[j])
                        bounds.append(max(offset - p.state_lower[j], 0.0))
            if k < horizon:
                t_next = a_mats[k] @ t_mat
                t_next[:, k * m : (k + 1) * m] += b_mats[k]
                t_mat = t_next
                c_vec = a_mats[k] @ c_vec + defects[k]

        g_ineq = np.array(rows) if rows else np.zeros((0, nu))
        h_ineq = np.array(bounds)
        qp_sol = solve_qp(QpProblem(hess, grad, g_ineq, h_ineq), max_iter=self.max_qp_iter)

        du = qp_sol.z.reshape(horizon, m)

        def candidate(step_scale: float):
            new_inputs = inputs + step_scale * du
            new_states = np.empty_like(states)
            dx = step_scale * (x_now - states[0])
            new_states[0] = x_now
            for k in range(horizon):
                dx = a_mats[k] @ dx + step_scale * (b_mats[k] @ du[k] + defects[k])
                new_states[k + 1] = states[k + 1] + dx
            if p.quat_slice is not None:
                new_states[:, p.quat_slice] = so3.quat_normalize(new_states[:, p.quat_slice], canonical=False)
            return new_states, new_inputs

        if line_search:
            merit0 = self._merit(states, inputs, refs) if np.array_equal(states[0], x_now) else np.inf
            alpha = 1.0
            best = candidate(1.0)
            for _ in range(6):
                if self._merit(*best, refs) <= merit0 - 1e-12 * alpha or merit0 == np.inf:
                    break
                alpha *= 0.5
                best = candidate(alpha)
            self.states, self.inputs = best
        else:
            self.states, self.inputs = candidate(1.0)
        return qp_sol

    def _merit(self, states: np.ndarray, inputs: np.ndarray, refs: np.ndarray) -> float:
        """L1 merit: tracking cost plus a defect penalty, for line search."""
        pred = self.problem.dynamics_fn(states[:-1], inputs)
        defect = float(np.sum(np.abs(pred - states[1:])))
        saved_states, saved_inputs = self.states, self.inputs
        self.states, self.inputs = states, inputs
        try:
            obj = self._objective(refs)
        finally:
            self.states, self.inputs = saved_states, saved_inputs
        return obj + 1e3 * defect

    def _objective(self, refs: np.ndarray) -> float:
        p = self.problem
        res = p.residual_fn(self.states[:-1], refs[:-1])
        term = p.terminal_residual_fn(self.states[-1], refs[-1])
        cost = float(np.einsum("ki,ij,kj->", res, p.weight_stage, res))
        cost += float(term @ p.weight_terminal @ term)
        cost += float(np.einsum("ki,ij,kj->", self.inputs, p.weight_input, self.inputs))
        return cost

    def _kkt(self, refs: np.ndarray) -> float:
        """Dynamic infeasibility of the current shooting trajectory (the SQP
        stationarity part is already at QP tolerance after each iterate)."""
        p = self.problem
        pred = p.dynamics_fn(self.states[:-1], self.inputs)
        return float(np.max(np.abs(pred - self.states[1:])))
