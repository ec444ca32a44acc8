"""Dense primal active-set solver for strictly convex QPs.

Solves ``min 0.5 z' H z + g' z  s.t.  G z <= h`` with H positive definite.
Simple bounds are expressed as rows of G. Pivoting is deterministic: the
lowest-index blocking/violating constraint wins every tie, so identical
problems always produce identical iterates.

The solver starts from a feasible point (default: the origin, which the
MPC condensing guarantees feasible by construction) and has no phase-1; an
infeasible start raises QpInfeasible and the caller falls back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import QpInfeasible, QpMaxIterations

_FEAS_TOL = 1e-9
_STEP_TOL = 1e-11
_MULT_TOL = 1e-9
_DIR_TOL = 1e-12


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    ineq_matrix: np.ndarray = None
    ineq_bound: np.ndarray = None

    def __post_init__(self) -> None:
        n = self.gradient.shape[0]
        if self.ineq_matrix is None:
            self.ineq_matrix = np.zeros((0, n))
            self.ineq_bound = np.zeros(0)


@dataclass
class QpSolution:
    z: np.ndarray
    multipliers: np.ndarray
    iterations: int
    active_set: list = field(default_factory=list)


def solve_qp(qp: QpProblem, z0: np.ndarray | None = None, max_iter: int = 200) -> QpSolution:
    h_mat = qp.hessian
    grad = qp.gradient
    g_ineq = qp.ineq_matrix
    bound = qp.ineq_bound
    n = grad.shape[0]

    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    slack = bound - g_ineq @ z
    if slack.size and np.min(slack) < -_FEAS_TOL:
        raise QpInfeasible("starting point violates the constraint set")

    active: list[int] = []
    for iteration in range(1, max_iter + 1):
        # Minimizer of the equality-constrained subproblem on the working set,
        # computed from scratch each iteration: after an unblocked full step z
        # is assigned this minimizer bitwise, so the recomputation yields an
        # exactly zero step and termination does not depend on conditioning.
        g_act = g_ineq[active]
        sol = np.linalg.solve(h_mat, np.column_stack([grad, g_act.T]) if active else grad[:, None])
        hinv_g = sol[:, 0]
        mu = np.zeros(0)
        if active:
            hinv_gt = sol[:, 1:]
            schur = g_act @ hinv_gt
            rhs_mu = -(g_act @ hinv_g) - bound[active]
            try:
                mu = np.linalg.solve(schur, rhs_mu)
            except np.linalg.LinAlgError:
                mu = np.linalg.lstsq(schur, rhs_mu, rcond=None)[0]
            z_star = -hinv_g - hinv_gt @ mu
        else:
            z_star = -hinv_g
        d = z_star - z

        if np.max(np.abs(d), initial=0.0) <= _STEP_TOL * max(1.0, np.max(np.abs(z), initial=0.0)):
            negative = [j for j, m in zip(active, mu) if m < -_MULT_TOL]
            if not negative:
                mult = np.zeros(g_ineq.shape[0])
                for j, m in zip(active, mu):
                    mult[j] = m
                return QpSolution(z=z, multipliers=mult, iterations=iteration, active_set=sorted(active))
            active.remove(min(negative))
            continue

        # Ratio test over inactive constraints; lowest index wins ties.
        alpha = 1.0
        blocking = -1
        if g_ineq.shape[0]:
            gd = g_ineq @ d
            gz = g_ineq @ z
            for i in range(g_ineq.shape[0]):
                if i in active or gd[i] <= _DIR_TOL:
                    continue
                ratio = (bound[i] - gz[i]) / gd[i]
                if ratio < alpha - 1e-14:
                    alpha = max(ratio, 0.0)
                    blocking = i
        if blocking >= 0:
            z = z + alpha * d
            active.append(blocking)
            active.sort()
        else:
            z = z_star

    raise QpMaxIterations(f"active-set loop exceeded {max_iter} iterations")


def kkt_residuals(qp: QpProblem, sol: QpSolution) -> dict:
    """Stationarity, primal feasibility and complementarity of a solution."""
    stationarity = qp.hessian @ sol.z + qp.gradient
    if qp.ineq_matrix.shape[0]:
        stationarity = stationarity + qp.ineq_matrix.T @ sol.multipliers
        slack = qp.ineq_bound - qp.ineq_matrix @ sol.z
        primal = max(0.0, float(np.max(-slack)))
        comp = float(np.max(np.abs(sol.multipliers * slack)))
        dual = float(np.min(sol.multipliers, initial=0.0))
    else:
        primal, comp, dual = 0.0, 0.0, 0.0
    return {
        "stationarity": float(np.max(np.abs(stationarity))),
        "primal": primal,
        "complementarity": comp,
        "dual_min": dual,
    }
