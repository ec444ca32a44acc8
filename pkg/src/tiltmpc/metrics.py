"""Tracking error, constraint and solver-time statistics over episode logs.

The attitude error metric is the euler-angle vector of the actual attitude
relative to the reference attitude (not a difference of absolute euler
angles), so it stays well behaved at large reference roll/pitch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import so3
from .controllers import ControllerConfig, wrench_box_limit
from .dynamics import InertialParams
from .errors import EmptyLog
from .simulator import SimLog

SOLVER_BUDGET_S = 0.010
BOX_TOL = 1e-6


@dataclass
class TrackingReport:
    position_rmse: float
    attitude_rmse: float
    position_rmse_axes: list
    attitude_rmse_axes: list
    constraint_violations: int = 0
    solver: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def tracking_rmse(log: SimLog) -> TrackingReport:
    """Position and attitude RMSE over all plant ticks, with per-axis splits.

    Ticks inside the configured pre-settle window (used to let the closed
    loop and the estimator converge before tracking starts) are excluded.
    """
    if log.n_ticks == 0:
        raise EmptyLog("log has no ticks")
    keep = log.time >= float(log.meta.get("settle_time", 0.0)) - 1e-12
    if not np.any(keep):
        raise EmptyLog("no ticks after the settle window")
    pos_err = log.state[keep, 0:3] - log.ref[keep, 0:3]
    att_err = so3.error_euler(log.state[keep, 3:7], log.ref[keep, 6:10])
    return TrackingReport(
        position_rmse=float(np.sqrt(np.mean(np.sum(pos_err**2, axis=1)))),
        attitude_rmse=float(np.sqrt(np.mean(np.sum(att_err**2, axis=1)))),
        position_rmse_axes=np.sqrt(np.mean(pos_err**2, axis=0)).tolist(),
        attitude_rmse_axes=np.sqrt(np.mean(att_err**2, axis=0)).tolist(),
        meta=dict(log.meta),
    )


def control_tick_mask(log: SimLog) -> np.ndarray:
    return log.qp_iters >= 0


def commanded_tilt_rates(log: SimLog) -> np.ndarray:
    """Finite-difference tilt-angle command rates at control ticks (rad/s).

    Branch-cut jumps of the allocation's atan2 are unwrapped first so only
    genuine command motion counts.
    """
    ticks = np.flatnonzero(control_tick_mask(log))
    if ticks.size < 2:
        return np.zeros((0, log.alpha_cmd.shape[1]))
    alpha = np.unwrap(log.alpha_cmd[ticks], axis=0)
    dt = np.diff(log.time[ticks])[:, None]
    return np.diff(alpha, axis=0) / dt


def commanded_thrust_rates(log: SimLog) -> np.ndarray:
    ticks = np.flatnonzero(control_tick_mask(log))
    if ticks.size < 2:
        return np.zeros((0, log.thrust_cmd.shape[1]))
    dt = np.diff(log.time[ticks])[:, None]
    return np.diff(log.thrust_cmd[ticks], axis=0) / dt


def constraint_violations(log: SimLog, cfg: ControllerConfig, params: InertialParams) -> dict:
    """Per-box violation counts (ticks beyond the bound by more than 1e-6).

    The wrench box is measured about the weight-compensation wrench at the
    logged attitude, matching the controller's authority-box convention.
    """
    out = {}
    if cfg.kind == "ampc":
        out["thrust_low"] = int(np.sum(log.thrust_cmd < cfg.thrust_min - BOX_TOL))
        out["thrust_high"] = int(np.sum(log.thrust_cmd > cfg.thrust_max + BOX_TOL))
        out["tilt_rate"] = int(np.sum(np.abs(commanded_tilt_rates(log)) > cfg.tilt_rate_max + BOX_TOL))
        out["thrust_rate"] = int(np.sum(np.abs(commanded_thrust_rates(log)) > cfg.thrust_rate_max + BOX_TOL))
    else:
        rot = so3.quat_to_rotmat(log.state[:, 3:7])
        hover_force = -params.mass * np.einsum("nji,j->ni", rot, params.gravity)
        rel = log.cmd_wrench.copy()
        rel[:, 0:3] -= hover_force
        limit = wrench_box_limit(cfg)
        out["wrench_box"] = int(np.sum(np.any(np.abs(rel) > limit + BOX_TOL, axis=1)))
        ticks = np.flatnonzero(control_tick_mask(log))
        if ticks.size >= 2:
            dt = np.diff(log.time[ticks])[:, None]
            rates = np.diff(log.cmd_wrench[ticks], axis=0) / dt
            rate_limit = np.array([cfg.force_rate_max] * 3 + [cfg.torque_rate_max] * 3)
            out["wrench_rate"] = int(np.sum(np.any(np.abs(rates) > rate_limit + 1e-4, axis=1)))
        else:
            out["wrench_rate"] = 0
    out["total"] = int(sum(out.values()))
    return out


def solver_stats(log: SimLog, budget: float = SOLVER_BUDGET_S) -> dict:
    """p50/p95/max solve time and the fraction of solves above the budget."""
    times = log.solve_time[np.isfinite(log.solve_time)]
    if times.size == 0:
        raise EmptyLog("log contains no solver timings")
    return {
        "n_solves": int(times.size),
        "p50": float(np.percentile(times, 50)),
        "p95": float(np.percentile(times, 95)),
        "max": float(np.max(times)),
        "budget": float(budget),
        "exceedance": float(np.mean(times > budget)),
    }


def tracking_report(log: SimLog, cfg: ControllerConfig | None = None, params: InertialParams | None = None) -> TrackingReport:
    """Full report: RMSE, constraint violations, solver statistics."""
    report = tracking_rmse(log)
    if cfg is not None:
        report.constraint_violations = constraint_violations(log, cfg, params or InertialParams())["total"]
    try:
        report.solver = solver_stats(log)
    except EmptyLog:
        report.solver = {}
    return report
