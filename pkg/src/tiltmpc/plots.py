"""Figure rendering for episode logs, comparisons and model fits.

All functions render straight to files (Agg backend); the CLI report paths
call them next to the corresponding CSV output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import so3
from .metrics import commanded_tilt_rates, control_tick_mask
from .simulator import SimLog

plt.rcParams.update(
    {
        "figure.figsize": (7.5, 4.5),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
        "lines.linewidth": 1.1,
    }
)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_tracking(log: SimLog, path) -> None:
    """Position and attitude error norms over time."""
    pos_err = np.linalg.norm(log.state[:, 0:3] - log.ref[:, 0:3], axis=1)
    att_err = np.linalg.norm(so3.error_euler(log.state[:, 3:7], log.ref[:, 6:10]), axis=1)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    ax1.plot(log.time, pos_err, color="tab:blue")
    ax1.set_ylabel("position error [m]")
    ax2.plot(log.time, np.rad2deg(att_err), color="tab:orange")
    ax2.set_ylabel("attitude error [deg]")
    ax2.set_xlabel("time [s]")
    ax1.set_title(f"{log.meta.get('controller', '?')} / {log.meta.get('residual_mode', '?')} on {log.meta.get('trajectory', '?')}")
    _save(fig, path)


def render_tilt_angles(log: SimLog, path, rate_limit: float | None = None) -> None:
    """Commanded tilt angles and their finite-difference rates."""
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    for i in range(log.alpha_cmd.shape[1]):
        ax1.plot(log.time, log.alpha_cmd[:, i], label=f"arm {i}")
    ax1.set_ylabel("tilt command [rad]")
    ax1.legend(ncol=3, fontsize=7)
    ticks = np.flatnonzero(control_tick_mask(log))
    rates = commanded_tilt_rates(log)
    if rates.shape[0]:
        ax2.plot(log.time[ticks][1:], rates)
    if rate_limit is not None:
        ax2.axhline(rate_limit, color="k", linestyle="--", linewidth=0.8)
        ax2.axhline(-rate_limit, color="k", linestyle="--", linewidth=0.8)
    ax2.set_ylabel("tilt rate [rad/s]")
    ax2.set_xlabel("time [s]")
    _save(fig, path)


def render_solver_times(times: np.ndarray, stamps: np.ndarray, path, budget: float = 0.010) -> None:
    fig, ax = plt.subplots()
    ax.plot(stamps, 1e3 * times, ".", markersize=2)
    ax.axhline(1e3 * budget, color="r", linestyle="--", linewidth=0.9, label=f"budget {1e3 * budget:.0f} ms")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("solve time [ms]")
    ax.legend()
    _save(fig, path)


def render_comparison(trajectory_names, variant_names, pos_table, att_table, path) -> None:
    """Grouped bars: one panel per metric, one group per trajectory."""
    x = np.arange(len(trajectory_names))
    width = 0.8 / max(1, len(variant_names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    for j, name in enumerate(variant_names):
        ax1.bar(x + j * width, pos_table[:, j], width, label=name)
        ax2.bar(x + j * width, att_table[:, j], width, label=name)
    for ax, title in ((ax1, "position RMSE [m]"), (ax2, "attitude RMSE [rad]")):
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(trajectory_names, rotation=15)
        ax.set_title(title)
    ax1.legend(fontsize=7)
    _save(fig, path)


def render_fit_report(stats: dict, path) -> None:
    """Raw-vs-model residual RMSE with standard-deviation whiskers."""
    labels = ["raw", "model"]
    force = [stats["raw"]["force_rmse"], stats["model"]["force_rmse"]]
    force_std = [stats["raw"]["force_std"], stats["model"]["force_std"]]
    torque = [stats["raw"]["torque_rmse"], stats["model"]["torque_rmse"]]
    torque_std = [stats["raw"]["torque_std"], stats["model"]["torque_std"]]
    fig, (ax1, ax2) = plt.subplots(1, 2)
    ax1.bar(labels, force, yerr=force_std, capsize=4, color=["tab:blue", "tab:orange"])
    ax1.set_ylabel("force residual RMSE [N]")
    ax2.bar(labels, torque, yerr=torque_std, capsize=4, color=["tab:blue", "tab:orange"])
    ax2.set_ylabel("torque residual RMSE [N m]")
    _save(fig, path)
