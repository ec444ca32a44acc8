"""Command-line entry point: run, matrix, train, plotdata, validate-config.

Every report path writes delimited output plus rendered figures; resolved
configs are echoed as JSON next to the outputs so any run can be reproduced
bitwise by feeding the echo back in.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import plots, so3
from .errors import ConfigError, EmptyLog, TiltMpcError
from .metrics import commanded_tilt_rates, constraint_violations, control_tick_mask, solver_stats, tracking_report
from .residual import TrainingLog, compute_residuals, design_matrix, features_from_log, ridge_fit
from .simulator import SimLog, run_episode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    user = cfgmod.load_config_file(args.config)
    resolved, sources = cfgmod.resolve_config(user)
    if args.seed is not None:
        resolved["sim"]["seed"] = args.seed
        sources["sim.seed"] = "user"
    if args.log_imu:
        resolved["sim"]["log_imu"] = True
        sources["sim.log_imu"] = "user"
    setup = cfgmod.build_episode(resolved)
    out = _out_dir(args)
    (out / "resolved_config.json").write_text(cfgmod.resolved_json(resolved, sources))

    log = run_episode(setup)
    log.to_csv(out / "sim_log.csv")
    log.solver_times_to_csv(out / "solver_times.csv")
    if log.imu is not None:
        log.imu.to_csv(out / "imu_log.csv")
    report = tracking_report(log, setup.controller_cfg, setup.params)
    (out / "report.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    plots.render_tracking(log, out / "tracking.png")

    print(
        f"{setup.controller_cfg.kind} {setup.residual_mode} {setup.trajectory.name}: "
        f"pos_rmse={report.position_rmse:.4f} m att_rmse={report.attitude_rmse:.4f} rad"
    )
    attempted = control_tick_mask(log) | (log.fallback > 0)
    if attempted.any() and np.all(log.fallback[np.flatnonzero(attempted)] > 0):
        print("error: every control step fell back; solver unrecoverable", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _run_matrix_cell(payload):
    traj_name, variant_name, resolved = payload
    try:
        setup = cfgmod.build_episode(resolved)
        log = run_episode(setup)
        report = tracking_report(log, setup.controller_cfg, setup.params)
        return traj_name, variant_name, report.as_dict(), None
    except TiltMpcError as exc:
        return traj_name, variant_name, None, f"{type(exc).__name__}: {exc}"


def cmd_matrix(args) -> int:
    spec = cfgmod.load_config_file(args.config)
    if "matrix" not in spec:
        raise ConfigError("matrix: missing [matrix] table")
    matrix = spec["matrix"]
    for field in ("trajectories", "base", "variants"):
        if field not in matrix:
            raise ConfigError(f"matrix.{field}: missing")
    trajectories = list(matrix["trajectories"])
    variants = [(v["name"], v.get("overrides", {})) for v in matrix["variants"]]

    cells = []
    for traj_name in trajectories:
        for variant_name, overrides in variants:
            tree = cfgmod.apply_overrides(matrix["base"], {"trajectory.name": traj_name, **overrides})
            resolved, _ = cfgmod.resolve_config(tree)
            cells.append((traj_name, variant_name, resolved))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_matrix_cell, cells))
    else:
        results = [_run_matrix_cell(cell) for cell in cells]

    out = _out_dir(args)
    variant_names = [name for name, _ in variants]
    pos = np.full((len(trajectories), len(variants)), np.nan)
    att = np.full((len(trajectories), len(variants)), np.nan)
    failures = {}
    for traj_name, variant_name, report, error in results:
        i, j = trajectories.index(traj_name), variant_names.index(variant_name)
        if error is None:
            pos[i, j] = report["position_rmse"]
            att[i, j] = report["attitude_rmse"]
            cell_dir = out / "cells" / f"{traj_name}__{variant_name.replace('/', '-')}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        else:
            failures[(traj_name, variant_name)] = error
            print(f"warning: {traj_name} / {variant_name} failed: {error}", file=sys.stderr)

    lines = ["trajectory,metric," + ",".join(variant_names)]
    for i, traj_name in enumerate(trajectories):
        for metric, table in (("position_rmse_m", pos), ("attitude_rmse_rad", att)):
            row = [traj_name, metric]
            for j in range(len(variants)):
                row.append("failed" if (traj_name, variant_names[j]) in failures else f"{table[i, j]:.17g}")
            lines.append(",".join(row))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    plots.render_comparison(trajectories, variant_names, pos, att, out / "comparison.png")
    print(f"matrix complete: {len(cells) - len(failures)}/{len(cells)} cells ok -> {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    logs = [TrainingLog.from_csv(p) for p in args.log]
    if not logs or any(log.time.size == 0 for log in logs):
        raise ConfigError("train.log: empty training log")
    setup_cfg, _ = cfgmod.resolve_config(cfgmod.load_config_file(args.config) if args.config else {})
    params = cfgmod.build_episode(setup_cfg).params
    residuals = np.vstack([compute_residuals(log, params) for log in logs])
    feats = np.vstack([features_from_log(log) for log in logs])
    model = ridge_fit(design_matrix(feats), residuals, args.lam)

    out = _out_dir(args)
    model_path = Path(args.out) if args.out else out / "model.json"
    model.to_json(model_path)
    stats = model.training_stats
    lines = [
        "row,rmse_force_N,std_force_N,rmse_torque_Nm,std_torque_Nm",
        f"raw,{stats['raw']['force_rmse']:.6g},{stats['raw']['force_std']:.6g},{stats['raw']['torque_rmse']:.6g},{stats['raw']['torque_std']:.6g}",
        f"model_lam_{args.lam:g},{stats['model']['force_rmse']:.6g},{stats['model']['force_std']:.6g},{stats['model']['torque_rmse']:.6g},{stats['model']['torque_std']:.6g}",
    ]
    (out / "fit_report.csv").write_text("\n".join(lines) + "\n")
    plots.render_fit_report(stats, out / "residual_fit.png")
    print(f"trained on {model.n_samples} samples (lam={args.lam:g}) -> {model_path}")
    print(f"  raw   : force {stats['raw']['force_rmse']:.3f} +- {stats['raw']['force_std']:.3f} N, torque {stats['raw']['torque_rmse']:.3f} +- {stats['raw']['torque_std']:.3f} N m")
    print(f"  model : force {stats['model']['force_rmse']:.3f} +- {stats['model']['force_std']:.3f} N, torque {stats['model']['torque_rmse']:.3f} +- {stats['model']['torque_std']:.3f} N m")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        raise ConfigError(f"plotdata.log: file not found: {log_path}")
    log = SimLog.from_csv(log_path)
    times_path = log_path.parent / "solver_times.csv"
    if times_path.exists():
        times = np.loadtxt(times_path, delimiter=",", skiprows=1, ndmin=2)
        solve_t = np.full(log.n_ticks, np.nan)
        idx = np.searchsorted(log.time, times[:, 0])
        solve_t[np.clip(idx, 0, log.n_ticks - 1)] = times[:, 1]
        log.solve_time = solve_t

    pos_err = log.state[:, 0:3] - log.ref[:, 0:3]
    att_err = so3.error_euler(log.state[:, 3:7], log.ref[:, 6:10])
    n_arms = log.alpha_cmd.shape[1]
    rates_full = np.zeros((log.n_ticks, n_arms))
    ticks = np.flatnonzero(control_tick_mask(log))
    rates = commanded_tilt_rates(log)
    if rates.shape[0]:
        for j, (a, b) in enumerate(zip(ticks[1:], np.append(ticks[2:], log.n_ticks))):
            rates_full[a:b] = rates[j]

    channels = {}
    for i, nm in enumerate(["pos_err_x", "pos_err_y", "pos_err_z"]):
        channels[nm] = pos_err[:, i]
    for i, nm in enumerate(["att_err_roll", "att_err_pitch", "att_err_yaw"]):
        channels[nm] = att_err[:, i]
    for i in range(n_arms):
        channels[f"alpha_cmd_{i}"] = log.alpha_cmd[:, i]
    for i in range(n_arms):
        channels[f"tilt_rate_{i}"] = rates_full[:, i]
    channels["solve_time"] = log.solve_time

    out = _out_dir(args)
    with open(out / "channels.csv", "w") as fh:
        fh.write("time,channel,value\n")
        for name, values in channels.items():
            for t, v in zip(log.time, values):
                fh.write(f"{t:.17g},{name},{v:.17g}\n")
    plots.render_tracking(log, out / "tracking.png")
    plots.render_tilt_angles(log, out / "tilt_angles.png")
    finite = np.isfinite(log.solve_time)
    if finite.any():
        plots.render_solver_times(log.solve_time[finite], log.time[finite], out / "solver_times.png")
    print(f"plot data written: {len(channels)} channels x {log.n_ticks} ticks -> {out}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    resolved, sources = cfgmod.resolve_config(cfgmod.load_config_file(args.config))
    cfgmod.build_episode(resolved)  # materialize to catch cross-field issues
    sys.stdout.write(cfgmod.resolved_json(resolved, sources))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiltmpc", description="Closed-loop MPC experiments for a tilt-rotor platform")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one episode from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out-dir", default="out")
    p_run.add_argument("--log-imu", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_mat = sub.add_parser("matrix", help="run a comparison matrix of configurations")
    p_mat.add_argument("--config", required=True)
    p_mat.add_argument("--jobs", type=int, default=1)
    p_mat.add_argument("--out-dir", default="out")
    p_mat.set_defaults(func=cmd_matrix)

    p_train = sub.add_parser("train", help="fit the residual model from IMU logs")
    p_train.add_argument("--log", action="append", required=True, help="IMU training log CSV (repeatable)")
    p_train.add_argument("--lam", type=float, default=1e5)
    p_train.add_argument("--features", choices=["wrench-attitude"], default="wrench-attitude")
    p_train.add_argument("--config", default=None, help="platform config for mass/inertia (defaults used otherwise)")
    p_train.add_argument("--out", default=None, help="model JSON path")
    p_train.add_argument("--out-dir", default="out")
    p_train.set_defaults(func=cmd_train)

    p_plot = sub.add_parser("plotdata", help="tidy CSV and figures from an episode log")
    p_plot.add_argument("--log", required=True)
    p_plot.add_argument("--out-dir", default="out")
    p_plot.set_defaults(func=cmd_plotdata)

    p_val = sub.add_parser("validate-config", help="validate and echo the resolved config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyLog as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
