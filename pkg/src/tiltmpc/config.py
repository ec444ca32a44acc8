"""Experiment configuration: schema, defaults, validation, episode assembly.

Configs are TOML (human-edited) or JSON (the resolved echo of an earlier
run; feeding it back reproduces the run bitwise). Every leaf carries a
source tag: ``paper`` for constants taken from the published tuning tables
and experiment descriptions, ``non-paper`` for artifact defaults, ``user``
once a file overrides it. Unknown keys are rejected with the full dotted
path in the message.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .allocation import PlatformGeometry
from .controllers import ControllerConfig
from .dynamics import InertialParams
from .ekf import EkfNoise
from .errors import ConfigError
from .residual import ResidualModel
from .simulator import ActuatorPlantModel, EpisodeSetup, SensorSuite, TrueDisturbance
from . import trajectories


@dataclass
class Leaf:
    default: Any
    source: str  # "paper" | "non-paper"
    cast: Any = float


def _float_list(n):
    def cast(v):
        arr = [float(x) for x in v]
        if len(arr) != n:
            raise ValueError(f"expected {n} entries, got {len(arr)}")
        return arr

    return cast


def _matrix(rows, cols):
    def cast(v):
        arr = [[float(x) for x in row] for row in v]
        if len(arr) != rows or any(len(r) != cols for r in arr):
            raise ValueError(f"expected a {rows}x{cols} matrix")
        return arr

    return cast


def _choice(*options):
    def cast(v):
        if v not in options:
            raise ValueError(f"must be one of {options}")
        return v

    return cast


_OPTIONAL_FLOAT = lambda v: None if v is None else float(v)

SCHEMA = {
    "platform": {
        "mass": Leaf(4.36, "paper"),
        "inertia": Leaf([0.08, 0.08, 0.14], "non-paper", _float_list(3)),
        "gravity": Leaf(-9.81, "paper"),
        "geometry": {
            "arms": Leaf(6, "paper", int),
            "rotors_per_arm": Leaf(2, "paper", int),
            "arm_radius": Leaf(0.3, "non-paper"),
            "drag_coeff": Leaf(0.016, "non-paper"),
            "spin_pattern": Leaf("arm_alternating", "non-paper", _choice("arm_alternating", "counter_rotating")),
        },
    },
    "controller": {
        "kind": Leaf("wmpc", "non-paper", _choice("wmpc", "ampc")),
        "horizon": Leaf(None, "paper", lambda v: None if v is None else int(v)),
        "dt": Leaf(0.05, "paper"),
        "rate_hz": Leaf(100.0, "non-paper"),
        "solver_iterations": Leaf(1, "non-paper", int),
        "max_qp_iter": Leaf(500, "non-paper", int),
        "force_max": Leaf(20.0, "paper"),
        "torque_max": Leaf(20.0, "paper"),
        "wrench_box_margin": Leaf(1.0, "non-paper"),
        "force_rate_max": Leaf(300.0, "non-paper"),
        "torque_rate_max": Leaf(300.0, "non-paper"),
        "thrust_min": Leaf(0.1, "paper"),
        "thrust_max": Leaf(16.0, "paper"),
        "thrust_rate_max": Leaf(29.0, "paper"),
        "tilt_rate_max": Leaf(10.0, "paper"),
        "weights": {
            "pos": Leaf(10.0, "non-paper"),
            "vel": Leaf(3.0, "non-paper"),
            "att": Leaf(30.0, "non-paper"),
            "omega": Leaf(3.0, "non-paper"),
            "force_rate": Leaf(2e-4, "non-paper"),
            "torque_rate": Leaf(2e-3, "non-paper"),
            "thrust": Leaf(1.0, "paper"),
            "alpha": Leaf(10.0, "paper"),
            "alpha_rate": Leaf(10.0, "paper"),
            "thrust_rate": Leaf(0.01, "non-paper"),
            "terminal_scale": Leaf(5.0, "non-paper"),
        },
    },
    "residual": {
        "mode": Leaf("nc", "non-paper", _choice("nc", "in_mpc", "post_mpc", "do")),
        "lam": Leaf(1e5, "paper"),
        "model_path": Leaf("", "non-paper", str),
    },
    "estimator": {
        "enabled": Leaf(None, "non-paper", lambda v: None if v is None else bool(v)),
        "pos_psd": Leaf(1e-8, "non-paper"),
        "vel_psd": Leaf(3e-4, "non-paper"),
        "att_psd": Leaf(1e-6, "non-paper"),
        "omega_psd": Leaf(1e-4, "non-paper"),
        "force_psd": Leaf(4e-3, "non-paper"),
        "torque_psd": Leaf(1e-5, "non-paper"),
    },
    "sensors": {
        "pose_rate_hz": Leaf(100.0, "non-paper"),
        "sigma_pos": Leaf(0.002, "non-paper"),
        "sigma_att_deg": Leaf(0.2, "non-paper"),
        "latency": Leaf(0.0, "non-paper"),
        "imu_rate_hz": Leaf(200.0, "non-paper"),
        "accel_noise": Leaf(0.02, "non-paper"),
        "gyro_noise": Leaf(0.002, "non-paper"),
        "accel_bias": Leaf([0.05, -0.03, 0.04], "non-paper", _float_list(3)),
    },
    "actuators": {
        "servo_tau": Leaf(0.05, "non-paper"),
        "servo_rate_limit": Leaf(12.0, "non-paper"),
        "thrust_tau": Leaf(0.03, "non-paper"),
        "thrust_rate_limit": Leaf(40.0, "non-paper"),
        "thrust_floor": Leaf(0.0, "non-paper"),
        "thrust_ceil": Leaf(18.0, "non-paper"),
    },
    "disturbance": {
        "mode": Leaf("zero", "non-paper", _choice("zero", "constant_local", "linear_features", "constant_plus_noise")),
        "wrench": Leaf([0.0] * 6, "non-paper", _float_list(6)),
        "sigma": Leaf(0.0, "non-paper"),
        "coefficients": Leaf([], "non-paper", lambda v: [] if v == [] else _matrix(6, 10)(v)),
        "preset": Leaf("", "non-paper", _choice("", "demo")),
    },
    "trajectory": {
        "name": Leaf("hover", "non-paper", _choice("hover", "square", "attitude", "lemniscate", "lemniscate_slow", "lemniscate_fast", "step_x", "csv")),
        "leg": Leaf(1.0, "paper"),
        "v_max": Leaf(1.0, "non-paper"),
        "altitude": Leaf(1.0, "non-paper"),
        "max_angle_deg": Leaf(45.0, "paper"),
        "duration": Leaf(None, "paper", _OPTIONAL_FLOAT),
        "peak_speed": Leaf(None, "paper", _OPTIONAL_FLOAT),
        "length": Leaf(1.0, "paper"),
        "dwell": Leaf(6.0, "non-paper"),
        "path": Leaf("", "non-paper", str),
    },
    "sim": {
        "duration": Leaf(None, "non-paper", _OPTIONAL_FLOAT),
        "settle_time": Leaf(0.0, "non-paper"),
        "plant_dt": Leaf(1e-3, "non-paper"),
        "seed": Leaf(0, "non-paper", int),
        "log_imu": Leaf(False, "non-paper", bool),
    },
}

# Ground-truth coefficient preset for synthetic linear-feature disturbances:
# a few percent of wrench mapping error, attitude-coupled forces/torques and
# static offsets, sized like the residual magnitudes reported for the
# reference platform.
DEMO_COEFFICIENTS = [
    [0.030, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 1.2],
    [0.0, 0.025, 0.0, 0.0, 0.0, 0.0, 0.0, -0.8, 0.0, -0.9],
    [0.0, 0.0, -0.035, 0.0, 0.0, 0.0, 0.5, 0.4, 0.0, -1.6],
    [0.0, 0.0, 0.0, 0.04, 0.0, 0.0, 0.0, 0.09, 0.0, 0.06],
    [0.0, 0.0, 0.0, 0.0, 0.04, 0.0, -0.08, 0.0, 0.0, -0.05],
    [0.0, 0.0, 0.0, 0.001, 0.0, 0.05, 0.0, 0.0, 0.0, 0.08],
]


def _resolve(schema: dict, user: dict, prefix: str = ""):
    resolved: dict = {}
    sources: dict = {}
    for key, node in schema.items():
        path = f"{prefix}{key}"
        if isinstance(node, dict):
            sub_user = user.get(key, {})
            if not isinstance(sub_user, dict):
                raise ConfigError(f"{path}: expected a table")
            resolved[key], sub_sources = _resolve(node, sub_user, prefix=f"{path}.")
            sources.update(sub_sources)
        else:
            if key in user:
                try:
                    resolved[key] = node.cast(user[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{path}: {exc}") from exc
                sources[path] = "user"
            else:
                resolved[key] = node.default
                sources[path] = node.source
    for key in user:
        if key not in schema:
            raise ConfigError(f"{prefix}{key}: unknown key")
    return resolved, sources


def resolve_config(user: dict):
    """Validate a user config tree against the schema; returns
    ``(resolved_values, sources)`` with one source tag per dotted leaf."""
    resolved, sources = _resolve(SCHEMA, user)
    if resolved["controller"]["horizon"] is None:
        resolved["controller"]["horizon"] = 20 if resolved["controller"]["kind"] == "wmpc" else 10
    if resolved["disturbance"]["preset"] == "demo":
        resolved["disturbance"]["coefficients"] = [row[:] for row in DEMO_COEFFICIENTS]
    return resolved, sources


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        return payload.get("config", payload)
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def resolved_json(resolved: dict, sources: dict) -> str:
    return json.dumps({"config": resolved, "sources": sources}, indent=2, sort_keys=True) + "\n"


def build_trajectory(tr: dict) -> trajectories.ReferenceTrajectory:
    name = tr["name"]
    alt = tr["altitude"]
    if name == "hover":
        return trajectories.hover(duration=tr["duration"] or 10.0, pos=(0.0, 0.0, alt))
    if name == "square":
        return trajectories.square(leg=tr["leg"], v_max=tr["v_max"], altitude=alt)
    if name == "attitude":
        return trajectories.attitude_profile(
            max_angle=np.deg2rad(tr["max_angle_deg"]), duration=tr["duration"] or 27.0, pos=(0.0, 0.0, alt)
        )
    if name == "lemniscate":
        return trajectories.lemniscate(duration=tr["duration"] or 15.0, peak_speed=tr["peak_speed"] or 0.9, altitude=alt)
    if name == "lemniscate_slow":
        return trajectories.lemniscate_slow()
    if name == "lemniscate_fast":
        return trajectories.lemniscate_fast()
    if name == "step_x":
        return trajectories.step_x(length=tr["length"], dwell=tr["dwell"], altitude=alt)
    if name == "csv":
        if not tr["path"]:
            raise ConfigError("trajectory.path: required for csv trajectories")
        return trajectories.from_csv(tr["path"])
    raise ConfigError(f"trajectory.name: unknown preset '{name}'")


def build_episode(resolved: dict, seed_override: int | None = None, log_imu: bool | None = None) -> EpisodeSetup:
    """Materialize an EpisodeSetup from a resolved config tree."""
    plat = resolved["platform"]
    geom_cfg = plat["geometry"]
    n_arms = geom_cfg["arms"]
    n_rotors = n_arms * geom_cfg["rotors_per_arm"]
    if geom_cfg["spin_pattern"] == "counter_rotating":
        spins = np.tile([1.0, -1.0], n_rotors // 2)[:n_rotors]
    else:
        spins = None  # geometry default: one handedness per arm, alternating
    geometry = PlatformGeometry(
        n_arms=n_arms,
        rotors_per_arm=geom_cfg["rotors_per_arm"],
        arm_radius=geom_cfg["arm_radius"],
        drag_coeff=geom_cfg["drag_coeff"],
        spin_directions=spins,
    )
    params = InertialParams(mass=plat["mass"], inertia=np.array(plat["inertia"]), gravity=np.array([0.0, 0.0, plat["gravity"]]))

    ctrl = resolved["controller"]
    weights = ctrl["weights"]
    cfg = ControllerConfig(
        kind=ctrl["kind"],
        horizon=ctrl["horizon"],
        dt=ctrl["dt"],
        force_max=ctrl["force_max"],
        torque_max=ctrl["torque_max"],
        wrench_box_margin=ctrl["wrench_box_margin"],
        force_rate_max=ctrl["force_rate_max"],
        torque_rate_max=ctrl["torque_rate_max"],
        thrust_min=ctrl["thrust_min"],
        thrust_max=ctrl["thrust_max"],
        thrust_rate_max=ctrl["thrust_rate_max"],
        tilt_rate_max=ctrl["tilt_rate_max"],
        weight_pos=weights["pos"],
        weight_vel=weights["vel"],
        weight_att=weights["att"],
        weight_omega=weights["omega"],
        weight_force_rate=weights["force_rate"],
        weight_torque_rate=weights["torque_rate"],
        weight_thrust=weights["thrust"],
        weight_alpha=weights["alpha"],
        weight_alpha_rate=weights["alpha_rate"],
        weight_thrust_rate=weights["thrust_rate"],
        terminal_scale=weights["terminal_scale"],
        max_qp_iter=ctrl["max_qp_iter"],
    )

    dist_cfg = resolved["disturbance"]
    disturbance = TrueDisturbance(
        mode=dist_cfg["mode"],
        wrench=np.array(dist_cfg["wrench"]),
        coefficients=np.array(dist_cfg["coefficients"]) if dist_cfg["coefficients"] else None,
        sigma=dist_cfg["sigma"],
    )

    sens = resolved["sensors"]
    sensors = SensorSuite(
        pose_rate_hz=sens["pose_rate_hz"],
        sigma_pos=sens["sigma_pos"],
        sigma_att=np.deg2rad(sens["sigma_att_deg"]),
        latency=sens["latency"],
        imu_rate_hz=sens["imu_rate_hz"],
        accel_noise=sens["accel_noise"],
        gyro_noise=sens["gyro_noise"],
        accel_bias=np.array(sens["accel_bias"]),
    )
    est = resolved["estimator"]
    ekf_noise = EkfNoise(
        pos_psd=est["pos_psd"],
        vel_psd=est["vel_psd"],
        att_psd=est["att_psd"],
        omega_psd=est["omega_psd"],
        force_psd=est["force_psd"],
        torque_psd=est["torque_psd"],
        meas_sigma_pos=sens["sigma_pos"],
        meas_sigma_att=np.deg2rad(sens["sigma_att_deg"]),
    )
    act = resolved["actuators"]
    actuators = ActuatorPlantModel(
        servo_tau=act["servo_tau"],
        servo_rate_limit=act["servo_rate_limit"],
        thrust_tau=act["thrust_tau"],
        thrust_rate_limit=act["thrust_rate_limit"],
        thrust_floor=act["thrust_floor"],
        thrust_ceil=act["thrust_ceil"],
    )

    res_cfg = resolved["residual"]
    model = None
    if res_cfg["mode"] in ("in_mpc", "post_mpc"):
        if not res_cfg["model_path"]:
            raise ConfigError("residual.model_path: required for in_mpc/post_mpc modes")
        model = ResidualModel.from_json(res_cfg["model_path"])

    sim = resolved["sim"]
    return EpisodeSetup(
        controller_cfg=cfg,
        trajectory=build_trajectory(resolved["trajectory"]),
        params=params,
        geometry=geometry,
        residual_mode=res_cfg["mode"],
        residual_model=model,
        disturbance=disturbance,
        actuators=actuators,
        sensors=sensors,
        ekf_noise=ekf_noise,
        estimator_enabled=est["enabled"],
        seed=sim["seed"] if seed_override is None else seed_override,
        duration=sim["duration"],
        settle_time=sim["settle_time"],
        plant_dt=sim["plant_dt"],
        control_rate_hz=ctrl["rate_hz"],
        log_imu=sim["log_imu"] if log_imu is None else log_imu,
        solver_iterations=ctrl["solver_iterations"],
    )


def apply_overrides(tree: dict, overrides: dict) -> dict:
    """Apply ``{"dotted.path": value}`` overrides to a nested config tree."""
    import copy

    out = copy.deepcopy(tree)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: cannot override through a scalar")
        node[parts[-1]] = value
    return out
