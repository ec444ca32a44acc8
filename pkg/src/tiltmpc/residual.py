"""Offline-trained linear model of the residual wrench.

Residuals are computed from logged IMU data: force residual from the measured
specific force against the commanded force, torque residual from numerically
differentiated angular rate against the commanded torque. A linear model with
a bias column maps a 9-entry feature vector (commanded wrench plus the third
rotation-matrix row, i.e. roll/pitch information) to the predicted residual;
each wrench row is fit independently by ridge regression on the normal
equations.

The regularizer also penalizes the bias coefficient, and features are kept
raw (unstandardized): the strong default ``lam = 1e5`` is calibrated for raw
features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import so3
from .dynamics import InertialParams
from .errors import NonUniformSampling, RateTooLow, SingularNormalEquations

N_FEATURES = 9
DEFAULT_LAMBDA = 1e5
SMOOTHING_CUTOFF_HZ = 20.0
MIN_LOG_RATE_HZ = 100.0


def build_features(wrench: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """Feature vector: commanded wrench stacked with the third row of R_B.

    The third row equals ``(-sin(pitch), cos(pitch) sin(roll),
    cos(pitch) cos(roll))`` and encodes roll/pitch without yaw. Batched.
    """
    row3 = so3.quat_to_rotmat(quat)[..., 2, :]
    return np.concatenate([wrench, row3], axis=-1)


def design_matrix(features: np.ndarray) -> np.ndarray:
    """Append the bias column of ones."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    return np.concatenate([features, np.ones((features.shape[0], 1))], axis=-1)


@dataclass
class ResidualModel:
    """Coefficient matrix (6 x n_features+1, bias column last) plus metadata."""

    coefficients: np.ndarray
    lam: float
    n_samples: int = 0
    training_stats: dict = field(default_factory=dict)

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        ones = np.ones(features.shape[:-1] + (1,))
        return np.concatenate([features, ones], axis=-1) @ self.coefficients.T

    def to_json(self, path) -> None:
        payload = {
            "coefficients": self.coefficients.tolist(),
            "lam": self.lam,
            "n_samples": self.n_samples,
            "n_features": self.coefficients.shape[1] - 1,
            "training_stats": self.training_stats,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @staticmethod
    def from_json(path) -> "ResidualModel":
        payload = json.loads(Path(path).read_text())
        return ResidualModel(
            coefficients=np.asarray(payload["coefficients"], dtype=float),
            lam=float(payload["lam"]),
            n_samples=int(payload.get("n_samples", 0)),
            training_stats=payload.get("training_stats", {}),
        )


def predict_residual(model: ResidualModel, features: np.ndarray) -> np.ndarray:
    return model.predict(features)


def ridge_fit(design: np.ndarray, targets: np.ndarray, lam: float) -> ResidualModel:
    """Per-row ridge regression through the normal equations.

    ``design`` must already carry the bias column. Each target column c_i
    solves ``(X'X + lam I) c_i = X' y_i``; lam penalizes the bias term too.
    """
    design = np.asarray(design, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    if design.shape[0] <= design.shape[1]:
        raise ValueError("need more samples than features")
    gram = design.T @ design
    if lam == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularNormalEquations("X'X is rank deficient and lam = 0")
    coeffs = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), design.T @ targets).T
    model = ResidualModel(coefficients=coeffs, lam=lam, n_samples=design.shape[0])
    model.training_stats = training_rmse(model, design, targets)
    return model


def residual_stats(errors: np.ndarray) -> dict:
    """Force/torque RMSE and standard deviation of per-sample error norms."""
    force = np.linalg.norm(errors[:, 0:3], axis=1)
    torque = np.linalg.norm(errors[:, 3:6], axis=1)
    return {
        "force_rmse": float(np.sqrt(np.mean(force**2))),
        "force_std": float(np.std(force)),
        "torque_rmse": float(np.sqrt(np.mean(torque**2))),
        "torque_std": float(np.std(torque)),
    }


def training_rmse(model: ResidualModel, design: np.ndarray, targets: np.ndarray) -> dict:
    """Raw-vs-fitted error statistics, grouped by force and torque."""
    pred = design @ model.coefficients.T
    fitted = residual_stats(targets - pred)
    raw = residual_stats(targets)
    per_axis = np.sqrt(np.mean((targets - pred) ** 2, axis=0))
    return {"raw": raw, "model": fitted, "per_axis_rmse": per_axis.tolist()}


@dataclass
class TrainingLog:
    """Uniform-rate log of commanded wrench, attitude and bias-corrected IMU data."""

    time: np.ndarray
    wrench: np.ndarray
    quat: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    CSV_HEADER = (
        "t,cmd_fx,cmd_fy,cmd_fz,cmd_tx,cmd_ty,cmd_tz,"
        "qw,qx,qy,qz,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z"
    )

    def to_csv(self, path) -> None:
        data = np.column_stack([self.time, self.wrench, self.quat, self.accel, self.gyro])
        np.savetxt(path, data, delimiter=",", header=self.CSV_HEADER, comments="", fmt="%.17g")

    @staticmethod
    def from_csv(path) -> "TrainingLog":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return TrainingLog(
            time=data[:, 0],
            wrench=data[:, 1:7],
            quat=data[:, 7:11],
            accel=data[:, 11:14],
            gyro=data[:, 14:17],
        )


def _butter2_coeffs(cutoff_hz: float, dt: float):
    omega = np.tan(np.pi * cutoff_hz * dt)
    norm = 1.0 + np.sqrt(2.0) * omega + omega * omega
    b = np.array([omega * omega, 2 * omega * omega, omega * omega]) / norm
    a = np.array([2.0 * (omega * omega - 1.0), (1.0 - np.sqrt(2.0) * omega + omega * omega)]) / norm
    return b, a


def lowpass(signal: np.ndarray, cutoff_hz: float, dt: float) -> np.ndarray:
    """Zero-phase 2nd-order Butterworth low-pass (forward-backward, odd reflection)."""
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[0]
    pad = min(n - 1, max(3, int(round(1.0 / (cutoff_hz * dt)))))

    def run(x):
        b, a = _butter2_coeffs(cutoff_hz, dt)
        y = np.zeros_like(x)
        x1 = x2 = y1 = y2 = np.zeros(x.shape[1:])
        for i in range(x.shape[0]):
            y[i] = b[0] * x[i] + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2
            x2, x1 = x1, x[i]
            y2, y1 = y1, y[i]
        return y

    head = 2.0 * signal[0] - signal[pad:0:-1]
    tail = 2.0 * signal[-1] - signal[-2 : -pad - 2 : -1]
    padded = np.concatenate([head, signal, tail], axis=0)
    smoothed = run(run(padded)[::-1])[::-1]
    return smoothed[pad : pad + n]


def compute_residuals(log: TrainingLog, params: InertialParams) -> np.ndarray:
    """Measured residual wrench per sample, ``(n, 6)``.

    Angular acceleration comes from a central difference of the gyro signal
    followed by low-pass smoothing; the accelerometer signal is assumed
    gravity-free (specific force) and bias-corrected upstream.
    """
    time = np.asarray(log.time, dtype=float)
    if time.shape[0] < 5:
        raise RateTooLow("need at least 5 samples")
    steps = np.diff(time)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * max(dt, 1.0):
        raise NonUniformSampling("log timestamps are not uniformly spaced")
    if 1.0 / dt < MIN_LOG_RATE_HZ - 1e-9:
        raise RateTooLow(f"log rate {1.0 / dt:.1f} Hz is below {MIN_LOG_RATE_HZ:.0f} Hz")

    omega_dot = np.empty_like(log.gyro)
    omega_dot[1:-1] = (log.gyro[2:] - log.gyro[:-2]) / (2.0 * dt)
    omega_dot[0] = (log.gyro[1] - log.gyro[0]) / dt
    omega_dot[-1] = (log.gyro[-1] - log.gyro[-2]) / dt
    omega_dot = lowpass(omega_dot, SMOOTHING_CUTOFF_HZ, dt)

    d_force = params.mass * log.accel - log.wrench[:, 0:3]
    d_torque = omega_dot @ params.inertia.T - log.wrench[:, 3:6]
    return np.concatenate([d_force, d_torque], axis=1)


def features_from_log(log: TrainingLog) -> np.ndarray:
    return build_features(log.wrench, log.quat)
