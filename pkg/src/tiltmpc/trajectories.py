"""Reference trajectory generators with consistent pose/twist samples.

Each trajectory is a deterministic pure function of time returning position,
world-frame velocity, attitude quaternion and body angular rate. Outside its
duration the final pose is held with zero twist. Velocities are the exact
analytic derivatives of the positions (and body rates of the attitudes), so
finite differencing any sampled channel reproduces its twin; the step
trajectory is the one deliberate exception at its jump instants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import so3


@dataclass
class ReferencePoint:
    pos: np.ndarray
    vel: np.ndarray
    quat: np.ndarray
    omega: np.ndarray
    timestamp: float = 0.0


@dataclass
class ReferenceTrajectory:
    """Named sampler; ``sample`` accepts a scalar or an array of times."""

    name: str
    duration: float
    _sampler: Callable

    def sample(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        moving = t_arr <= self.duration
        t_eff = np.clip(t_arr, 0.0, self.duration)
        pos, vel, quat, omega = self._sampler(t_eff)
        vel = vel * moving[:, None]
        omega = omega * moving[:, None]
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            return ReferencePoint(pos[0], vel[0], quat[0], omega[0], float(t))
        return pos, vel, quat, omega

    def reference_rows(self, t_arr: np.ndarray) -> np.ndarray:
        """Stacked rows ``[p, v, q, w]`` (13 columns) for solver references."""
        pos, vel, quat, omega = self.sample(np.asarray(t_arr, dtype=float))
        return np.concatenate([pos, vel, quat, omega], axis=1)


def _fixed_attitude(n: int):
    quat = np.tile(so3.IDENTITY_QUAT, (n, 1))
    omega = np.zeros((n, 3))
    return quat, omega


def hover(duration: float = 10.0, pos=(0.0, 0.0, 1.0)) -> ReferenceTrajectory:
    pos = np.asarray(pos, dtype=float)

    def sampler(t):
        n = t.shape[0]
        quat, omega = _fixed_attitude(n)
        return np.tile(pos, (n, 1)), np.zeros((n, 3)), quat, omega

    return ReferenceTrajectory("hover", duration, sampler)


def square(leg: float = 1.0, v_max: float = 1.0, altitude: float = 1.0) -> ReferenceTrajectory:
    """Closed horizontal square, trapezoidal speed per leg, fixed attitude.

    The profile accelerates over the first quarter of each leg, cruises at
    ``v_max`` over the middle half and decelerates over the last quarter, so
    the peak reference speed equals ``v_max`` exactly and each corner is
    passed at rest.
    """
    if leg <= 0 or v_max <= 0:
        raise ValueError("leg and v_max must be positive")
    corners = leg * np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    accel = 2.0 * v_max**2 / leg
    t_acc = leg / (2.0 * v_max)
    t_leg = 3.0 * t_acc
    duration = 4.0 * t_leg

    def profile(tau):
        tau1 = np.minimum(tau, t_acc)
        tau2 = np.clip(tau - t_acc, 0.0, t_acc)
        tau3 = np.clip(tau - 2.0 * t_acc, 0.0, t_acc)
        dist = 0.5 * accel * tau1**2 + v_max * tau2 + v_max * tau3 - 0.5 * accel * tau3**2
        speed = accel * tau1 - accel * tau3
        return dist, speed

    def sampler(t):
        n = t.shape[0]
        idx = np.minimum((t / t_leg).astype(int), 3)
        tau = t - idx * t_leg
        dist, speed = profile(tau)
        start = corners[idx]
        direction = (corners[idx + 1] - corners[idx]) / leg
        pos = np.column_stack([start + direction * dist[:, None], np.full(n, altitude)])
        vel = np.column_stack([direction * speed[:, None], np.zeros(n)])
        quat, omega = _fixed_attitude(n)
        return pos, vel, quat, omega

    return ReferenceTrajectory("square", duration, sampler)


def _smooth_bump(u: np.ndarray):
    """C2 bump on [0, 1]: sin^4(pi u), peak 1 at u = 1/2; and its derivative."""
    s = np.sin(np.pi * u)
    c = np.cos(np.pi * u)
    return s**4, 4.0 * np.pi * s**3 * c


def attitude_profile(max_angle: float = np.deg2rad(45.0), duration: float = 27.0, pos=(0.0, 0.0, 1.0)) -> ReferenceTrajectory:
    """Fixed position; sequential smooth roll then pitch excursions to +/- max_angle."""
    if not 0.0 < max_angle < np.pi / 2:
        raise ValueError("max_angle must lie in (0, pi/2)")
    pos = np.asarray(pos, dtype=float)
    t_seg = duration / 4.0
    signs = np.array([1.0, -1.0, 1.0, -1.0])

    def sampler(t):
        n = t.shape[0]
        seg = np.minimum((t / t_seg).astype(int), 3)
        u = (t - seg * t_seg) / t_seg
        bump, dbump = _smooth_bump(u)
        angle = max_angle * signs[seg] * bump
        rate = max_angle * signs[seg] * dbump / t_seg
        is_roll = seg < 2
        roll = np.where(is_roll, angle, 0.0)
        pitch = np.where(is_roll, 0.0, angle)
        quat = so3.quat_from_euler(roll, pitch, np.zeros(n))
        omega = np.column_stack([np.where(is_roll, rate, 0.0), np.where(is_roll, 0.0, rate), np.zeros(n)])
        return np.tile(pos, (n, 1)), np.zeros((n, 3)), quat, omega

    return ReferenceTrajectory("attitude", duration, sampler)


def lemniscate(
    duration: float = 15.0,
    peak_speed: float = 0.9,
    bend_pitch_max: float = np.deg2rad(30.0),
    bend_height: float = 0.2,
    altitude: float = 1.0,
) -> ReferenceTrajectory:
    """Figure-eight with vertical bending and a curvature-coupled pitch reference.

    The planar path is a Gerono lemniscate scaled so the peak reference speed
    equals ``peak_speed``; the bend adds ``bend_height * sin(2u)`` of height
    and the pitch reference peaks at ``bend_pitch_max``.
    """
    if duration <= 0 or peak_speed <= 0:
        raise ValueError("duration and peak_speed must be positive")
    rate = 2.0 * np.pi / duration
    half_axis_sq = (peak_speed**2 / rate**2 - 4.0 * bend_height**2) / 2.0
    if half_axis_sq <= 0:
        raise ValueError("peak_speed too small for the requested bend height")
    a = np.sqrt(half_axis_sq)

    def sampler(t):
        u = rate * t
        pos = np.column_stack([a * np.sin(u), 0.5 * a * np.sin(2 * u), altitude + bend_height * np.sin(2 * u)])
        vel = rate * np.column_stack([a * np.cos(u), a * np.cos(2 * u), 2.0 * bend_height * np.cos(2 * u)])
        pitch = bend_pitch_max * np.sin(2 * u)
        pitch_rate = 2.0 * rate * bend_pitch_max * np.cos(2 * u)
        quat = so3.quat_from_euler(np.zeros_like(u), pitch, np.zeros_like(u))
        omega = np.column_stack([np.zeros_like(u), pitch_rate, np.zeros_like(u)])
        return pos, vel, quat, omega

    return ReferenceTrajectory("lemniscate", duration, sampler)


def lemniscate_slow() -> ReferenceTrajectory:
    traj = lemniscate(duration=15.0, peak_speed=0.9)
    traj.name = "lemniscate_slow"
    return traj


def lemniscate_fast() -> ReferenceTrajectory:
    traj = lemniscate(duration=5.5, peak_speed=2.85)
    traj.name = "lemniscate_fast"
    return traj


def step_x(length: float = 1.0, dwell: float = 6.0, altitude: float = 1.0) -> ReferenceTrajectory:
    """Instantaneous position steps along x: out after one dwell, back after two.

    The reference velocity is zero everywhere; the jumps are the deliberate
    discontinuities this trajectory exists to produce.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    if dwell < 5.0:
        raise ValueError("dwell must allow the closed loop to settle (>= 5 s)")
    duration = 3.0 * dwell

    def sampler(t):
        n = t.shape[0]
        x = np.where((t >= dwell) & (t < 2.0 * dwell), length, 0.0)
        pos = np.column_stack([x, np.zeros(n), np.full(n, altitude)])
        quat, omega = _fixed_attitude(n)
        return pos, np.zeros((n, 3)), quat, omega

    return ReferenceTrajectory("step_x", duration, sampler)


def from_csv(path, name: str = "csv") -> ReferenceTrajectory:
    """Sampled trajectory: rows ``t, p(3), v(3), q(4), w(3)``; linear
    interpolation with quaternion renormalization."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t_grid = data[:, 0]

    def sampler(t):
        cols = [np.interp(t, t_grid, data[:, j]) for j in range(1, 14)]
        block = np.column_stack(cols)
        quat = so3.quat_normalize(block[:, 6:10], canonical=False)
        return block[:, 0:3], block[:, 3:6], quat, block[:, 10:13]

    return ReferenceTrajectory(name, float(t_grid[-1]), sampler)


PRESETS = {
    "hover": hover,
    "square": square,
    "attitude": attitude_profile,
    "lemniscate_slow": lemniscate_slow,
    "lemniscate_fast": lemniscate_fast,
    "step_x": step_x,
}


def by_name(name: str, **kwargs) -> ReferenceTrajectory:
    if name not in PRESETS:
        raise KeyError(f"unknown trajectory preset '{name}'")
    return PRESETS[name](**kwargs)
