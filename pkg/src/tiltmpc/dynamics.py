"""Newton-Euler rigid-body dynamics with a residual wrench, plus RK4 stepping.

State vector layout (13 scalars): ``[p (world), q (unit, wxyz), v (body),
omega (body)]``. Wrenches are plain 6-vectors ``[force
(body, N), torque (body, N*m)]``. All functions broadcast over leading batch
dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

P = slice(0, 3)
Q = slice(3, 7)
V = slice(7, 10)
W = slice(10, 13)

STATE_DIM = 13


def _default_inertia() -> np.ndarray:
    return np.diag([0.08, 0.08, 0.14])


def _default_gravity() -> np.ndarray:
    return np.array([0.0, 0.0, -9.81])


@dataclass
class InertialParams:
    """Mass, inertia and gravity. Mass default is the reference platform's
    4.36 kg; the inertia default is a plausible value for that class and is
    flagged non-paper in the experiment config."""

    mass: float = 4.36
    inertia: np.ndarray = field(default_factory=_default_inertia)
    gravity: np.ndarray = field(default_factory=_default_gravity)

    def __post_init__(self) -> None:
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.inertia.ndim == 1:
            self.inertia = np.diag(self.inertia)
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise ValueError("inertia matrix must be positive definite")
        self.inertia_inv = np.linalg.inv(self.inertia)


@dataclass
class RigidState:
    """Pose and twist of the vehicle."""

    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.quat, self.vel, self.omega])

    @staticmethod
    def from_vector(x: np.ndarray) -> "RigidState":
        x = np.asarray(x, dtype=float)
        return RigidState(x[P].copy(), x[Q].copy(), x[V].copy(), x[W].copy())

    @staticmethod
    def hover(pos=(0.0, 0.0, 0.0), quat=None) -> "RigidState":
        q = so3.IDENTITY_QUAT.copy() if quat is None else np.asarray(quat, float)
        return RigidState(np.asarray(pos, float), q, np.zeros(3), np.zeros(3))


def gravity_compensation_wrench(q: np.ndarray, params: InertialParams) -> np.ndarray:
    """Body wrench that exactly holds the platform weight at attitude q."""
    rotmat = so3.quat_to_rotmat(q)
    force = -params.mass * rotmat.T @ params.gravity
    return np.concatenate([force, np.zeros(3)])


def dynamics(x: np.ndarray, wrench: np.ndarray, residual: np.ndarray, params: InertialParams) -> np.ndarray:
    """Continuous-time state derivative under actuator wrench plus residual."""
    q = x[..., Q]
    v = x[..., V]
    omega = x[..., W]
    force = wrench[..., :3] + residual[..., :3]
    torque = wrench[..., 3:] + residual[..., 3:]

    out = np.empty_like(x)
    u = q[..., 1:]
    qw = q[..., :1]
    # world velocity via the Rodrigues form of the quaternion sandwich
    t = 2.0 * so3.cross3(u, v)
    out[..., P] = v + qw * t + so3.cross3(u, t)
    # quaternion kinematics 0.5 * q * [0, omega], written out elementwise
    ox, oy, oz = omega[..., 0], omega[..., 1], omega[..., 2]
    w0, x0, y0, z0 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out[..., 3] = 0.5 * (-x0 * ox - y0 * oy - z0 * oz)
    out[..., 4] = 0.5 * (w0 * ox + y0 * oz - z0 * oy)
    out[..., 5] = 0.5 * (w0 * oy - x0 * oz + z0 * ox)
    out[..., 6] = 0.5 * (w0 * oz + x0 * oy - y0 * ox)
    # body-frame gravity: rotate g by the conjugate quaternion
    nu = -u
    tg = 2.0 * so3.cross3(nu, params.gravity)
    g_body = params.gravity + qw * tg + so3.cross3(nu, tg)
    out[..., V] = force / params.mass + g_body - so3.cross3(omega, v)
    j_omega = omega @ params.inertia.T
    out[..., W] = (torque - so3.cross3(omega, j_omega)) @ params.inertia_inv.T
    return out


def rk4(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order step of ``x' = f(x)``."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(x: np.ndarray, wrench: np.ndarray, residual: np.ndarray, params: InertialParams, dt: float) -> np.ndarray:
    """RK4 step of the rigid dynamics with the quaternion renormalized after.

    The sign of the quaternion is kept (not canonicalized) so integrated
    trajectories stay continuous in the state vector.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = rk4(lambda s: dynamics(s, wrench, residual, params), x, dt)
    out = np.array(out, copy=True)
    out[..., Q] = so3.quat_normalize(out[..., Q], canonical=False)
    return out


def kinetic_energy(x: np.ndarray, params: InertialParams) -> float:
    """Translational plus rotational kinetic energy (body-frame quantities)."""
    v = x[..., V]
    omega = x[..., W]
    return float(0.5 * params.mass * np.dot(v, v) + 0.5 * omega @ params.inertia @ omega)
