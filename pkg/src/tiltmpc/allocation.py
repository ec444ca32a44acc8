"""Static actuator allocation for a tiltable multi-arm platform.

The platform has ``n_arms`` tiltable arms, each carrying ``rotors_per_arm``
rotors that share the arm's tilt angle. The extended thrust vector stacks the
(lateral, vertical) thrust components of every rotor, interleaved
``[f_1l, f_1v, f_2l, f_2v, ...]``, and maps linearly to the body wrench
through a constant allocation matrix. The inverse map is the Moore-Penrose
minimum-norm solution with an optional nullspace seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from .dynamics import InertialParams
from .errors import DegenerateGeometry, RankDeficient

_RANK_TOL = 1e-10


@dataclass
class PlatformGeometry:
    """Arm layout, spin handedness and the rotor drag-to-thrust coefficient.

    The default is a regular hexagon of radius 0.3 m with two rotors per arm.
    By default each arm carries one spin handedness and handedness alternates
    across arms, which keeps the two columns of an arm identical and makes the
    minimum-norm allocation exactly invertible through the shared-tilt
    reconstruction. Within-arm counter-rotating pairs remain expressible via
    ``spin_directions``.
    """

    n_arms: int = 6
    rotors_per_arm: int = 2
    arm_positions: np.ndarray = None
    arm_azimuths: np.ndarray = None
    spin_directions: np.ndarray = None
    drag_coeff: float = 0.016  # m, torque per unit thrust; non-paper default
    arm_radius: float = 0.3

    def __post_init__(self) -> None:
        if self.arm_azimuths is None:
            self.arm_azimuths = 2.0 * np.pi * np.arange(self.n_arms) / self.n_arms
        self.arm_azimuths = np.asarray(self.arm_azimuths, dtype=float)
        if self.arm_positions is None:
            self.arm_positions = self.arm_radius * np.stack(
                [np.cos(self.arm_azimuths), np.sin(self.arm_azimuths), np.zeros(self.n_arms)], axis=-1
            )
        self.arm_positions = np.asarray(self.arm_positions, dtype=float)
        if self.spin_directions is None:
            arm_signs = np.where(np.arange(self.n_arms) % 2 == 0, 1.0, -1.0)
            self.spin_directions = np.repeat(arm_signs, self.rotors_per_arm)
        self.spin_directions = np.asarray(self.spin_directions, dtype=float)

        if self.arm_positions.shape != (self.n_arms, 3):
            raise ValueError("arm_positions must have shape (n_arms, 3)")
        if self.arm_azimuths.shape != (self.n_arms,):
            raise ValueError("arm_azimuths must have shape (n_arms,)")
        if self.spin_directions.shape != (self.n_rotors,):
            raise ValueError("spin_directions must have shape (n_rotors,)")
        if np.any(np.linalg.norm(self.arm_positions, axis=-1) == 0.0) and self.n_arms > 1:
            raise ValueError("arm positions must be nonzero")

    @property
    def n_rotors(self) -> int:
        return self.n_arms * self.rotors_per_arm

    @property
    def rotor_arm_index(self) -> np.ndarray:
        """Arm index of each rotor (rotors are ordered arm-major)."""
        return np.repeat(np.arange(self.n_arms), self.rotors_per_arm)


def build_allocation_matrix(geometry: PlatformGeometry, require_full_rank: bool = True) -> np.ndarray:
    """Allocation matrix A (6 x 2*n_rotors) mapping extended thrusts to a wrench.

    Column pair i holds the wrench per unit lateral and per unit vertical
    thrust of rotor i: the force direction, the moment of that force about
    the COM, and the rotor drag torque along the thrust direction. With
    ``require_full_rank`` (the default for flight-capable platforms) a matrix
    of rank below 6 raises DegenerateGeometry; partial rigs such as a single
    test rotor can opt out.
    """
    n_r = geometry.n_rotors
    a = np.zeros((6, 2 * n_r))
    e_vert = np.array([0.0, 0.0, 1.0])
    for i in range(n_r):
        arm = geometry.rotor_arm_index[i]
        az = geometry.arm_azimuths[arm]
        pos = geometry.arm_positions[arm]
        sigma = geometry.spin_directions[i]
        e_lat = np.array([-np.sin(az), np.cos(az), 0.0])
        drag = geometry.drag_coeff * sigma
        a[:3, 2 * i] = e_lat
        a[3:, 2 * i] = np.cross(pos, e_lat) + drag * e_lat
        a[:3, 2 * i + 1] = e_vert
        a[3:, 2 * i + 1] = np.cross(pos, e_vert) + drag * e_vert
    if require_full_rank and np.linalg.matrix_rank(a, tol=1e-9) < 6:
        raise DegenerateGeometry("allocation matrix rank is below 6")
    return a


def extended_thrust(geometry: PlatformGeometry, alpha: np.ndarray, thrust: np.ndarray) -> np.ndarray:
    """Interleaved (lateral, vertical) thrust components per rotor; batched."""
    alpha = np.asarray(alpha, dtype=float)
    thrust = np.asarray(thrust, dtype=float)
    alpha_rot = alpha[..., geometry.rotor_arm_index]
    out = np.empty(thrust.shape[:-1] + (2 * geometry.n_rotors,))
    out[..., 0::2] = np.sin(alpha_rot) * thrust
    out[..., 1::2] = np.cos(alpha_rot) * thrust
    return out


def forward_wrench(geometry: PlatformGeometry, matrix: np.ndarray, alpha: np.ndarray, thrust: np.ndarray) -> np.ndarray:
    """Exact nonlinear map from tilt angles and thrusts to the body wrench."""
    return extended_thrust(geometry, alpha, thrust) @ matrix.T


class Allocation:
    """Precomputed allocation map for a fixed geometry.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, geometry: PlatformGeometry | None = None):
        self.geometry = geometry if geometry is not None else PlatformGeometry()
        self.matrix = build_allocation_matrix(self.geometry)
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        if sv[5] < _RANK_TOL * sv[0]:
            raise RankDeficient("allocation matrix pseudoinverse not formable to tolerance 1e-10")
        self.pinv = np.linalg.pinv(self.matrix, rcond=_RANK_TOL)
        self.nullspace_projector = np.eye(2 * self.geometry.n_rotors) - self.pinv @ self.matrix

    @property
    def nullspace_dim(self) -> int:
        return int(round(np.trace(self.nullspace_projector)))

    def forward_wrench(self, alpha: np.ndarray, thrust: np.ndarray) -> np.ndarray:
        """Exact nonlinear map from tilt angles and thrusts to the body wrench."""
        return forward_wrench(self.geometry, self.matrix, alpha, thrust)

    def extended_thrust(self, alpha: np.ndarray, thrust: np.ndarray) -> np.ndarray:
        return extended_thrust(self.geometry, alpha, thrust)

    def allocate(self, wrench: np.ndarray, nullspace_seed: np.ndarray | None = None):
        """Minimum-norm actuator commands realizing a wrench.

        Returns ``(alpha, thrust, t_tilde)``. With ``nullspace_seed`` (length
        2*n_rotors) the extended thrust is shifted inside the nullspace of the
        allocation matrix; the zero seed gives the minimum-norm ("optimal")
        allocation. Tilt angles of arms with zero aggregate thrust resolve to
        0 deterministically.
        """
        wrench = np.asarray(wrench, dtype=float)
        t_tilde = self.pinv @ wrench
        if nullspace_seed is not None:
            t_tilde = t_tilde + self.nullspace_projector @ np.asarray(nullspace_seed, dtype=float)
        lat = t_tilde[0::2]
        vert = t_tilde[1::2]
        n_a = self.geometry.n_arms
        lat_arm = lat.reshape(n_a, self.geometry.rotors_per_arm).sum(axis=1)
        vert_arm = vert.reshape(n_a, self.geometry.rotors_per_arm).sum(axis=1)
        alpha = np.arctan2(lat_arm, vert_arm)
        thrust = np.hypot(lat, vert)
        return alpha, thrust, t_tilde

    def hover_command(self, q: np.ndarray, params: InertialParams):
        """Minimum-norm commands holding the platform weight at attitude q."""
        rotmat = so3.quat_to_rotmat(q)
        force = -params.mass * rotmat.T @ params.gravity
        alpha, thrust, _ = self.allocate(np.concatenate([force, np.zeros(3)]))
        return alpha, thrust
