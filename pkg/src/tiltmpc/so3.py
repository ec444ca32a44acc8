"""Unit-quaternion and rotation-matrix algebra.

Conventions used throughout the package:

* Quaternions are stored scalar-first, ``q = [w, x, y, z]``, Hamilton product.
* A body attitude quaternion acts body-to-world: ``v_W = q * v_B * q^-1``,
  equivalently ``v_W = R @ v_B`` with ``R = quat_to_rotmat(q)``.
* Euler angles are the aerospace ZYX sequence, returned as (roll, pitch, yaw).
* Normalization canonicalizes the double cover to ``w >= 0`` unless asked not
  to (integrators keep the sign to preserve continuity of the state vector).

All quaternion/vector functions accept leading batch dimensions, i.e. inputs
of shape ``(..., 4)`` and ``(..., 3)``.
"""

from __future__ import annotations

import numpy as np

from .errors import AttitudeAntipodal, GimbalDegenerate

_ANTIPODAL_TOL = 1e-9
# |pitch| within 1e-6 rad of pi/2 <=> |sin(pitch)| >= cos(1e-6)
_GIMBAL_SIN_LIMIT = np.cos(1e-6)

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product for (..., 3) arrays; much cheaper than np.cross on small inputs."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def hamilton(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw Hamilton product a * b, no normalization (inputs need not be unit)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_normalize(q: np.ndarray, canonical: bool = True) -> np.ndarray:
    """Scale to unit norm; with ``canonical`` flip sign so that w >= 0."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    out = q / n
    if canonical:
        flip = np.where(out[..., :1] < 0.0, -1.0, 1.0)
        out = out * flip
    return out


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def quat_inverse(q: np.ndarray) -> np.ndarray:
    """Inverse of a unit quaternion (its conjugate)."""
    return quat_conjugate(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of unit quaternions, renormalized and canonicalized."""
    return quat_normalize(hamilton(a, b))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) by the quaternion sandwich q * [0, v] * q^-1."""
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * cross3(u, v)
    return v + w * t + cross3(u, t)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix R with R @ v_body = quat_rotate(q, v_body)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    row0 = np.stack([1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)], axis=-1)
    row1 = np.stack([2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)], axis=-1)
    row2 = np.stack([2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def rotmat_to_quat(rotmat: np.ndarray) -> np.ndarray:
    """Quaternion of a rotation matrix (Shepperd's method), canonical sign."""
    m = np.asarray(rotmat, dtype=float)
    t = np.trace(m)
    d = np.array([1.0 + t, 1.0 + 2.0 * m[0, 0] - t, 1.0 + 2.0 * m[1, 1] - t, 1.0 + 2.0 * m[2, 2] - t])
    k = int(np.argmax(d))
    s = 0.5 * np.sqrt(d[k])
    c = 0.25 / s
    if k == 0:
        q = np.array([s, (m[2, 1] - m[1, 2]) * c, (m[0, 2] - m[2, 0]) * c, (m[1, 0] - m[0, 1]) * c])
    elif k == 1:
        q = np.array([(m[2, 1] - m[1, 2]) * c, s, (m[0, 1] + m[1, 0]) * c, (m[0, 2] + m[2, 0]) * c])
    elif k == 2:
        q = np.array([(m[0, 2] - m[2, 0]) * c, (m[0, 1] + m[1, 0]) * c, s, (m[1, 2] + m[2, 1]) * c])
    else:
        q = np.array([(m[1, 0] - m[0, 1]) * c, (m[0, 2] + m[2, 0]) * c, (m[1, 2] + m[2, 1]) * c, s])
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_euler(roll, pitch, yaw) -> np.ndarray:
    """Quaternion of the ZYX sequence R_z(yaw) R_y(pitch) R_x(roll); batched over inputs."""
    roll, pitch, yaw = np.broadcast_arrays(np.asarray(roll, float), np.asarray(pitch, float), np.asarray(yaw, float))
    cr, sr = np.cos(roll / 2.0), np.sin(roll / 2.0)
    cp, sp = np.cos(pitch / 2.0), np.sin(pitch / 2.0)
    cy, sy = np.cos(yaw / 2.0), np.sin(yaw / 2.0)
    q = np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )
    return quat_normalize(q)


def quat_to_euler(q: np.ndarray) -> np.ndarray:
    """ZYX euler angles (roll, pitch, yaw) of a unit quaternion.

    Raises GimbalDegenerate when |pitch| is within 1e-6 rad of pi/2.
    """
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    sinp = 2.0 * (w * y - z * x)
    if np.any(np.abs(sinp) >= _GIMBAL_SIN_LIMIT):
        raise GimbalDegenerate("pitch within 1e-6 of +/- pi/2; ZYX decomposition undefined")
    roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = np.arcsin(np.clip(sinp, -1.0, 1.0))
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def yaw_of(q: np.ndarray) -> float:
    """Yaw angle of the ZYX decomposition; defines the local (yaw-only) frame."""
    return float(quat_to_euler(q)[..., 2])


def rotz(psi: float) -> np.ndarray:
    """Rotation matrix about the world z axis."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def attitude_error(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """Vector part of the error quaternion, scaled to unit scalar part.

    Defined by ``q_ref = q * dq`` with ``dq`` proportional to ``[1, e]``; the
    returned ``e`` is zero iff the attitudes agree (up to sign). Raises
    AttitudeAntipodal for 180-degree errors, where this parameterization
    blows up.
    """
    d = hamilton(quat_conjugate(q), q_ref)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    scalar = d[..., :1]
    sign = np.where(scalar < 0.0, -1.0, 1.0)
    scalar = scalar * sign
    if np.any(scalar < _ANTIPODAL_TOL):
        raise AttitudeAntipodal("attitude error within 1e-9 of 180 degrees")
    return sign * d[..., 1:] / scalar


def quat_from_error_vector(e: np.ndarray) -> np.ndarray:
    """Unit quaternion proportional to [1, e] (inverse of attitude_error)."""
    e = np.asarray(e, dtype=float)
    one = np.ones(e.shape[:-1] + (1,))
    return quat_normalize(np.concatenate([one, e], axis=-1))


def error_euler(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """ZYX euler angles of the actual attitude relative to the reference.

    Metric-only parameterization: euler angles of ``q_ref^-1 * q``, so the
    result is exactly zero whenever the attitudes agree, also at large
    reference roll/pitch.
    """
    rel = quat_multiply(quat_conjugate(q_ref), q)
    return quat_to_euler(rel)
