"""Small 3D math helpers: vectors, unit quaternions, tangent bases.

Vectors are plain numpy float64 arrays of shape (3,), quaternions are
arrays of shape (4,) in (w, x, y, z) order. Everything here is pure and
allocation-light; the hot loops live in :mod:`tracksim._kernels`.
"""
from __future__ import annotations

import math

import numpy as np

VEC_ZERO = np.zeros(3)
QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def vec(x: float, y: float, z: float) -> np.ndarray:
    return np.array([float(x), float(y), float(z)])


def norm(v: np.ndarray) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def normalized(v: np.ndarray) -> np.ndarray:
    n = norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def is_finite(v: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(v)))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    if n < 1e-12:
        return QUAT_IDENTITY.copy()
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    a = normalized(np.asarray(axis, dtype=float))
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), a[0] * s, a[1] * s, a[2] * s])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic roll-pitch-yaw (x, then y, then z) to quaternion."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    return quat_multiply(quat_multiply(qz, qy), qx)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ v


def quat_integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """First-order quaternion update q += 0.5*(omega ⊗ q)*dt, renormalized."""
    dq = 0.5 * dt * quat_multiply(np.array([0.0, omega[0], omega[1], omega[2]]), q)
    return quat_normalize(q + dq)


def quat_angle_between(q1: np.ndarray, q2: np.ndarray) -> float:
    """Geodesic angle between two orientations in [0, pi].

    Uses 2*acos(|q1 . q2|), which is insensitive to the quaternion double
    cover (q and -q give the same result).
    """
    d = abs(float(np.dot(q1, q2)))
    d = min(1.0, max(-1.0, d))
    return 2.0 * math.acos(d)


def yaw_of(q: np.ndarray) -> float:
    """Yaw (rotation about world z) of the body x axis."""
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    return math.atan2(fwd[1], fwd[0])


def cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product without np.cross's axis-juggling overhead.
    Accepts (k,3) with (k,3) or broadcastable (3,) operands."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of two single vectors (fast path)."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def orthonormal_tangents(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tangent basis (t1, t2) so that {t1, t2, n} is right-handed.

    Prefers t1 close to world x (projected into the tangent plane), which
    makes incline statics tests read naturally; falls back to world y when
    the normal is (anti)parallel to x.
    """
    n = normal
    ref = np.array([1.0, 0.0, 0.0])
    t1 = ref - n * float(np.dot(ref, n))
    if norm(t1) < 1e-6:
        ref = np.array([0.0, 1.0, 0.0])
        t1 = ref - n * float(np.dot(ref, n))
    t1 = t1 / norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def box_inertia(mass: float, full_extents: np.ndarray) -> np.ndarray:
    """Inertia tensor of a solid cuboid about its center, body axes."""
    lx, ly, lz = full_extents
    f = mass / 12.0
    return np.diag([f * (ly * ly + lz * lz), f * (lx * lx + lz * lz), f * (lx * lx + ly * ly)])


def cylinder_inertia(mass: float, radius: float, half_length: float) -> np.ndarray:
    """Solid cylinder, axis along local y."""
    l = 2.0 * half_length
    i_axis = 0.5 * mass * radius * radius
    i_perp = mass * (3.0 * radius * radius + l * l) / 12.0
    return np.diag([i_perp, i_axis, i_perp])
