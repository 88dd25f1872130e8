"""Rigid-body state and the semi-implicit Euler time stepping primitives.

A body stores pose, twist, mass properties and per-step force/torque
accumulators. Static bodies carry zero inverse mass and inverse inertia
and are never mutated by the integrator. The step pipeline that combines
these primitives with collision and constraints lives in
:mod:`tracksim.world`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .math3d import (
    QUAT_IDENTITY,
    box_inertia,
    quat_integrate,
    quat_rotate,
    quat_to_matrix,
    vec,
)


@dataclass
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def transform_point(self, local: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, local)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), QUAT_IDENTITY.copy())


@dataclass
class Twist:
    linear: np.ndarray
    angular: np.ndarray

    def copy(self) -> "Twist":
        return Twist(self.linear.copy(), self.angular.copy())

    def speed(self) -> float:
        return float(np.linalg.norm(self.linear))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))


@dataclass
class MassProperties:
    mass: float
    inertia_body: np.ndarray  # 3x3 symmetric, body frame, about center of mass
    center_of_mass: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _inv_inertia: np.ndarray | None = field(default=None, repr=False, compare=False)

    def inv_inertia_body(self) -> np.ndarray:
        if self._inv_inertia is None:
            self._inv_inertia = np.linalg.inv(self.inertia_body)
        return self._inv_inertia

    @staticmethod
    def solid_box(mass: float, full_extents: np.ndarray) -> "MassProperties":
        return MassProperties(mass, box_inertia(mass, np.asarray(full_extents, dtype=float)))


# Fraction of |omega| the explicit gyroscopic kick may change per step.
GYRO_CLAMP = 0.5


@dataclass
class RigidBody:
    body_id: int
    pose: Pose
    twist: Twist
    mass_props: MassProperties | None
    is_static: bool = False
    external_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    external_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if not self.is_static:
            if self.mass_props is None or self.mass_props.mass <= 0.0:
                raise ValueError(f"dynamic body {self.body_id} needs positive mass")
            eig = np.linalg.eigvalsh(self.mass_props.inertia_body)
            if np.any(eig <= 0.0):
                raise ValueError(f"dynamic body {self.body_id} needs positive-definite inertia")

    @property
    def inv_mass(self) -> float:
        if self.is_static:
            return 0.0
        return 1.0 / self.mass_props.mass

    def inv_inertia_world(self) -> np.ndarray:
        """R * I_body^-1 * R^T for the current orientation (zeros if static)."""
        if self.is_static:
            return np.zeros((3, 3))
        rot = quat_to_matrix(self.pose.orientation)
        return rot @ self.mass_props.inv_inertia_body() @ rot.T

    def com_world(self) -> np.ndarray:
        if self.is_static:
            return self.pose.position
        return self.pose.transform_point(self.mass_props.center_of_mass)

    def velocity_at_point(self, point_world: np.ndarray) -> np.ndarray:
        r = point_world - self.com_world()
        return self.twist.linear + np.cross(self.twist.angular, r)

    def clear_forces(self) -> None:
        self.external_force[:] = 0.0
        self.external_torque[:] = 0.0

    @staticmethod
    def make_static(body_id: int, pose: Pose) -> "RigidBody":
        return RigidBody(body_id, pose, Twist.zero(), None, is_static=True)


def apply_force_at_point(body: RigidBody, force: np.ndarray, point_world: np.ndarray) -> bool:
    """Accumulate a world-frame force acting at a world point.

    Returns False (without touching the body) when the body is static.
    """
    if body.is_static:
        return False
    body.external_force += force
    body.external_torque += np.cross(point_world - body.com_world(), force)
    return True


def apply_torque(body: RigidBody, torque: np.ndarray) -> bool:
    if body.is_static:
        return False
    body.external_torque += torque
    return True


@dataclass
class WorldState:
    bodies: list[RigidBody]
    gravity: np.ndarray = field(default_factory=lambda: vec(0.0, 0.0, -9.81))
    time: float = 0.0
    step_size: float = 1e-3

    def __post_init__(self) -> None:
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        ids = [b.body_id for b in self.bodies]
        if len(set(ids)) != len(ids):
            raise ValueError("body ids must be unique")
        self._index = {b.body_id: b for b in self.bodies}

    def body(self, body_id: int) -> RigidBody:
        return self._index[body_id]

    def add_body(self, body: RigidBody) -> None:
        if body.body_id in self._index:
            raise ValueError(f"duplicate body id {body.body_id}")
        self.bodies.append(body)
        self._index[body.body_id] = body

    def dynamic_bodies(self) -> list[RigidBody]:
        return [b for b in self.bodies if not b.is_static]


def _gyroscopic_delta(body: RigidBody, dt: float) -> np.ndarray:
    """Explicit gyroscopic term -I^-1 (w x (I w)) dt, clamped and made
    energy-safe.

    The continuous term is workless, so the discrete update is rescaled to
    never increase rotational kinetic energy; the magnitude clamp keeps the
    explicit form stable at millisecond steps for fast tumbles.
    """
    w = body.twist.angular
    wn = math.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2)
    if wn < 1e-12:
        return np.zeros(3)
    rot = quat_to_matrix(body.pose.orientation)
    inertia_w = rot @ body.mass_props.inertia_body @ rot.T
    torque = -np.cross(w, inertia_w @ w)
    dw = (rot @ body.mass_props.inv_inertia_body() @ rot.T) @ torque * dt
    dn = float(np.linalg.norm(dw))
    limit = GYRO_CLAMP * wn
    if dn > limit:
        dw *= limit / dn
    w_new = w + dw
    e_old = float(w @ (inertia_w @ w))
    e_new = float(w_new @ (inertia_w @ w_new))
    if e_new > e_old > 0.0:
        w_new *= math.sqrt(e_old / e_new)
        return w_new - w
    return dw


def integrate_velocities(
    world: WorldState,
    impulses: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    apply_gyro: bool = True,
) -> None:
    """v += M^-1 (F_e dt + constraint impulse) for every dynamic body.

    ``impulses`` maps body_id to (linear_impulse, angular_impulse) in
    world frame, typically the accumulated J^T lambda of the solver.
    """
    dt = world.step_size
    g = world.gravity
    for body in world.bodies:
        if body.is_static:
            continue
        lin_imp = body.external_force * dt + body.mass_props.mass * g * dt
        ang_imp = body.external_torque * dt
        if impulses is not None and body.body_id in impulses:
            jl, ja = impulses[body.body_id]
            lin_imp = lin_imp + jl
            ang_imp = ang_imp + ja
        body.twist.linear = body.twist.linear + body.inv_mass * lin_imp
        body.twist.angular = body.twist.angular + body.inv_inertia_world() @ ang_imp
        if apply_gyro:
            body.twist.angular = body.twist.angular + _gyroscopic_delta(body, dt)
        if not (np.all(np.isfinite(body.twist.linear)) and np.all(np.isfinite(body.twist.angular))):
            raise FloatingPointError(f"non-finite twist on body {body.body_id}")


def integrate_poses(world: WorldState) -> None:
    """Semi-implicit position update using the already-updated velocities."""
    dt = world.step_size
    for body in world.bodies:
        if body.is_static:
            continue
        body.pose.position = body.pose.position + body.twist.linear * dt
        body.pose.orientation = quat_integrate(body.pose.orientation, body.twist.angular, dt)
    world.time += dt
