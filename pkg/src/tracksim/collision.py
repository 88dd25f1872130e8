"""Broad phase, narrow phase dispatch, and contact manifolds.

Each manifold stores its contact set as flat arrays (positions, normals,
depths, tangent frames, friction data) so annotation and row assembly can
stay vectorized; :class:`ContactPoint` is the per-point view used by the
API and the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bodies import Pose
from .math3d import cross_rows, quat_to_matrix
from .shapes import (
    Box,
    CollisionGeometry,
    Cylinder,
    Sphere,
    SurfaceParams,
    can_collide,
    combine_surfaces,
    shape_aabb,
)

BROADPHASE_MARGIN = 1e-3
CYLINDER_RIM_SAMPLES = 16


class UnsupportedShapePairError(TypeError):
    def __init__(self, a, b):
        super().__init__(f"unsupported shape pair: {type(a).__name__} vs {type(b).__name__}")


@dataclass
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray  # unit, from body1 toward body2
    depth: float
    body1_id: int
    body2_id: int
    t1: np.ndarray
    t2: np.ndarray
    mu1: float = 0.0
    mu2: float = 0.0
    surface_velocity_1: float = 0.0
    surface_velocity_2: float = 0.0


@dataclass
class ContactManifold:
    geom1: CollisionGeometry
    geom2: CollisionGeometry
    count: int
    positions: np.ndarray  # (k,3)
    normals: np.ndarray  # (k,3), body1 -> body2
    depths: np.ndarray  # (k,)
    t1: np.ndarray = field(default=None)
    t2: np.ndarray = field(default=None)
    mu: np.ndarray = field(default=None)  # (k,2)
    surface_vel: np.ndarray = field(default=None)  # (k,2)
    surface: SurfaceParams = field(default=None)

    def __post_init__(self) -> None:
        if self.surface is None:
            self.surface = combine_surfaces(self.geom1.surface, self.geom2.surface)
        k = self.count
        if self.t1 is None:
            self.t1, self.t2 = tangent_basis(self.normals)
        if self.mu is None:
            mu = np.empty((k, 2))
            mu[:, 0] = self.surface.mu_primary
            mu[:, 1] = self.surface.mu_secondary
            self.mu = mu
        if self.surface_vel is None:
            self.surface_vel = np.zeros((k, 2))

    @property
    def body1_id(self) -> int:
        return self.geom1.body_id

    @property
    def body2_id(self) -> int:
        return self.geom2.body_id

    def points(self) -> list[ContactPoint]:
        return [
            ContactPoint(
                self.positions[i].copy(),
                self.normals[i].copy(),
                float(self.depths[i]),
                self.body1_id,
                self.body2_id,
                self.t1[i].copy(),
                self.t2[i].copy(),
                float(self.mu[i, 0]),
                float(self.mu[i, 1]),
                float(self.surface_vel[i, 0]),
                float(self.surface_vel[i, 1]),
            )
            for i in range(self.count)
        ]


def tangent_basis(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed orthonormal {t1, t2, n} per normal; t1 prefers the
    projection of world x into the tangent plane (deterministic)."""
    n0, n1, n2 = normals[:, 0], normals[:, 1], normals[:, 2]
    use_y = np.abs(n0) > 0.999
    rx = np.where(use_y, 0.0, 1.0)
    ry = np.where(use_y, 1.0, 0.0)
    d = rx * n0 + ry * n1
    t1 = np.empty_like(normals)
    t1[:, 0] = rx - n0 * d
    t1[:, 1] = ry - n1 * d
    t1[:, 2] = -n2 * d
    t1 /= np.sqrt(t1[:, 0] ** 2 + t1[:, 1] ** 2 + t1[:, 2] ** 2)[:, None]
    return t1, cross_rows(normals, t1)


def _collide_box_box(g1, p1, r1, g2, p2, r2):
    pos = np.empty((8, 3))
    depth = np.empty(8)
    normal = np.empty(3)
    n = _kernels.box_box_contacts(
        p1, r1, g1.shape.half_extents, p2, r2, g2.shape.half_extents, pos, depth, normal
    )
    if n == 0:
        return None
    normals = np.empty((n, 3))
    normals[:] = normal
    return ContactManifold(g1, g2, n, pos[:n].copy(), normals, depth[:n].copy())


def _collide_cylinder_box(gcyl, pcyl, rcyl, gbox, pbox, rbox, flip: bool):
    pos = np.empty((8, 3))
    nrm = np.empty((8, 3))
    depth = np.empty(8)
    n = _kernels.cylinder_box_contacts(
        pcyl,
        rcyl,
        gcyl.shape.radius,
        gcyl.shape.half_length,
        pbox,
        rbox,
        gbox.shape.half_extents,
        CYLINDER_RIM_SAMPLES,
        pos,
        nrm,
        depth,
    )
    if n == 0:
        return None
    normals = nrm[:n].copy()  # kernel orients box -> cylinder
    if flip:
        # pair order is (cylinder, box): flip to body1 -> body2
        normals = -normals
        return ContactManifold(gcyl, gbox, n, pos[:n].copy(), normals, depth[:n].copy())
    return ContactManifold(gbox, gcyl, n, pos[:n].copy(), normals, depth[:n].copy())


def _collide_sphere_box(gs, ps, gb, pb, rot, flip: bool):
    r = gs.shape.radius
    local = rot.T @ (ps - pb)
    h = gb.shape.half_extents
    clamped = np.clip(local, -h, h)
    delta = local - clamped
    dist = float(np.linalg.norm(delta))
    if dist > 1e-12:
        # center outside the box
        if dist > r + _kernels.KEEP_MARGIN:
            return None
        n_local = delta / dist
        depth = max(0.0, r - dist)
        surf = clamped
    else:
        # center inside: push out along the closest face
        gaps = h - np.abs(local)
        axis = int(np.argmin(gaps))
        n_local = np.zeros(3)
        n_local[axis] = 1.0 if local[axis] >= 0.0 else -1.0
        depth = float(gaps[axis]) + r
        surf = local.copy()
        surf[axis] = n_local[axis] * h[axis]
    n_world = rot @ n_local  # box -> sphere
    pos_world = pb + rot @ surf
    positions = pos_world[None, :]
    depths = np.array([depth])
    if flip:
        return ContactManifold(gs, gb, 1, positions, -n_world[None, :], depths)
    return ContactManifold(gb, gs, 1, positions, n_world[None, :], depths)


def _collide_sphere_sphere(g1, p1, g2, p2):
    d = p2 - p1
    dist = float(np.linalg.norm(d))
    r = g1.shape.radius + g2.shape.radius
    if dist > r + _kernels.KEEP_MARGIN or dist < 1e-12:
        return None
    n = d / dist
    depth = max(0.0, r - dist)
    pos = p1 + n * (g1.shape.radius - 0.5 * depth)
    return ContactManifold(g1, g2, 1, pos[None, :], n[None, :], np.array([depth]))


def collide_rt(
    geom1: CollisionGeometry,
    pos1: np.ndarray,
    rot1: np.ndarray,
    geom2: CollisionGeometry,
    pos2: np.ndarray,
    rot2: np.ndarray,
) -> ContactManifold | None:
    """Narrow phase with explicit world positions and rotation matrices
    (the fast path used by the stepper)."""
    s1, s2 = geom1.shape, geom2.shape
    if isinstance(s1, Box) and isinstance(s2, Box):
        return _collide_box_box(geom1, pos1, rot1, geom2, pos2, rot2)
    if isinstance(s1, Box) and isinstance(s2, Cylinder):
        return _collide_cylinder_box(geom2, pos2, rot2, geom1, pos1, rot1, flip=False)
    if isinstance(s1, Cylinder) and isinstance(s2, Box):
        return _collide_cylinder_box(geom1, pos1, rot1, geom2, pos2, rot2, flip=True)
    if isinstance(s1, Box) and isinstance(s2, Sphere):
        return _collide_sphere_box(geom2, pos2, geom1, pos1, rot1, flip=False)
    if isinstance(s1, Sphere) and isinstance(s2, Box):
        return _collide_sphere_box(geom1, pos1, geom2, pos2, rot2, flip=True)
    if isinstance(s1, Sphere) and isinstance(s2, Sphere):
        return _collide_sphere_sphere(geom1, pos1, geom2, pos2)
    raise UnsupportedShapePairError(s1, s2)


def collide(
    geom1: CollisionGeometry, pose1: Pose, geom2: CollisionGeometry, pose2: Pose
) -> ContactManifold | None:
    """Narrow phase for one geometry pair; returns None when separated.

    Manifold normals always point from geom1's body toward geom2's body.
    Raises :class:`UnsupportedShapePairError` for shape combinations with
    no narrow phase (e.g. anything involving StaticTriMesh).
    """
    return collide_rt(
        geom1,
        pose1.position,
        quat_to_matrix(pose1.orientation),
        geom2,
        pose2.position,
        quat_to_matrix(pose2.orientation),
    )


def broad_phase(
    geoms: list[CollisionGeometry],
    poses: list[Pose],
    margin: float = BROADPHASE_MARGIN,
) -> list[tuple[int, int]]:
    """All geometry index pairs whose inflated AABBs overlap and whose
    group/mask admit collision, in deterministic (i, j) order."""
    n = len(geoms)
    if n < 2:
        return []
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for i, (g, p) in enumerate(zip(geoms, poses)):
        a, b = shape_aabb(g.shape, p)
        lo[i] = a - margin
        hi[i] = b + margin
    overlap = np.all(
        (lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=2
    )
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if overlap[i, j] and can_collide(geoms[i], geoms[j]):
                pairs.append((i, j))
    return pairs
