"""Collision shapes and geometry records attached to bodies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bodies import Pose
from .math3d import quat_to_matrix

COLLIDE_ALL = 0xFFFFFFFF


@dataclass
class Box:
    half_extents: np.ndarray

    def __post_init__(self) -> None:
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0.0):
            raise ValueError("box half extents must be positive")


@dataclass
class Cylinder:
    """Solid cylinder, axis along local y."""

    radius: float
    half_length: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0 or self.half_length <= 0.0:
            raise ValueError("cylinder dimensions must be positive")


@dataclass
class Sphere:
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")


@dataclass
class StaticTriMesh:
    """Static triangle mesh. Only declared for completeness: world assets
    are assembled from box compositions, so no narrow phase is implemented
    for this shape and colliding it raises an unsupported-pair error."""

    vertices: np.ndarray
    triangles: np.ndarray


Shape = Box | Cylinder | Sphere | StaticTriMesh


class FrictionMode:
    PYRAMID = "pyramid"
    CONE = "cone"
    PAPER_LITERAL = "paper-literal"


@dataclass
class SurfaceParams:
    mu_primary: float = 0.8
    mu_secondary: float = 0.8
    restitution: float = 0.0
    friction_mode: str = FrictionMode.PYRAMID

    def __post_init__(self) -> None:
        if self.mu_primary < 0.0 or self.mu_secondary < 0.0:
            raise ValueError("friction coefficients must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")


def combine_surfaces(a: SurfaceParams, b: SurfaceParams) -> SurfaceParams:
    """Pairwise combination: minimum friction, minimum restitution.
    Cone mode wins over pyramid if either side requests it."""
    mode = FrictionMode.CONE if FrictionMode.CONE in (a.friction_mode, b.friction_mode) else a.friction_mode
    return SurfaceParams(
        min(a.mu_primary, b.mu_primary),
        min(a.mu_secondary, b.mu_secondary),
        min(a.restitution, b.restitution),
        mode,
    )


@dataclass
class CollisionGeometry:
    geom_id: int
    body_id: int
    shape: Shape
    local_pose: Pose = field(default_factory=Pose.identity)
    group: int = COLLIDE_ALL
    mask: int = COLLIDE_ALL
    surface: SurfaceParams = field(default_factory=SurfaceParams)

    def world_pose(self, body_pose: Pose) -> Pose:
        from .math3d import quat_multiply, quat_rotate

        pos = body_pose.position + quat_rotate(body_pose.orientation, self.local_pose.position)
        ori = quat_multiply(body_pose.orientation, self.local_pose.orientation)
        return Pose(pos, ori)


def can_collide(a: CollisionGeometry, b: CollisionGeometry) -> bool:
    if a.body_id == b.body_id:
        return False
    return (a.group & b.mask) != 0 and (b.group & a.mask) != 0


def shape_aabb(shape: Shape, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """World axis-aligned bounds of a shape at a world pose."""
    if isinstance(shape, Sphere):
        r = np.full(3, shape.radius)
        return pose.position - r, pose.position + r
    rot = quat_to_matrix(pose.orientation)
    if isinstance(shape, Box):
        ext = np.abs(rot) @ shape.half_extents
        return pose.position - ext, pose.position + ext
    if isinstance(shape, Cylinder):
        # Exact bound: |axis_k| * h + r * sqrt(1 - axis_k^2) per world axis k.
        axis = rot[:, 1]
        ext = np.abs(axis) * shape.half_length + shape.radius * np.sqrt(
            np.maximum(0.0, 1.0 - axis * axis)
        )
        return pose.position - ext, pose.position + ext
    if isinstance(shape, StaticTriMesh):
        pts = (rot @ shape.vertices.T).T + pose.position
        return pts.min(axis=0), pts.max(axis=0)
    raise TypeError(f"unknown shape {type(shape).__name__}")
