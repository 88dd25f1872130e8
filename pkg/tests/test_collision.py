"""Narrow-phase and broad-phase behavior."""
import math

import numpy as np
import pytest

from tracksim.bodies import Pose
from tracksim.collision import (
    UnsupportedShapePairError,
    broad_phase,
    collide,
    tangent_basis,
)
from tracksim.math3d import quat_from_axis_angle, quat_rotate, vec
from tracksim.shapes import (
    Box,
    CollisionGeometry,
    Cylinder,
    Sphere,
    StaticTriMesh,
    SurfaceParams,
)

FLOOR = CollisionGeometry(0, 0, Box(vec(10, 10, 1)))
FLOOR_POSE = Pose(vec(0, 0, -1), np.array([1.0, 0, 0, 0]))


def unit_box(geom_id=1, body_id=1):
    return CollisionGeometry(geom_id, body_id, Box(vec(0.5, 0.5, 0.5)))


def test_box_resting_zero_gap_four_corners():
    m = collide(FLOOR, FLOOR_POSE, unit_box(), Pose(vec(0, 0, 0.5), np.array([1.0, 0, 0, 0])))
    assert m.count == 4
    assert np.allclose(m.normals, [0, 0, 1])
    assert np.allclose(m.depths, 0.0, atol=1e-12)
    xy = sorted((round(p[0], 6), round(p[1], 6)) for p in m.positions)
    assert xy == [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]


def test_box_penetrating_depth():
    m = collide(FLOOR, FLOOR_POSE, unit_box(), Pose(vec(0, 0, 0.49), np.array([1.0, 0, 0, 0])))
    assert m.count == 4
    assert np.allclose(m.depths, 0.01, atol=1e-12)


def test_box_far_above_no_contact():
    m = collide(FLOOR, FLOOR_POSE, unit_box(), Pose(vec(0, 0, 2.0), np.array([1.0, 0, 0, 0])))
    assert m is None


def test_sphere_on_floor():
    g = CollisionGeometry(1, 1, Sphere(0.5))
    m = collide(FLOOR, FLOOR_POSE, g, Pose(vec(0.2, -0.1, 0.4), np.array([1.0, 0, 0, 0])))
    assert m.count == 1
    assert m.depths[0] == pytest.approx(0.1, abs=1e-12)
    assert np.allclose(m.normals[0], [0, 0, 1])
    # contact beneath the sphere center, on the floor surface
    assert np.allclose(m.positions[0], [0.2, -0.1, 0.0], atol=1e-12)


def test_collide_symmetry_negated_normals():
    box_pose = Pose(vec(0.1, 0.2, 0.48), np.array([1.0, 0, 0, 0]))
    m_ab = collide(FLOOR, FLOOR_POSE, unit_box(), box_pose)
    m_ba = collide(unit_box(), box_pose, FLOOR, FLOOR_POSE)
    assert m_ab.count == m_ba.count
    pa = sorted(map(tuple, np.round(m_ab.positions, 9)))
    pb = sorted(map(tuple, np.round(m_ba.positions, 9)))
    assert pa == pb
    assert np.allclose(m_ab.normals, -m_ba.normals)


def test_box_edge_contact_single_point():
    # top box rotated 45 deg about z and about x so an edge leads
    q = quat_from_axis_angle(vec(1, 0, 0), math.pi / 4)
    m = collide(FLOOR, FLOOR_POSE, unit_box(), Pose(vec(0, 0, 0.70), q))
    assert m is not None
    # lowest edge of the rotated box reaches sqrt(0.5)/... below center
    assert m.count >= 1
    assert m.normals[0, 2] > 0.9


def test_cylinder_resting_line_contact():
    g = CollisionGeometry(1, 1, Cylinder(0.09, 0.05))
    m = collide(FLOOR, FLOOR_POSE, g, Pose(vec(0, 0, 0.09), np.array([1.0, 0, 0, 0])))
    assert m.count >= 2
    assert np.allclose(m.depths, m.depths[0], atol=1e-12)
    assert np.allclose(m.normals[:, 2], 1.0)


def test_cylinder_above_box_empty():
    g = CollisionGeometry(1, 1, Cylinder(0.09, 0.05))
    m = collide(FLOOR, FLOOR_POSE, g, Pose(vec(0, 0, 1.0), np.array([1.0, 0, 0, 0])))
    assert m is None


def test_tilted_cylinder_lowest_rim_point():
    # tilt about x: lowest rim point lies in the yz plane, which is a
    # sampled rim angle, so the analytic point is hit exactly
    r, h = 0.1, 0.2
    tilt = 0.35
    q = quat_from_axis_angle(vec(1, 0, 0), tilt)
    axis = quat_rotate(q, vec(0, 1, 0))
    e2 = quat_rotate(q, vec(0, 0, 1))
    # lowest point: cap with axis_z < 0 side, radial -e2 (steepest descent)
    center = vec(0, 0, 0.3)
    low = center - h * axis * np.sign(axis[2]) - r * e2
    drop = low[2] + 0.005  # embed 5 mm into the floor
    pose = Pose(center - vec(0, 0, drop), q)
    expected = low - vec(0, 0, drop)
    g = CollisionGeometry(1, 1, Cylinder(r, h))
    m = collide(FLOOR, FLOOR_POSE, g, pose)
    assert m is not None
    deepest = int(np.argmax(m.depths))
    assert m.depths[deepest] == pytest.approx(0.005, abs=1e-9)
    assert np.allclose(m.positions[deepest], expected, atol=1e-9)


def test_unsupported_pair_raises():
    mesh = CollisionGeometry(1, 1, StaticTriMesh(np.zeros((3, 3)), np.zeros((1, 3), dtype=int)))
    with pytest.raises(UnsupportedShapePairError, match="StaticTriMesh"):
        collide(FLOOR, FLOOR_POSE, mesh, Pose.identity())
    cyl = CollisionGeometry(2, 2, Cylinder(0.1, 0.1))
    sph = CollisionGeometry(3, 3, Sphere(0.1))
    with pytest.raises(UnsupportedShapePairError):
        collide(cyl, Pose.identity(), sph, Pose.identity())


def test_tangent_basis_right_handed():
    rng = np.random.default_rng(5)
    n = rng.normal(size=(200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    t1, t2 = tangent_basis(n)
    assert np.all(np.abs(np.sum(t1 * n, axis=1)) < 1e-9)
    assert np.all(np.abs(np.sum(t2 * n, axis=1)) < 1e-9)
    assert np.all(np.abs(np.sum(t1 * t2, axis=1)) < 1e-9)
    # right-handed: t1 x t2 = n
    assert np.allclose(np.cross(t1, t2), n, atol=1e-9)


def test_manifold_friction_frames_orthonormal():
    m = collide(FLOOR, FLOOR_POSE, unit_box(), Pose(vec(0, 0, 0.49), np.array([1.0, 0, 0, 0])))
    for p in m.points():
        assert abs(np.dot(p.t1, p.normal)) < 1e-9
        assert abs(np.dot(p.t2, p.normal)) < 1e-9
        assert np.allclose(np.cross(p.t1, p.t2), p.normal, atol=1e-9)


def test_surface_combination_minimum():
    a = CollisionGeometry(1, 1, Box(vec(1, 1, 1)), surface=SurfaceParams(1.5, 0.4))
    b = CollisionGeometry(2, 2, Box(vec(1, 1, 1)), surface=SurfaceParams(0.7, 0.9))
    m = collide(a, Pose.identity(), b, Pose(vec(0, 0, 1.9), np.array([1.0, 0, 0, 0])))
    assert m.surface.mu_primary == pytest.approx(0.7)
    assert m.surface.mu_secondary == pytest.approx(0.4)


def test_broad_phase_cases():
    floor = CollisionGeometry(0, 0, Box(vec(10, 10, 1)), group=1, mask=0xFFFF)
    poses = {0: FLOOR_POSE}

    def bp(geoms_poses):
        geoms = [g for g, _ in geoms_poses]
        return broad_phase(geoms, [p for _, p in geoms_poses])

    # two distant boxes
    assert bp([(unit_box(1, 1), Pose(vec(0, 0, 5), np.array([1.0, 0, 0, 0]))),
               (unit_box(2, 2), Pose(vec(3, 0, 5), np.array([1.0, 0, 0, 0])))]) == []
    # box on floor -> one pair
    assert bp([(floor, FLOOR_POSE),
               (unit_box(1, 1), Pose(vec(0, 0, 0.5), np.array([1.0, 0, 0, 0])))]) == [(0, 1)]
    # vehicle: chassis + 2 track boxes on one body, self-collision masked,
    # chassis raised above the floor -> exactly the 2 track-floor pairs
    vehicle_group, env_group = 2, 1
    chassis = CollisionGeometry(1, 1, Box(vec(0.3, 0.2, 0.1)),
                                local_pose=Pose(vec(0, 0, 0.25), np.array([1.0, 0, 0, 0])),
                                group=vehicle_group, mask=env_group)
    track_l = CollisionGeometry(2, 1, Box(vec(0.4, 0.05, 0.09)),
                                local_pose=Pose(vec(0, 0.3, 0.09), np.array([1.0, 0, 0, 0])),
                                group=vehicle_group, mask=env_group)
    track_r = CollisionGeometry(3, 1, Box(vec(0.4, 0.05, 0.09)),
                                local_pose=Pose(vec(0, -0.3, 0.09), np.array([1.0, 0, 0, 0])),
                                group=vehicle_group, mask=env_group)
    base = Pose(vec(0, 0, 0.0), np.array([1.0, 0, 0, 0]))
    geoms = [floor, chassis, track_l, track_r]
    poses = [FLOOR_POSE] + [g.world_pose(base) for g in (chassis, track_l, track_r)]
    pairs = broad_phase(geoms, poses)
    assert pairs == [(0, 2), (0, 3)]
