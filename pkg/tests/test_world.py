"""End-to-end stepping: settling, statics, energy, determinism."""
import math

import numpy as np
import pytest

from tracksim.bodies import MassProperties, Pose, RigidBody, Twist, WorldState
from tracksim.constraints import SolverSettings
from tracksim.math3d import quat_from_axis_angle, quat_rotate, vec
from tracksim.shapes import Box, CollisionGeometry, SurfaceParams
from tracksim.world import Simulation


def floor_geom(mu=1.5, geom_id=0):
    return CollisionGeometry(geom_id, 0, Box(vec(20, 20, 1)), surface=SurfaceParams(mu, mu))


def make_box_body(body_id, pos, mass=1.0, half=0.5, mu=0.8):
    body = RigidBody(
        body_id,
        Pose(np.asarray(pos, dtype=float), np.array([1.0, 0, 0, 0])),
        Twist.zero(),
        MassProperties.solid_box(mass, vec(2 * half, 2 * half, 2 * half)),
    )
    geom = CollisionGeometry(
        100 + body_id, body_id, Box(vec(half, half, half)), surface=SurfaceParams(mu, mu)
    )
    return body, geom


def flat_world(extra_bodies, extra_geoms, settings=None):
    floor = RigidBody.make_static(0, Pose(vec(0, 0, -1), np.array([1.0, 0, 0, 0])))
    world = WorldState([floor] + extra_bodies, step_size=1e-3)
    sim = Simulation(world, [floor_geom()] + extra_geoms, settings=settings)
    return world, sim


def total_energy(world):
    e = 0.0
    for b in world.bodies:
        if b.is_static:
            continue
        m = b.mass_props.mass
        e += 0.5 * m * float(b.twist.linear @ b.twist.linear)
        from tracksim.math3d import quat_to_matrix

        rot = quat_to_matrix(b.pose.orientation)
        iw = rot @ b.mass_props.inertia_body @ rot.T
        e += 0.5 * float(b.twist.angular @ (iw @ b.twist.angular))
        e += -m * float(world.gravity @ b.pose.position)
    return e


def test_empty_world_time_advances():
    world = WorldState([], step_size=1e-3)
    sim = Simulation(world, [])
    sim.run(0.01)
    assert world.time == pytest.approx(0.01)


def test_dropped_box_settles_and_stays():
    body, geom = make_box_body(1, [0, 0, 1.0])
    world, sim = flat_world([body], [geom])
    sim.run(2.0)
    assert body.twist.speed() < 1e-3
    assert np.linalg.norm(body.twist.angular) < 1e-2
    z_settled = body.pose.position[2]
    heights = []
    for _ in range(1000):
        sim.step()
        heights.append(body.pose.position[2])
    assert max(abs(h - z_settled) for h in heights) < 1e-4
    # resting box is supported by a full manifold
    assert sum(m.count for m in sim.last_manifolds) >= 3


def test_resting_contact_impulses_support_weight():
    body, geom = make_box_body(1, [0, 0, 0.5], mass=2.0)
    world, sim = flat_world([body], [geom])
    sim.run(1.0)
    lam = sim.last_solution.lam
    rows = sim.last_problem.rows()
    normal_sum = sum(lam[i] for i, r in enumerate(rows) if r.label == "contact-normal")
    assert normal_sum == pytest.approx(2.0 * 9.81 * 1e-3, rel=1e-2)


def test_two_box_stack_force_balance():
    b1, g1 = make_box_body(1, [0, 0, 0.5], mass=1.0)
    b2, g2 = make_box_body(2, [0.02, 0.01, 1.5], mass=3.0)
    world, sim = flat_world([b1, b2], [g1, g2])
    sim.run(1.5)
    assert b1.twist.speed() < 1e-3 and b2.twist.speed() < 1e-3
    lam = sim.last_solution.lam
    rows = sim.last_problem.rows()
    dt = 1e-3
    floor_sum = 0.0
    mid_sum = 0.0
    for i, r in enumerate(rows):
        if r.label != "contact-normal":
            continue
        pair = {r.body1_id, r.body2_id}
        if pair == {0, 1}:
            floor_sum += lam[i]
        elif pair == {1, 2}:
            mid_sum += lam[i]
    assert floor_sum == pytest.approx(4.0 * 9.81 * dt, rel=0.01)
    assert mid_sum == pytest.approx(3.0 * 9.81 * dt, rel=0.01)


def incline_world(mu_box, angle=math.radians(15.0)):
    q = quat_from_axis_angle(vec(0, 1, 0), angle)
    ramp_body = RigidBody.make_static(0, Pose(vec(0, 0, 0), q))
    ramp_geom = CollisionGeometry(0, 0, Box(vec(10, 3, 0.5)), surface=SurfaceParams(2.0, 2.0))
    normal = quat_rotate(q, vec(0, 0, 1))
    body = RigidBody(
        1,
        Pose(normal * (0.5 + 0.25), q),
        Twist.zero(),
        MassProperties.solid_box(1.0, vec(0.5, 0.5, 0.5)),
    )
    geom = CollisionGeometry(
        1, 1, Box(vec(0.25, 0.25, 0.25)), surface=SurfaceParams(mu_box, mu_box)
    )
    world = WorldState([ramp_body, body], step_size=1e-3)
    sim = Simulation(world, [ramp_geom, geom])
    return world, sim, body


def test_incline_high_friction_holds():
    world, sim, body = incline_world(mu_box=0.5)
    sim.run(0.5)
    assert body.twist.speed() < 1e-6


def test_incline_low_friction_slides_at_oracle_rate():
    angle = math.radians(15.0)
    mu = 0.1
    world, sim, body = incline_world(mu_box=mu, angle=angle)
    sim.run(0.5)
    speed = body.twist.speed()
    assert speed > 1e-3
    # rigid-body statics oracle: a = g (sin t - mu cos t)
    expected = 9.81 * (math.sin(angle) - mu * math.cos(angle)) * 0.5
    assert speed == pytest.approx(expected, rel=0.05)


def test_energy_non_increasing_without_stabilization():
    body, geom = make_box_body(1, [0, 0, 0.52])
    body.twist.angular = vec(0.4, 0.3, 0.2)
    settings = SolverSettings(erp=0.0, iterations=100, tolerance=1e-12)
    world, sim = flat_world([body], [geom], settings=settings)
    e_prev = total_energy(world)
    for _ in range(2000):
        sim.step()
        e = total_energy(world)
        assert e <= e_prev + 1e-9
        e_prev = e


def test_step_determinism_bitwise():
    def run():
        body, geom = make_box_body(1, [0.01, -0.02, 0.8])
        body.twist.angular = vec(0.5, -0.3, 0.2)
        world, sim = flat_world([body], [geom])
        sim.run(1.0)
        return (
            body.pose.position.copy(),
            body.pose.orientation.copy(),
            body.twist.linear.copy(),
            body.twist.angular.copy(),
        )

    a = run()
    b = run()
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_warm_start_does_not_change_rest_state():
    def final_z(warm):
        body, geom = make_box_body(1, [0, 0, 0.6])
        settings = SolverSettings(warm_start=warm)
        world, sim = flat_world([body], [geom], settings=settings)
        sim.run(1.5)
        return body.pose.position[2]

    assert final_z(True) == pytest.approx(final_z(False), abs=1e-5)


def test_dump_problem_writes_rows(tmp_path):
    body, geom = make_box_body(1, [0, 0, 0.5])
    world, sim = flat_world([body], [geom])
    sim.run(0.05)
    out = tmp_path / "lcp.txt"
    sim.dump_problem(out)
    text = out.read_text().splitlines()
    assert text[1].startswith("# rows")
    assert any("contact-normal" in ln for ln in text)
    assert any("contact-friction-t1" in ln for ln in text)
