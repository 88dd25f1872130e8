"""Random well-conditioned LCP instances for solver/oracle comparison."""
from __future__ import annotations

import numpy as np

from tracksim.bodies import MassProperties, Pose, RigidBody, Twist
from tracksim.constraints import ConstraintRow, LcpProblem
from tracksim.math3d import vec

INF = float("inf")


def random_problem(rng: np.random.Generator, n_rows: int, cond_limit: float = 1e5):
    """A random box-bounded problem over two dynamic bodies.

    Regenerates until the dense Delassus matrix is well conditioned, so
    both solvers agree to tight tolerance.
    """
    from oracle_lcp import dense_system

    while True:
        bodies = []
        for bid in range(2):
            b = RigidBody(
                bid,
                Pose(rng.normal(size=3), np.array([1.0, 0, 0, 0])),
                Twist(rng.normal(scale=0.5, size=3), rng.normal(scale=0.5, size=3)),
                MassProperties(
                    float(rng.uniform(0.5, 2.0)),
                    np.diag(rng.uniform(0.05, 0.5, size=3)),
                ),
            )
            bodies.append(b)
        rows = []
        for _ in range(n_rows):
            j = rng.normal(size=12)
            j /= np.linalg.norm(j)
            kind = rng.integers(0, 3)
            if kind == 0:
                lo, hi = 0.0, INF
            elif kind == 1:
                lo, hi = -float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 2.0))
            else:
                lo, hi = -INF, float(rng.uniform(0.1, 2.0))
            rows.append(
                ConstraintRow(
                    0,
                    1,
                    j[0:3],
                    j[3:6],
                    j[6:9],
                    j[9:12],
                    rhs=float(rng.normal(scale=0.5)),
                    lower=lo,
                    upper=hi,
                    softness=1e-9,
                )
            )
        problem = LcpProblem.from_rows(rows, bodies, dt=1e-3)
        a, _ = dense_system(problem)
        if np.linalg.cond(a) < cond_limit:
            return problem


def resting_box_problem(mass: float = 1.0, dt: float = 1e-3, surface_velocity: float = 0.0,
                        mu: float = 0.0, mode: str = "pyramid", lock_rotation: bool = False):
    """Unit box on a static floor, one contact under the center of mass,
    tentative velocity already includes one gravity step.

    ``lock_rotation`` gives the box a near-infinite inertia so the contact
    responds by pure translation (the textbook impulse = m * dv case).
    """
    from tracksim.collision import ContactPoint
    from tracksim.constraints import rows_from_contact

    floor = RigidBody.make_static(0, Pose.identity())
    props = (
        MassProperties(mass, np.eye(3) * 1e12)
        if lock_rotation
        else MassProperties.solid_box(mass, vec(1, 1, 1))
    )
    box = RigidBody(
        1,
        Pose(vec(0, 0, 0.5), np.array([1.0, 0, 0, 0])),
        Twist(vec(0, 0, -9.81 * dt), vec(0, 0, 0)),
        props,
    )
    contact = ContactPoint(
        position=vec(0, 0, 0),
        normal=vec(0, 0, 1),
        depth=0.0,
        body1_id=0,
        body2_id=1,
        t1=vec(1, 0, 0),
        t2=vec(0, 1, 0),
        mu1=mu,
        mu2=mu,
        surface_velocity_1=surface_velocity,
    )
    rows = rows_from_contact(contact, floor, box, dt, erp=0.2, friction_mode=mode)
    return LcpProblem.from_rows(rows, [floor, box], dt), rows, [floor, box]
