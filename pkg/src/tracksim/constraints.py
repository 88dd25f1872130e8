"""Constraint rows, hinge joints, and the mixed LCP solved each step.

A row constrains the relative velocity of two bodies along one direction:
``J v = rhs + bias`` subject to impulse bounds. Contact rows couple
friction bounds to the normal impulse (Coulomb); hinge rows are plain
bilateral constraints with Baumgarte stabilization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import ROW_ABSOLUTE, ROW_CONE_FIRST, ROW_CONE_SECOND, ROW_COUPLED_BOX
from .bodies import RigidBody
from .math3d import normalized
from .shapes import FrictionMode

INF = float("inf")


@dataclass
class SolverSettings:
    iterations: int = 50
    tolerance: float = 1e-9
    erp: float = 0.2
    max_correction_velocity: float = 0.2
    softness: float = 1e-9
    friction_mode: str = "auto"  # auto | pyramid | cone | paper-literal
    warm_start: bool = True
    restitution_threshold: float = 0.01


@dataclass
class ConstraintRow:
    body1_id: int
    body2_id: int
    j1_lin: np.ndarray
    j1_ang: np.ndarray
    j2_lin: np.ndarray
    j2_ang: np.ndarray
    rhs: float = 0.0
    lower: float = -INF
    upper: float = INF
    coupling: int | None = None
    softness: float = 1e-9
    bias: float = 0.0
    mode: int = ROW_ABSOLUTE
    label: str = ""

    def jacobian(self) -> np.ndarray:
        return np.concatenate([self.j1_lin, self.j1_ang, self.j2_lin, self.j2_ang])


@dataclass
class HingeJoint:
    body1_id: int
    body2_id: int
    anchor1: np.ndarray  # body1 frame
    anchor2: np.ndarray  # body2 frame
    axis1: np.ndarray  # body1 frame, unit
    axis2: np.ndarray  # body2 frame, unit
    motor_enabled: bool = False
    motor_target_velocity: float = 0.0
    motor_max_impulse: float = 0.0

    def __post_init__(self) -> None:
        if self.motor_max_impulse < 0.0:
            raise ValueError("motor_max_impulse must be non-negative")

    @staticmethod
    def create(
        body1: RigidBody,
        body2: RigidBody,
        anchor_world: np.ndarray,
        axis_world: np.ndarray,
        motor_enabled: bool = False,
        motor_max_impulse: float = 0.0,
    ) -> "HingeJoint":
        """Build a hinge from the current world-frame anchor and axis."""
        from .math3d import quat_conjugate, quat_rotate

        a = normalized(np.asarray(axis_world, dtype=float))
        inv1 = quat_conjugate(body1.pose.orientation)
        inv2 = quat_conjugate(body2.pose.orientation)
        return HingeJoint(
            body1.body_id,
            body2.body_id,
            quat_rotate(inv1, anchor_world - body1.pose.position),
            quat_rotate(inv2, anchor_world - body2.pose.position),
            quat_rotate(inv1, a),
            quat_rotate(inv2, a),
            motor_enabled=motor_enabled,
            motor_max_impulse=motor_max_impulse,
        )


class LcpProblem:
    """Assembled constraint problem in struct-of-arrays form.

    ``vel`` holds the tentative velocities (current twist plus external
    force impulses already divided by mass) per body; solving updates a
    copy, never the input.
    """

    def __init__(
        self,
        body_ids: list[int],
        inv_mass: np.ndarray,
        inv_inertia: np.ndarray,
        vel: np.ndarray,
        dt: float,
    ):
        self.body_ids = body_ids
        self.body_index = {b: i for i, b in enumerate(body_ids)}
        self.inv_mass = inv_mass
        self.inv_inertia = inv_inertia
        self.vel = vel
        self.dt = dt
        self._jac: list[np.ndarray] = []
        self._idx: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._bias: list[np.ndarray] = []
        self._lo: list[np.ndarray] = []
        self._hi: list[np.ndarray] = []
        self._mode: list[np.ndarray] = []
        self._couple: list[np.ndarray] = []
        self._softness: list[np.ndarray] = []
        self._labels: list[str] = []
        self._n = 0
        self._final = None

    @property
    def n_rows(self) -> int:
        return self._n

    def append_block(
        self,
        jac: np.ndarray,
        idx: np.ndarray,
        rhs: np.ndarray,
        bias: np.ndarray,
        lo: np.ndarray,
        hi: np.ndarray,
        mode: np.ndarray,
        couple: np.ndarray,
        softness: np.ndarray,
        labels: list[str],
    ) -> int:
        """Append rows; ``couple`` holds absolute row indices (or -1).
        Returns the index of the first appended row."""
        start = self._n
        self._jac.append(jac)
        self._idx.append(idx)
        self._rhs.append(rhs)
        self._bias.append(bias)
        self._lo.append(lo)
        self._hi.append(hi)
        self._mode.append(mode)
        self._couple.append(couple)
        self._softness.append(softness)
        self._labels.extend(labels)
        self._n += jac.shape[0]
        self._final = None
        return start

    def finalize(self):
        if self._final is not None:
            return self._final
        n = self._n
        if n == 0:
            jac = np.zeros((0, 12))
            idx = np.zeros((0, 2), dtype=np.int64)
            rhs = bias = lo = hi = softness = np.zeros(0)
            mode = couple = np.zeros(0, dtype=np.int64)
        else:
            jac = np.vstack(self._jac)
            idx = np.vstack(self._idx)
            rhs = np.concatenate(self._rhs)
            bias = np.concatenate(self._bias)
            lo = np.concatenate(self._lo)
            hi = np.concatenate(self._hi)
            mode = np.concatenate(self._mode)
            couple = np.concatenate(self._couple)
            softness = np.concatenate(self._softness)
        # premultiplied blocks app = M^-1 J^T per row
        app = np.empty_like(jac)
        if n:
            i1 = idx[:, 0]
            i2 = idx[:, 1]
            app[:, 0:3] = jac[:, 0:3] * self.inv_mass[i1, None]
            app[:, 6:9] = jac[:, 6:9] * self.inv_mass[i2, None]
            app[:, 3:6] = np.einsum("nij,nj->ni", self.inv_inertia[i1], jac[:, 3:6])
            app[:, 9:12] = np.einsum("nij,nj->ni", self.inv_inertia[i2], jac[:, 9:12])
        diag = np.sum(jac * app, axis=1) + softness
        self._final = {
            "jac": jac,
            "app": app,
            "diag": diag,
            "idx1": np.ascontiguousarray(idx[:, 0]) if n else np.zeros(0, dtype=np.int64),
            "idx2": np.ascontiguousarray(idx[:, 1]) if n else np.zeros(0, dtype=np.int64),
            "rhs": rhs,
            "bias": bias,
            "target": rhs + bias,
            "lo": lo,
            "hi": hi,
            "mode": mode,
            "couple": couple,
        }
        return self._final

    def rows(self) -> list[ConstraintRow]:
        f = self.finalize()
        out = []
        for i in range(self._n):
            b1 = self.body_ids[f["idx1"][i]]
            b2 = self.body_ids[f["idx2"][i]]
            cpl = int(f["couple"][i])
            out.append(
                ConstraintRow(
                    b1,
                    b2,
                    f["jac"][i, 0:3].copy(),
                    f["jac"][i, 3:6].copy(),
                    f["jac"][i, 6:9].copy(),
                    f["jac"][i, 9:12].copy(),
                    rhs=float(f["rhs"][i]),
                    lower=float(f["lo"][i]),
                    upper=float(f["hi"][i]),
                    coupling=cpl if cpl >= 0 else None,
                    bias=float(f["bias"][i]),
                    mode=int(f["mode"][i]),
                    label=self._labels[i],
                )
            )
        return out

    @staticmethod
    def from_rows(rows: list[ConstraintRow], bodies: list[RigidBody], dt: float) -> "LcpProblem":
        body_ids = [b.body_id for b in bodies]
        m = len(bodies)
        inv_mass = np.array([b.inv_mass for b in bodies])
        inv_inertia = np.stack([b.inv_inertia_world() for b in bodies]) if m else np.zeros((0, 3, 3))
        vel = np.zeros((m, 6))
        for i, b in enumerate(bodies):
            vel[i, 0:3] = b.twist.linear
            vel[i, 3:6] = b.twist.angular
        p = LcpProblem(body_ids, inv_mass, inv_inertia, vel, dt)
        n = len(rows)
        if n:
            jac = np.zeros((n, 12))
            idx = np.zeros((n, 2), dtype=np.int64)
            rhs = np.zeros(n)
            bias = np.zeros(n)
            lo = np.zeros(n)
            hi = np.zeros(n)
            mode = np.zeros(n, dtype=np.int64)
            couple = np.full(n, -1, dtype=np.int64)
            soft = np.zeros(n)
            for i, r in enumerate(rows):
                jac[i] = r.jacobian()
                idx[i, 0] = p.body_index[r.body1_id]
                idx[i, 1] = p.body_index[r.body2_id]
                rhs[i] = r.rhs
                bias[i] = r.bias
                lo[i] = r.lower
                hi[i] = r.upper
                mode[i] = r.mode
                couple[i] = -1 if r.coupling is None else r.coupling
                soft[i] = r.softness
            p.append_block(jac, idx, rhs, bias, lo, hi, mode, couple, soft, [r.label for r in rows])
        return p


@dataclass
class LcpSolution:
    lam: np.ndarray
    iterations_used: int
    residual: float
    vel_after: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.lam)):
            raise FloatingPointError("non-finite impulse in LCP solution")


def solve_pgs(
    problem: LcpProblem,
    max_iters: int = 50,
    tol: float = 1e-9,
    warm_start: np.ndarray | None = None,
) -> LcpSolution:
    """Projected Gauss-Seidel: sweep rows, project impulses onto their
    (possibly normal-coupled) bounds, stop on max impulse change < tol."""
    f = problem.finalize()
    vel = problem.vel.copy()
    n = problem.n_rows
    lam = np.zeros(n)
    if warm_start is not None and n:
        lam[:] = warm_start
        _kernels.apply_warm_start(f["app"], f["idx1"], f["idx2"], lam, vel)
    if n == 0:
        return LcpSolution(lam, 0, 0.0, vel)
    iters, residual = _kernels.pgs_solve(
        f["jac"],
        f["app"],
        f["diag"],
        f["idx1"],
        f["idx2"],
        f["target"],
        f["lo"],
        f["hi"],
        f["mode"],
        f["couple"],
        lam,
        vel,
        max_iters,
        tol,
    )
    if not np.all(np.isfinite(vel)):
        bad = np.where(~np.isfinite(vel))[0]
        raise FloatingPointError(f"non-finite velocity after solve (body rows {bad.tolist()})")
    return LcpSolution(lam, iters, residual, vel)


def accumulate_body_impulses(problem: LcpProblem, lam: np.ndarray) -> np.ndarray:
    """World-frame J^T lambda per body, shape (n_bodies, 6)."""
    f = problem.finalize()
    out = np.zeros((len(problem.body_ids), 6))
    if problem.n_rows:
        _kernels.accumulate_impulses(f["jac"], f["idx1"], f["idx2"], lam, out)
    return out


def _friction_bounds(mode_name: str, mu: float, dt: float) -> tuple[float, float, int]:
    """(lo, hi, row_mode) for one friction direction.

    Pyramid couples the box bounds to the normal impulse. Cone projects
    the tangential pair onto a disc of radius mu * lambda_n (handled
    pairwise by the solver). The paper-literal mode reads mu as a constant
    maximum friction force, so impulse bounds are +-mu*dt.
    """
    if mode_name == FrictionMode.PAPER_LITERAL:
        return -mu * dt, mu * dt, ROW_ABSOLUTE
    if mode_name == FrictionMode.CONE:
        return -INF, mu, ROW_CONE_FIRST
    return -mu, mu, ROW_COUPLED_BOX


def rows_from_contact(
    contact,
    body1: RigidBody,
    body2: RigidBody,
    dt: float,
    erp: float = 0.2,
    max_correction_velocity: float = 0.2,
    softness: float = 1e-9,
    friction_mode: str = FrictionMode.PYRAMID,
    restitution: float = 0.0,
    normal_row_index: int = 0,
) -> list[ConstraintRow]:
    """One normal row plus two friction rows for a contact point.

    The friction rhs carries the contact's surface-motion targets, which
    is the single place where belt propulsion enters the solve: a zero
    target is ordinary Coulomb friction, a nonzero target asks the solver
    for a force that keeps the relative tangential velocity at that value.
    """
    if body1.is_static and body2.is_static:
        return []
    com1 = body1.com_world()
    com2 = body2.com_world()
    pos = contact.position
    r1 = pos - com1
    r2 = pos - com2
    n = contact.normal
    rows = []
    bias = min(erp * contact.depth / dt, max_correction_velocity)
    rhs_n = 0.0
    if restitution > 0.0:
        v_rel = body2.velocity_at_point(pos) - body1.velocity_at_point(pos)
        approach = -float(np.dot(v_rel, n))
        if approach > 0.01:
            rhs_n = restitution * approach
    rows.append(
        ConstraintRow(
            body1.body_id,
            body2.body_id,
            -n,
            -np.cross(r1, n),
            n.copy(),
            np.cross(r2, n),
            rhs=rhs_n,
            lower=0.0,
            upper=INF,
            softness=softness,
            bias=bias,
            mode=ROW_ABSOLUTE,
            label="contact-normal",
        )
    )
    for t, mu, target, which in (
        (contact.t1, contact.mu1, contact.surface_velocity_1, "t1"),
        (contact.t2, contact.mu2, contact.surface_velocity_2, "t2"),
    ):
        lo, hi, mode = _friction_bounds(friction_mode, mu, dt)
        if mode == ROW_CONE_FIRST and which == "t2":
            mode = ROW_CONE_SECOND
        rows.append(
            ConstraintRow(
                body1.body_id,
                body2.body_id,
                -t,
                -np.cross(r1, t),
                t.copy(),
                np.cross(r2, t),
                rhs=target,
                lower=lo,
                upper=hi,
                coupling=None if mode == ROW_ABSOLUTE else normal_row_index,
                softness=softness,
                mode=mode,
                label=f"contact-friction-{which}",
            )
        )
    return rows


def rows_from_hinge(
    joint: HingeJoint,
    body1: RigidBody,
    body2: RigidBody,
    dt: float,
    erp: float = 0.2,
    max_correction_velocity: float = 0.2,
    softness: float = 1e-9,
) -> list[ConstraintRow]:
    """Standard 5-row hinge (3 point + 2 axis) plus an optional motor row."""
    from .math3d import orthonormal_tangents, quat_rotate

    a1w = body1.pose.transform_point(joint.anchor1)
    a2w = body2.pose.transform_point(joint.anchor2)
    com1 = body1.com_world()
    com2 = body2.com_world()
    r1 = a1w - com1
    r2 = a2w - com2
    axis1w = quat_rotate(body1.pose.orientation, joint.axis1)
    axis2w = quat_rotate(body2.pose.orientation, joint.axis2)
    pos_err = a2w - a1w
    rows = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        bias = float(np.clip(-erp * pos_err[k] / dt, -max_correction_velocity, max_correction_velocity))
        rows.append(
            ConstraintRow(
                body1.body_id,
                body2.body_id,
                -e,
                -np.cross(r1, e),
                e,
                np.cross(r2, e),
                bias=bias,
                softness=softness,
                mode=ROW_ABSOLUTE,
                label=f"hinge-point-{k}",
            )
        )
    rot_err = np.cross(axis1w, axis2w)
    b, c = orthonormal_tangents(axis1w)
    for t, which in ((b, "a"), (c, "b")):
        bias = float(
            np.clip(-erp * float(np.dot(rot_err, t)) / dt, -max_correction_velocity, max_correction_velocity)
        )
        rows.append(
            ConstraintRow(
                body1.body_id,
                body2.body_id,
                np.zeros(3),
                -t,
                np.zeros(3),
                t.copy(),
                bias=bias,
                softness=softness,
                mode=ROW_ABSOLUTE,
                label=f"hinge-axis-{which}",
            )
        )
    if joint.motor_enabled:
        rows.append(
            ConstraintRow(
                body1.body_id,
                body2.body_id,
                np.zeros(3),
                -axis1w,
                np.zeros(3),
                axis1w.copy(),
                rhs=joint.motor_target_velocity,
                lower=-joint.motor_max_impulse,
                upper=joint.motor_max_impulse,
                softness=softness,
                mode=ROW_ABSOLUTE,
                label="hinge-motor",
            )
        )
    return rows


def verify_complementarity(problem: LcpProblem, sol: LcpSolution, tol: float = 1e-6) -> float:
    """Max complementarity violation over rows: interior impulses must meet
    their target velocity, bound impulses must push the right way."""
    f = problem.finalize()
    worst = 0.0
    for i in range(problem.n_rows):
        b1 = f["idx1"][i]
        b2 = f["idx2"][i]
        jv = float(f["jac"][i, 0:3] @ sol.vel_after[b1, 0:3] + f["jac"][i, 3:6] @ sol.vel_after[b1, 3:6])
        jv += float(f["jac"][i, 6:9] @ sol.vel_after[b2, 0:3] + f["jac"][i, 9:12] @ sol.vel_after[b2, 3:6])
        w = jv - f["target"][i]
        mode = f["mode"][i]
        if mode == ROW_COUPLED_BOX:
            ln = max(0.0, sol.lam[f["couple"][i]])
            lo_i, hi_i = f["lo"][i] * ln, f["hi"][i] * ln
        else:
            lo_i, hi_i = f["lo"][i], f["hi"][i]
        lam = sol.lam[i]
        if mode in (ROW_CONE_FIRST, ROW_CONE_SECOND):
            continue  # pairwise disc projection; checked via the pyramid bound
        if lam <= lo_i + tol:
            worst = max(worst, -w)  # at lower bound: w >= 0 expected
        elif lam >= hi_i - tol:
            worst = max(worst, w)  # at upper bound: w <= 0 expected
        else:
            worst = max(worst, abs(w))
    return worst
