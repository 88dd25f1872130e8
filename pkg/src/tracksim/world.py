"""The per-step pipeline: controllers, collision, contact annotation,
constraint assembly, PGS solve, impulse application, integration.

Warm starting matches contacts across steps by proximity in the first
body's local frame and seeds the solver with last step's impulses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, collision
from ._kernels import ROW_ABSOLUTE, ROW_CONE_FIRST, ROW_CONE_SECOND, ROW_COUPLED_BOX
from .bodies import RigidBody, WorldState, integrate_poses, integrate_velocities
from .collision import ContactManifold
from .constraints import (
    HingeJoint,
    LcpProblem,
    LcpSolution,
    SolverSettings,
    accumulate_body_impulses,
    rows_from_hinge,
    solve_pgs,
)
from .math3d import quat_to_matrix
from .shapes import FrictionMode, shape_aabb

INF = float("inf")
WARM_MATCH_RADIUS = 0.02


class SimulationError(RuntimeError):
    def __init__(self, message: str, step_index: int):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


@dataclass
class _ContactCacheEntry:
    local_points: np.ndarray  # (k,3) in body1 frame
    impulses: np.ndarray  # (k,3) normal, t1, t2


class Simulation:
    """Owns a world plus its geometries, joints, controllers and contact
    annotators, and advances everything one fixed step at a time."""

    def __init__(
        self,
        world: WorldState,
        geoms: list,
        joints: list[HingeJoint] | None = None,
        controllers: list | None = None,
        annotators: list | None = None,
        settings: SolverSettings | None = None,
    ):
        self.world = world
        self.geoms = list(geoms)
        self.joints = list(joints or [])
        self.controllers = list(controllers or [])
        self.annotators = list(annotators or [])
        self.settings = settings or SolverSettings()
        self.step_count = 0
        self.last_manifolds: list[ContactManifold] = []
        self.last_problem: LcpProblem | None = None
        self.last_solution: LcpSolution | None = None
        self._contact_cache: dict[tuple[int, int], _ContactCacheEntry] = {}
        self._joint_cache: dict[int, np.ndarray] = {}
        self._geom_static = [world.body(g.body_id).is_static for g in self.geoms]
        self._static_poses = {
            i: g.world_pose(world.body(g.body_id).pose)
            for i, g in enumerate(self.geoms)
            if self._geom_static[i]
        }
        n = len(self.geoms)
        self._aabb_lo = np.empty((n, 3))
        self._aabb_hi = np.empty((n, 3))
        for i, g in enumerate(self.geoms):
            if self._geom_static[i]:
                lo, hi = shape_aabb(g.shape, self._static_poses[i])
                self._aabb_lo[i] = lo - collision.BROADPHASE_MARGIN
                self._aabb_hi[i] = hi + collision.BROADPHASE_MARGIN
        self._compat = np.zeros((n, n), dtype=bool)
        from .shapes import can_collide

        for i in range(n):
            for j in range(i + 1, n):
                self._compat[i, j] = can_collide(self.geoms[i], self.geoms[j])

    # -- pipeline ---------------------------------------------------------

    def step(self) -> None:
        try:
            self._step_inner()
        except FloatingPointError as exc:
            raise SimulationError(str(exc), self.step_count) from exc
        self.step_count += 1

    def _step_inner(self) -> None:
        for controller in self.controllers:
            controller(self)

        poses = self._world_poses()
        pairs = self._broad_phase(poses)
        manifolds = []
        for i, j in pairs:
            m = collision.collide(self.geoms[i], poses[i], self.geoms[j], poses[j])
            if m is not None and m.count > 0:
                manifolds.append(m)
        for annotate in self.annotators:
            annotate(self, manifolds)
        self.last_manifolds = manifolds

        problem, meta = self._assemble(manifolds)
        warm = self._warm_start_vector(problem, meta) if self.settings.warm_start else None
        sol = solve_pgs(problem, self.settings.iterations, self.settings.tolerance, warm)
        self.last_problem = problem
        self.last_solution = sol
        self._store_cache(problem, sol, meta)

        imp = accumulate_body_impulses(problem, sol.lam)
        impulses = {}
        for bid, bi in problem.body_index.items():
            impulses[bid] = (imp[bi, 0:3], imp[bi, 3:6])
        integrate_velocities(self.world, impulses)
        integrate_poses(self.world)
        for body in self.world.bodies:
            body.clear_forces()

    def run(self, duration: float) -> None:
        steps = int(round(duration / self.world.step_size))
        for _ in range(steps):
            self.step()

    # -- collision helpers -------------------------------------------------

    def _world_poses(self):
        poses = []
        for i, g in enumerate(self.geoms):
            if self._geom_static[i]:
                poses.append(self._static_poses[i])
            else:
                poses.append(g.world_pose(self.world.body(g.body_id).pose))
        return poses

    def _broad_phase(self, poses) -> list[tuple[int, int]]:
        n = len(self.geoms)
        if n < 2:
            return []
        for i, g in enumerate(self.geoms):
            if not self._geom_static[i]:
                lo, hi = shape_aabb(g.shape, poses[i])
                self._aabb_lo[i] = lo - collision.BROADPHASE_MARGIN
                self._aabb_hi[i] = hi + collision.BROADPHASE_MARGIN
        lo, hi = self._aabb_lo, self._aabb_hi
        overlap = np.all((lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=2)
        ok = overlap & self._compat
        ii, jj = np.nonzero(ok)
        return [(int(a), int(b)) for a, b in zip(ii, jj)]

    # -- assembly -----------------------------------------------------------

    def _assemble(self, manifolds: list[ContactManifold]):
        world = self.world
        settings = self.settings
        dt = world.step_size
        bodies = world.bodies
        m = len(bodies)
        body_ids = [b.body_id for b in bodies]
        inv_mass = np.zeros(m)
        inv_inertia = np.zeros((m, 3, 3))
        vel = np.zeros((m, 6))
        coms = np.zeros((m, 3))
        for i, b in enumerate(bodies):
            coms[i] = b.com_world()
            if b.is_static:
                continue
            inv_mass[i] = b.inv_mass
            inv_inertia[i] = b.inv_inertia_world()
            vel[i, 0:3] = (
                b.twist.linear
                + (b.external_force + b.mass_props.mass * world.gravity) * (dt * inv_mass[i])
            )
            vel[i, 3:6] = b.twist.angular + inv_inertia[i] @ (b.external_torque * dt)
        problem = LcpProblem(body_ids, inv_mass, inv_inertia, vel, dt)
        meta = {"joint_rows": [], "contact_rows": []}

        # joint rows first, in joint order
        for jidx, joint in enumerate(self.joints):
            rows = rows_from_hinge(
                joint,
                world.body(joint.body1_id),
                world.body(joint.body2_id),
                dt,
                settings.erp,
                settings.max_correction_velocity,
                settings.softness,
            )
            k = len(rows)
            jac = np.empty((k, 12))
            idx = np.empty((k, 2), dtype=np.int64)
            rhs = np.empty(k)
            bias = np.empty(k)
            lo = np.empty(k)
            hi = np.empty(k)
            for r_i, r in enumerate(rows):
                jac[r_i] = r.jacobian()
                idx[r_i, 0] = problem.body_index[r.body1_id]
                idx[r_i, 1] = problem.body_index[r.body2_id]
                rhs[r_i] = r.rhs
                bias[r_i] = r.bias
                lo[r_i] = r.lower
                hi[r_i] = r.upper
            start = problem.append_block(
                jac,
                idx,
                rhs,
                bias,
                lo,
                hi,
                np.full(k, ROW_ABSOLUTE, dtype=np.int64),
                np.full(k, -1, dtype=np.int64),
                np.full(k, settings.softness),
                [r.label for r in rows],
            )
            meta["joint_rows"].append((jidx, start, k))

        # all contact normal rows, manifold by manifold
        normal_starts = []
        for mf in manifolds:
            i1 = problem.body_index[mf.body1_id]
            i2 = problem.body_index[mf.body2_id]
            k = mf.count
            r1 = mf.positions - coms[i1]
            r2 = mf.positions - coms[i2]
            jac = np.empty((k, 12))
            jac[:, 0:3] = -mf.normals
            jac[:, 3:6] = -np.cross(r1, mf.normals)
            jac[:, 6:9] = mf.normals
            jac[:, 9:12] = np.cross(r2, mf.normals)
            idx = np.empty((k, 2), dtype=np.int64)
            idx[:, 0] = i1
            idx[:, 1] = i2
            rhs = np.zeros(k)
            if mf.surface.restitution > 0.0:
                b1 = world.body(mf.body1_id)
                b2 = world.body(mf.body2_id)
                for c in range(k):
                    v_rel = b2.velocity_at_point(mf.positions[c]) - b1.velocity_at_point(
                        mf.positions[c]
                    )
                    approach = -float(v_rel @ mf.normals[c])
                    if approach > settings.restitution_threshold:
                        rhs[c] = mf.surface.restitution * approach
            bias = np.minimum(settings.erp * mf.depths / dt, settings.max_correction_velocity)
            start = problem.append_block(
                jac,
                idx,
                rhs,
                bias,
                np.zeros(k),
                np.full(k, INF),
                np.full(k, ROW_ABSOLUTE, dtype=np.int64),
                np.full(k, -1, dtype=np.int64),
                np.full(k, settings.softness),
                ["contact-normal"] * k,
            )
            normal_starts.append(start)

        # all friction rows, same manifold order, t1/t2 interleaved
        for mf, nstart in zip(manifolds, normal_starts):
            if float(np.max(mf.mu)) == 0.0:
                meta["contact_rows"].append((mf, nstart, -1))
                continue
            i1 = problem.body_index[mf.body1_id]
            i2 = problem.body_index[mf.body2_id]
            k = mf.count
            r1 = mf.positions - coms[i1]
            r2 = mf.positions - coms[i2]
            jac = np.empty((2 * k, 12))
            for off, t in ((0, mf.t1), (1, mf.t2)):
                jac[off::2, 0:3] = -t
                jac[off::2, 3:6] = -np.cross(r1, t)
                jac[off::2, 6:9] = t
                jac[off::2, 9:12] = np.cross(r2, t)
            idx = np.empty((2 * k, 2), dtype=np.int64)
            idx[:, 0] = i1
            idx[:, 1] = i2
            rhs = np.empty(2 * k)
            rhs[0::2] = mf.surface_vel[:, 0]
            rhs[1::2] = mf.surface_vel[:, 1]
            mode_name = (
                settings.friction_mode
                if settings.friction_mode != "auto"
                else mf.surface.friction_mode
            )
            lo = np.empty(2 * k)
            hi = np.empty(2 * k)
            mode = np.empty(2 * k, dtype=np.int64)
            couple = np.empty(2 * k, dtype=np.int64)
            couple[0::2] = nstart + np.arange(k)
            couple[1::2] = nstart + np.arange(k)
            if mode_name == FrictionMode.PAPER_LITERAL:
                hi[0::2] = mf.mu[:, 0] * dt
                hi[1::2] = mf.mu[:, 1] * dt
                lo[:] = -hi
                mode[:] = ROW_ABSOLUTE
                couple[:] = -1
            elif mode_name == FrictionMode.CONE:
                # disc radius mu1 * lambda_n, solved pairwise
                hi[0::2] = mf.mu[:, 0]
                hi[1::2] = mf.mu[:, 0]
                lo[:] = -INF
                mode[0::2] = ROW_CONE_FIRST
                mode[1::2] = ROW_CONE_SECOND
            else:
                hi[0::2] = mf.mu[:, 0]
                hi[1::2] = mf.mu[:, 1]
                lo[:] = -hi
                mode[:] = ROW_COUPLED_BOX
            start = problem.append_block(
                jac,
                idx,
                rhs,
                bias=np.zeros(2 * k),
                lo=lo,
                hi=hi,
                mode=mode,
                couple=couple,
                softness=np.full(2 * k, settings.softness),
                labels=["contact-friction-t1", "contact-friction-t2"] * k,
            )
            meta["contact_rows"].append((mf, nstart, start))

        return problem, meta

    # -- warm starting ------------------------------------------------------

    def _manifold_key(self, mf: ContactManifold) -> tuple[int, int]:
        return (mf.geom1.geom_id, mf.geom2.geom_id)

    def _local_points(self, mf: ContactManifold) -> np.ndarray:
        b1 = self.world.body(mf.body1_id)
        rot = quat_to_matrix(b1.pose.orientation)
        return (mf.positions - b1.pose.position) @ rot

    def _warm_start_vector(self, problem: LcpProblem, meta) -> np.ndarray | None:
        n = problem.n_rows
        if n == 0:
            return None
        lam0 = np.zeros(n)
        for jidx, start, k in meta["joint_rows"]:
            cached = self._joint_cache.get(jidx)
            if cached is not None and cached.shape[0] == k:
                lam0[start : start + k] = cached
        for mf, nstart, fstart in meta["contact_rows"]:
            entry = self._contact_cache.get(self._manifold_key(mf))
            if entry is None:
                continue
            local = self._local_points(mf)
            used = set()
            for c in range(mf.count):
                d2 = np.sum((entry.local_points - local[c]) ** 2, axis=1)
                best = -1
                best_d = WARM_MATCH_RADIUS**2
                for cand in range(d2.shape[0]):
                    if cand in used:
                        continue
                    if d2[cand] < best_d:
                        best_d = d2[cand]
                        best = cand
                if best < 0:
                    continue
                used.add(best)
                lam0[nstart + c] = entry.impulses[best, 0]
                if fstart >= 0:
                    lam0[fstart + 2 * c] = entry.impulses[best, 1]
                    lam0[fstart + 2 * c + 1] = entry.impulses[best, 2]
        return lam0

    def _store_cache(self, problem: LcpProblem, sol: LcpSolution, meta) -> None:
        self._joint_cache = {
            jidx: sol.lam[start : start + k].copy() for jidx, start, k in meta["joint_rows"]
        }
        cache = {}
        for mf, nstart, fstart in meta["contact_rows"]:
            k = mf.count
            imp = np.zeros((k, 3))
            imp[:, 0] = sol.lam[nstart : nstart + k]
            if fstart >= 0:
                imp[:, 1] = sol.lam[fstart : fstart + 2 * k : 2]
                imp[:, 2] = sol.lam[fstart + 1 : fstart + 2 * k : 2]
            cache[self._manifold_key(mf)] = _ContactCacheEntry(self._local_points(mf), imp)
        self._contact_cache = cache

    # -- diagnostics ----------------------------------------------------------

    def dump_problem(self, path) -> None:
        """Write the last assembled constraint problem as structured text."""
        problem, sol = self.last_problem, self.last_solution
        lines = [
            f"# step {self.step_count}  time {self.world.time:.6f}  dt {self.world.step_size}",
            f"# rows {0 if problem is None else problem.n_rows}",
            "# columns: index label body1 body2 lower upper coupling rhs bias lambda j1_lin j1_ang j2_lin j2_ang",
        ]
        if problem is not None:
            for i, row in enumerate(problem.rows()):
                lam = sol.lam[i] if sol is not None else float("nan")
                blocks = " ".join(
                    " ".join(f"{v:.9g}" for v in b)
                    for b in (row.j1_lin, row.j1_ang, row.j2_lin, row.j2_ang)
                )
                cpl = -1 if row.coupling is None else row.coupling
                lines.append(
                    f"{i} {row.label} {row.body1_id} {row.body2_id} "
                    f"{row.lower:.9g} {row.upper:.9g} {cpl} {row.rhs:.9g} {row.bias:.9g} "
                    f"{lam:.9g} {blocks}"
                )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
