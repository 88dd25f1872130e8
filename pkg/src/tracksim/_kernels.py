"""Numba-compiled hot kernels: narrow-phase contact generation and the
projected Gauss-Seidel sweep.

Everything here operates on flat float64 arrays so the per-step cost stays
in compiled code; the Python layers own all bookkeeping and typing.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# Contacts are kept while separated by less than this band (depth clamps
# to zero), which stops resting manifolds from flickering frame to frame.
KEEP_MARGIN = 5e-4

MAX_CONTACTS = 8


@njit(cache=True)
def _dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _closest_segment_segment(p1, d1, l1, p2, d2, l2):
    """Closest points between segments p1 + s*d1 (s in [0, l1]) and
    p2 + t*d2 (t in [0, l2]); d1, d2 unit. Returns (s, t)."""
    r0 = p1[0] - p2[0]
    r1 = p1[1] - p2[1]
    r2 = p1[2] - p2[2]
    a = 1.0
    b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
    c = d1[0] * r0 + d1[1] * r1 + d1[2] * r2
    e = 1.0
    f = d2[0] * r0 + d2[1] * r1 + d2[2] * r2
    denom = a * e - b * b
    if denom > 1e-12:
        s = (b * f - c * e) / denom
    else:
        s = 0.0
    s = min(max(s, 0.0), l1)
    t = b * s + f
    if t < 0.0:
        t = 0.0
        s = min(max(-c, 0.0), l1)
    elif t > l2:
        t = l2
        s = min(max(b * l2 - c, 0.0), l1)
    return s, t


@njit(cache=True)
def box_box_contacts(p1, r1, h1, p2, r2, h2, out_pos, out_depth, out_normal):
    """SAT + reference-face clipping for two oriented boxes.

    Writes up to 4 contact points; ``out_normal`` is the shared manifold
    normal pointing from box 1 toward box 2. Returns the contact count.
    """
    # Relative transform in box-1 coordinates.
    pp = np.empty(3)
    for i in range(3):
        pp[i] = r1[0, i] * (p2[0] - p1[0]) + r1[1, i] * (p2[1] - p1[1]) + r1[2, i] * (p2[2] - p1[2])
    c = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            c[i, j] = r1[0, i] * r2[0, j] + r1[1, i] * r2[1, j] + r1[2, i] * r2[2, j]
    ac = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            ac[i, j] = abs(c[i, j]) + 1e-12

    best_face_depth = 1e30
    best_face = -1
    best_face_sign = 1.0
    # Faces of box 1 (axes 0..2) and box 2 (axes 3..5).
    for i in range(3):
        rb = ac[i, 0] * h2[0] + ac[i, 1] * h2[1] + ac[i, 2] * h2[2]
        sep = abs(pp[i]) - (h1[i] + rb)
        if sep > KEEP_MARGIN:
            return 0
        depth = -sep
        if depth < best_face_depth:
            best_face_depth = depth
            best_face = i
            best_face_sign = 1.0 if pp[i] >= 0.0 else -1.0
    for j in range(3):
        ra = ac[0, j] * h1[0] + ac[1, j] * h1[1] + ac[2, j] * h1[2]
        proj = pp[0] * c[0, j] + pp[1] * c[1, j] + pp[2] * c[2, j]
        sep = abs(proj) - (ra + h2[j])
        if sep > KEEP_MARGIN:
            return 0
        depth = -sep
        if depth < best_face_depth:
            best_face_depth = depth
            best_face = 3 + j
            best_face_sign = 1.0 if proj >= 0.0 else -1.0

    # Edge-cross axes; an edge axis wins only by a clear relative margin
    # so that near-ties resolve to the more stable face manifold.
    best_edge_depth = 1e30
    best_edge_i = -1
    best_edge_j = -1
    best_edge_sign = 1.0
    for i in range(3):
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        for j in range(3):
            j1 = (j + 1) % 3
            j2 = (j + 2) % 3
            # axis = e_i x C[:, j] in box-1 coordinates
            ax0 = 0.0
            ax1 = 0.0
            ax2 = 0.0
            if i == 0:
                ax1 = -c[2, j]
                ax2 = c[1, j]
            elif i == 1:
                ax0 = c[2, j]
                ax2 = -c[0, j]
            else:
                ax0 = -c[1, j]
                ax1 = c[0, j]
            length = math.sqrt(ax0 * ax0 + ax1 * ax1 + ax2 * ax2)
            if length < 1e-9:
                continue
            ra = h1[i1] * ac[i2, j] + h1[i2] * ac[i1, j]
            rb = h2[j1] * ac[i, j2] + h2[j2] * ac[i, j1]
            t = pp[0] * ax0 + pp[1] * ax1 + pp[2] * ax2
            sep = (abs(t) - (ra + rb)) / length
            if sep > KEEP_MARGIN:
                return 0
            depth = -sep
            if depth < best_edge_depth:
                best_edge_depth = depth
                best_edge_i = i
                best_edge_j = j
                best_edge_sign = 1.0 if t >= 0.0 else -1.0

    use_edge = best_edge_i >= 0 and best_edge_depth * 1.05 < best_face_depth

    if use_edge:
        # Single contact at the closest points of the two witness edges.
        i = best_edge_i
        j = best_edge_j
        # world normal = normalize(R1 e_i x R2 e_j), oriented 1 -> 2
        a0 = r1[0, i]
        a1 = r1[1, i]
        a2 = r1[2, i]
        b0 = r2[0, j]
        b1 = r2[1, j]
        b2 = r2[2, j]
        n0 = a1 * b2 - a2 * b1
        n1 = a2 * b0 - a0 * b2
        n2 = a0 * b1 - a1 * b0
        ln = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
        n0 /= ln
        n1 /= ln
        n2 /= ln
        if best_edge_sign < 0.0:
            n0 = -n0
            n1 = -n1
            n2 = -n2
        # witness edge on box1: corner toward +normal, running along axis i
        pa = np.empty(3)
        pb = np.empty(3)
        for k in range(3):
            pa[k] = p1[k]
            pb[k] = p2[k]
        for k in range(3):
            if k == i:
                continue
            sgn = 1.0 if (r1[0, k] * n0 + r1[1, k] * n1 + r1[2, k] * n2) > 0.0 else -1.0
            for m in range(3):
                pa[m] += sgn * h1[k] * r1[m, k]
        for k in range(3):
            if k == j:
                continue
            sgn = 1.0 if (r2[0, k] * n0 + r2[1, k] * n1 + r2[2, k] * n2) > 0.0 else -1.0
            for m in range(3):
                pb[m] -= sgn * h2[k] * r2[m, k]
        da = np.empty(3)
        db = np.empty(3)
        for m in range(3):
            da[m] = r1[m, i]
            db[m] = r2[m, j]
        # start the segments at their negative ends
        start_a = np.empty(3)
        start_b = np.empty(3)
        for m in range(3):
            start_a[m] = pa[m] - da[m] * h1[i]
            start_b[m] = pb[m] - db[m] * h2[j]
        s, t = _closest_segment_segment(start_a, da, 2.0 * h1[i], start_b, db, 2.0 * h2[j])
        for m in range(3):
            qa = start_a[m] + da[m] * s
            qb = start_b[m] + db[m] * t
            out_pos[0, m] = 0.5 * (qa + qb)
        out_depth[0] = max(0.0, best_edge_depth)
        out_normal[0] = n0
        out_normal[1] = n1
        out_normal[2] = n2
        return 1

    # Face manifold: reference face on the box owning the winning axis.
    if best_face < 3:
        ref_p, ref_r, ref_h = p1, r1, h1
        inc_p, inc_r, inc_h = p2, r2, h2
        axis = best_face
        sign = best_face_sign
        flip = False
    else:
        ref_p, ref_r, ref_h = p2, r2, h2
        inc_p, inc_r, inc_h = p1, r1, h1
        axis = best_face - 3
        sign = -best_face_sign
        flip = True

    # Outward reference normal in world.
    nw = np.empty(3)
    for m in range(3):
        nw[m] = sign * ref_r[m, axis]

    # Incident face: the face of the incident box most anti-parallel to nw.
    best_dot = 1e30
    inc_axis = 0
    inc_sign = 1.0
    for k in range(3):
        d = nw[0] * inc_r[0, k] + nw[1] * inc_r[1, k] + nw[2] * inc_r[2, k]
        if d < best_dot:
            best_dot = d
            inc_axis = k
            inc_sign = 1.0
        if -d < best_dot:
            best_dot = -d
            inc_axis = k
            inc_sign = -1.0

    # Incident face corners in reference-box local coordinates.
    k1 = (inc_axis + 1) % 3
    k2 = (inc_axis + 2) % 3
    poly = np.empty((16, 3))
    count = 4
    for v in range(4):
        s1 = 1.0 if v == 0 or v == 1 else -1.0
        s2 = 1.0 if v == 0 or v == 3 else -1.0
        for m in range(3):
            w = (
                inc_p[m]
                + inc_sign * inc_h[inc_axis] * inc_r[m, inc_axis]
                + s1 * inc_h[k1] * inc_r[m, k1]
                + s2 * inc_h[k2] * inc_r[m, k2]
            )
            poly[v, m] = w
    # to reference local
    local = np.empty((16, 3))
    for v in range(4):
        for m in range(3):
            local[v, m] = (
                ref_r[0, m] * (poly[v, 0] - ref_p[0])
                + ref_r[1, m] * (poly[v, 1] - ref_p[1])
                + ref_r[2, m] * (poly[v, 2] - ref_p[2])
            )

    u1 = (axis + 1) % 3
    u2 = (axis + 2) % 3
    buf = np.empty((16, 3))
    # Clip against the 4 side planes |u| <= h of the reference face.
    for plane in range(4):
        comp = u1 if plane < 2 else u2
        bound = ref_h[comp]
        pside = 1.0 if plane % 2 == 0 else -1.0
        out_n = 0
        for v in range(count):
            v2 = (v + 1) % count
            d_a = pside * local[v, comp] - bound
            d_b = pside * local[v2, comp] - bound
            if d_a <= 0.0:
                for m in range(3):
                    buf[out_n, m] = local[v, m]
                out_n += 1
            if (d_a < 0.0) != (d_b < 0.0) and abs(d_a - d_b) > 1e-15:
                t = d_a / (d_a - d_b)
                for m in range(3):
                    buf[out_n, m] = local[v, m] + t * (local[v2, m] - local[v, m])
                out_n += 1
            if out_n >= 15:
                break
        count = out_n
        for v in range(count):
            for m in range(3):
                local[v, m] = buf[v, m]
        if count == 0:
            return 0

    # Keep penetrating (or near-touching) points, positioned mid-depth.
    face_coord = sign * ref_h[axis]
    cand_pos = np.empty((16, 3))
    cand_depth = np.empty(16)
    n_cand = 0
    for v in range(count):
        sep = sign * local[v, axis] - ref_h[axis]
        if sep > KEEP_MARGIN:
            continue
        depth = max(0.0, -sep)
        # place the point mid-depth along the reference face axis
        mid = 0.5 * (local[v, axis] + face_coord)
        q0 = local[v, 0]
        q1 = local[v, 1]
        q2 = local[v, 2]
        if axis == 0:
            q0 = mid
        elif axis == 1:
            q1 = mid
        else:
            q2 = mid
        for m in range(3):
            cand_pos[n_cand, m] = ref_p[m] + q0 * ref_r[m, 0] + q1 * ref_r[m, 1] + q2 * ref_r[m, 2]
        cand_depth[n_cand] = depth
        n_cand += 1
    if n_cand == 0:
        return 0

    # Reduce to at most 4: deepest point, then greedy max-spread selection.
    n_keep = n_cand
    keep = np.empty(4, dtype=np.int64)
    if n_cand > 4:
        deepest = 0
        for v in range(1, n_cand):
            if cand_depth[v] > cand_depth[deepest]:
                deepest = v
        keep[0] = deepest
        chosen = 1
        while chosen < 4:
            best_v = -1
            best_score = -1.0
            for v in range(n_cand):
                used = False
                for w in range(chosen):
                    if keep[w] == v:
                        used = True
                        break
                if used:
                    continue
                score = 1e30
                for w in range(chosen):
                    dx = cand_pos[v, 0] - cand_pos[keep[w], 0]
                    dy = cand_pos[v, 1] - cand_pos[keep[w], 1]
                    dz = cand_pos[v, 2] - cand_pos[keep[w], 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < score:
                        score = d2
                if score > best_score:
                    best_score = score
                    best_v = v
            keep[chosen] = best_v
            chosen += 1
        n_keep = 4
    else:
        for v in range(n_cand):
            keep[v] = v

    # Manifold normal in world, oriented from box 1 toward box 2.
    for m in range(3):
        out_normal[m] = -nw[m] if flip else nw[m]
    for v in range(n_keep):
        src = keep[v]
        for m in range(3):
            out_pos[v, m] = cand_pos[src, m]
        out_depth[v] = cand_depth[src]
    return n_keep


@njit(cache=True)
def cylinder_box_contacts(
    pc, rc, radius, half_len, pb, rb, hb, n_rim, out_pos, out_normal, out_depth
):
    """Cylinder (axis local y) vs box by rim-point probing plus box-edge
    versus lateral-surface tests. Normals point from the box toward the
    cylinder; the dispatcher fixes pair orientation. Returns the count of
    the deepest <= MAX_CONTACTS contacts."""
    cand_pos = np.empty((44, 3))
    cand_nrm = np.empty((44, 3))
    cand_depth = np.empty(44)
    n_cand = 0

    axis = np.empty(3)
    e0 = np.empty(3)
    e2 = np.empty(3)
    for m in range(3):
        axis[m] = rc[m, 1]
        e0[m] = rc[m, 0]
        e2[m] = rc[m, 2]

    # Rim probes on both cap circles.
    for cap in range(2):
        cs = 1.0 if cap == 0 else -1.0
        for k in range(n_rim):
            ang = 2.0 * math.pi * k / n_rim
            ca = math.cos(ang)
            sa = math.sin(ang)
            px = pc[0] + cs * half_len * axis[0] + radius * (ca * e0[0] + sa * e2[0])
            py = pc[1] + cs * half_len * axis[1] + radius * (ca * e0[1] + sa * e2[1])
            pz = pc[2] + cs * half_len * axis[2] + radius * (ca * e0[2] + sa * e2[2])
            # box-local coordinates
            q0 = rb[0, 0] * (px - pb[0]) + rb[1, 0] * (py - pb[1]) + rb[2, 0] * (pz - pb[2])
            q1 = rb[0, 1] * (px - pb[0]) + rb[1, 1] * (py - pb[1]) + rb[2, 1] * (pz - pb[2])
            q2 = rb[0, 2] * (px - pb[0]) + rb[1, 2] * (py - pb[1]) + rb[2, 2] * (pz - pb[2])
            d0 = hb[0] - abs(q0)
            d1 = hb[1] - abs(q1)
            d2 = hb[2] - abs(q2)
            if d0 < -KEEP_MARGIN or d1 < -KEEP_MARGIN or d2 < -KEEP_MARGIN:
                continue
            face = 0
            dmin = d0
            qf = q0
            if d1 < dmin:
                dmin = d1
                face = 1
                qf = q1
            if d2 < dmin:
                dmin = d2
                face = 2
                qf = q2
            sgn = 1.0 if qf >= 0.0 else -1.0
            cand_pos[n_cand, 0] = px
            cand_pos[n_cand, 1] = py
            cand_pos[n_cand, 2] = pz
            for m in range(3):
                cand_nrm[n_cand, m] = sgn * rb[m, face]
            cand_depth[n_cand] = max(0.0, dmin)
            n_cand += 1

    # Box edges against the cylinder lateral surface.
    for eaxis in range(3):
        a1 = (eaxis + 1) % 3
        a2 = (eaxis + 2) % 3
        for s1i in range(2):
            s1 = 1.0 if s1i == 0 else -1.0
            for s2i in range(2):
                s2 = 1.0 if s2i == 0 else -1.0
                corner = np.empty(3)
                edir = np.empty(3)
                for m in range(3):
                    corner[m] = (
                        pb[m]
                        + s1 * hb[a1] * rb[m, a1]
                        + s2 * hb[a2] * rb[m, a2]
                        - hb[eaxis] * rb[m, eaxis]
                    )
                    edir[m] = rb[m, eaxis]
                axis_start = np.empty(3)
                for m in range(3):
                    axis_start[m] = pc[m] - half_len * axis[m]
                s, t = _closest_segment_segment(
                    corner, edir, 2.0 * hb[eaxis], axis_start, axis, 2.0 * half_len
                )
                ex = corner[0] + edir[0] * s
                ey = corner[1] + edir[1] * s
                ez = corner[2] + edir[2] * s
                axp = np.empty(3)
                for m in range(3):
                    axp[m] = axis_start[m] + axis[m] * t
                dx = ex - axp[0]
                dy = ey - axp[1]
                dz = ez - axp[2]
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dist < 1e-9 or dist > radius + KEEP_MARGIN:
                    continue
                depth = radius - dist
                # normal points from the cylinder toward the edge; flip to
                # box -> cylinder orientation used by this kernel
                inv = 1.0 / dist
                if n_cand >= 44:
                    break
                cand_pos[n_cand, 0] = 0.5 * (ex + axp[0] + radius * dx * inv)
                cand_pos[n_cand, 1] = 0.5 * (ey + axp[1] + radius * dy * inv)
                cand_pos[n_cand, 2] = 0.5 * (ez + axp[2] + radius * dz * inv)
                cand_nrm[n_cand, 0] = -dx * inv
                cand_nrm[n_cand, 1] = -dy * inv
                cand_nrm[n_cand, 2] = -dz * inv
                cand_depth[n_cand] = max(0.0, depth)
                n_cand += 1

    if n_cand == 0:
        return 0
    # Keep the deepest MAX_CONTACTS.
    order = np.argsort(-cand_depth[:n_cand])
    n_keep = min(n_cand, MAX_CONTACTS)
    for v in range(n_keep):
        src = order[v]
        for m in range(3):
            out_pos[v, m] = cand_pos[src, m]
            out_normal[v, m] = cand_nrm[src, m]
        out_depth[v] = cand_depth[src]
    return n_keep


# Friction handling modes for PGS rows.
ROW_ABSOLUTE = 0
ROW_COUPLED_BOX = 1
ROW_CONE_FIRST = 2
ROW_CONE_SECOND = 3


@njit(cache=True)
def pgs_solve(
    jac,
    app,
    diag,
    idx1,
    idx2,
    target,
    lo,
    hi,
    mode,
    couple,
    lam,
    vel,
    max_iters,
    tol,
):
    """Projected Gauss-Seidel over constraint rows.

    ``jac`` rows hold (j1_lin, j1_ang, j2_lin, j2_ang); ``app`` the same
    blocks premultiplied by inverse mass / world inverse inertia. ``vel``
    is the (n_bodies, 6) tentative velocity array, updated in place.
    ``lam`` carries warm-start impulses in and the solution out (warm
    impulses must already be applied to ``vel`` by the caller).
    Returns (iterations_used, last max |d lambda|).
    """
    n = jac.shape[0]
    it_used = 0
    max_d = 0.0
    for it in range(max_iters):
        max_d = 0.0
        i = 0
        while i < n:
            m = mode[i]
            if m == ROW_CONE_FIRST:
                j = i + 1
                b1 = idx1[i]
                b2 = idx2[i]
                jv_i = 0.0
                for k in range(3):
                    jv_i += jac[i, k] * vel[b1, k] + jac[i, 3 + k] * vel[b1, 3 + k]
                    jv_i += jac[i, 6 + k] * vel[b2, k] + jac[i, 9 + k] * vel[b2, 3 + k]
                d_i = (target[i] - jv_i) / diag[i]
                li = lam[i] + d_i
                # apply unclamped first component before evaluating second
                for k in range(3):
                    vel[b1, k] += d_i * app[i, k]
                    vel[b1, 3 + k] += d_i * app[i, 3 + k]
                    vel[b2, k] += d_i * app[i, 6 + k]
                    vel[b2, 3 + k] += d_i * app[i, 9 + k]
                jv_j = 0.0
                for k in range(3):
                    jv_j += jac[j, k] * vel[b1, k] + jac[j, 3 + k] * vel[b1, 3 + k]
                    jv_j += jac[j, 6 + k] * vel[b2, k] + jac[j, 9 + k] * vel[b2, 3 + k]
                d_j = (target[j] - jv_j) / diag[j]
                lj = lam[j] + d_j
                for k in range(3):
                    vel[b1, k] += d_j * app[j, k]
                    vel[b1, 3 + k] += d_j * app[j, 3 + k]
                    vel[b2, k] += d_j * app[j, 6 + k]
                    vel[b2, 3 + k] += d_j * app[j, 9 + k]
                limit = hi[i] * max(0.0, lam[couple[i]])
                r = math.sqrt(li * li + lj * lj)
                if r > limit:
                    scale = limit / r if r > 0.0 else 0.0
                    ci = li * scale - li
                    cj = lj * scale - lj
                    li += ci
                    lj += cj
                    for k in range(3):
                        vel[b1, k] += ci * app[i, k] + cj * app[j, k]
                        vel[b1, 3 + k] += ci * app[i, 3 + k] + cj * app[j, 3 + k]
                        vel[b2, k] += ci * app[i, 6 + k] + cj * app[j, 6 + k]
                        vel[b2, 3 + k] += ci * app[i, 9 + k] + cj * app[j, 9 + k]
                di = abs(li - lam[i])
                dj = abs(lj - lam[j])
                if di > max_d:
                    max_d = di
                if dj > max_d:
                    max_d = dj
                lam[i] = li
                lam[j] = lj
                i += 2
                continue
            b1 = idx1[i]
            b2 = idx2[i]
            jv = 0.0
            for k in range(3):
                jv += jac[i, k] * vel[b1, k] + jac[i, 3 + k] * vel[b1, 3 + k]
                jv += jac[i, 6 + k] * vel[b2, k] + jac[i, 9 + k] * vel[b2, 3 + k]
            dl = (target[i] - jv) / diag[i]
            if m == ROW_COUPLED_BOX:
                ln = max(0.0, lam[couple[i]])
                lo_i = lo[i] * ln
                hi_i = hi[i] * ln
            else:
                lo_i = lo[i]
                hi_i = hi[i]
            new = lam[i] + dl
            if new < lo_i:
                new = lo_i
            elif new > hi_i:
                new = hi_i
            d = new - lam[i]
            if d != 0.0:
                for k in range(3):
                    vel[b1, k] += d * app[i, k]
                    vel[b1, 3 + k] += d * app[i, 3 + k]
                    vel[b2, k] += d * app[i, 6 + k]
                    vel[b2, 3 + k] += d * app[i, 9 + k]
            ad = abs(d)
            if ad > max_d:
                max_d = ad
            lam[i] = new
            i += 1
        it_used = it + 1
        if max_d < tol:
            break
    return it_used, max_d


@njit(cache=True)
def apply_warm_start(app, idx1, idx2, lam, vel):
    n = app.shape[0]
    for i in range(n):
        l = lam[i]
        if l == 0.0:
            continue
        b1 = idx1[i]
        b2 = idx2[i]
        for k in range(3):
            vel[b1, k] += l * app[i, k]
            vel[b1, 3 + k] += l * app[i, 3 + k]
            vel[b2, k] += l * app[i, 6 + k]
            vel[b2, 3 + k] += l * app[i, 9 + k]


@njit(cache=True)
def accumulate_impulses(jac, idx1, idx2, lam, out):
    """Per-body world impulses J^T lambda, written into out (n_bodies, 6)."""
    n = jac.shape[0]
    for i in range(n):
        l = lam[i]
        if l == 0.0:
            continue
        b1 = idx1[i]
        b2 = idx2[i]
        for k in range(3):
            out[b1, k] += l * jac[i, k]
            out[b1, 3 + k] += l * jac[i, 3 + k]
            out[b2, k] += l * jac[i, 6 + k]
            out[b2, 3 + k] += l * jac[i, 9 + k]
