"""Compiled hot-path kernels for the per-state robot computations.

The same world-frame algorithms as robot.py (forward kinematics chain,
geometric Jacobians and their configuration partials, composite-rigid-body
mass matrix, Newton-Euler bias recursion, velocity-product accelerations),
written in loop form and JIT-compiled with numba. The numpy implementations
in robot.py remain the reference; tests assert the two paths agree to
floating-point accuracy, and everything falls back to numpy when numba is
unavailable (set OSCBF_NO_JIT=1 to force the fallback).

fastmath stays off so results are reproducible across runs.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _rod(axis, angle, out):
    a1, a2, a3 = axis[0], axis[1], axis[2]
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    out[0, 0] = t * a1 * a1 + c
    out[0, 1] = t * a1 * a2 - s * a3
    out[0, 2] = t * a1 * a3 + s * a2
    out[1, 0] = t * a1 * a2 + s * a3
    out[1, 1] = t * a2 * a2 + c
    out[1, 2] = t * a2 * a3 - s * a1
    out[2, 0] = t * a1 * a3 - s * a2
    out[2, 1] = t * a2 * a3 + s * a1
    out[2, 2] = t * a3 * a3 + c


@njit(cache=True)
def fk_kernel(q, off_rot, off_trans, axes, prism):
    """Chain pass: world rotations, origins, and world joint axes."""
    n = q.shape[0]
    rots = np.empty((n, 3, 3))
    poss = np.empty((n, 3))
    axw = np.empty((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    Rm = np.empty((3, 3))
    for i in range(n):
        # p += R @ off_trans[i]; R = R @ off_rot[i]
        for r in range(3):
            p[r] += (
                R[r, 0] * off_trans[i, 0]
                + R[r, 1] * off_trans[i, 1]
                + R[r, 2] * off_trans[i, 2]
            )
        R = R @ off_rot[i]
        if prism[i]:
            for r in range(3):
                p[r] += q[i] * (
                    R[r, 0] * axes[i, 0] + R[r, 1] * axes[i, 1] + R[r, 2] * axes[i, 2]
                )
        else:
            _rod(axes[i], q[i], Rm)
            R = R @ Rm
        rots[i] = R
        poss[i] = p
        for r in range(3):
            axw[i, r] = (
                R[r, 0] * axes[i, 0] + R[r, 1] * axes[i, 1] + R[r, 2] * axes[i, 2]
            )
    return rots, poss, axw


@njit(cache=True)
def frames_kernel(q, off_rot, off_trans, axes, prism, ee_rot_off, ee_trans_off,
                  sph_link, sph_loc):
    """Full frame data: chain pass plus EE frame and sphere centers."""
    rots, poss, axw = fk_kernel(q, off_rot, off_trans, axes, prism)
    n = q.shape[0]
    R = rots[n - 1]
    p = poss[n - 1]
    ee_rot = R @ ee_rot_off
    ee_pos = np.empty(3)
    for r in range(3):
        ee_pos[r] = p[r] + (
            R[r, 0] * ee_trans_off[0] + R[r, 1] * ee_trans_off[1] + R[r, 2] * ee_trans_off[2]
        )
    S = sph_link.shape[0]
    centers = np.empty((S, 3))
    for s in range(S):
        l = sph_link[s]
        for r in range(3):
            centers[s, r] = poss[l, r] + (
                rots[l, r, 0] * sph_loc[s, 0]
                + rots[l, r, 1] * sph_loc[s, 1]
                + rots[l, r, 2] * sph_loc[s, 2]
            )
    return rots, poss, axw, ee_rot, ee_pos, centers


@njit(cache=True, inline="always")
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def state_kernel(
    q,
    qd,
    gravity,
    off_rot,
    off_trans,
    axes,
    prism,
    ee_rot_off,
    ee_trans_off,
    sph_link,
    sph_loc,
    masses,
    coms,
    inertias,
    need_dynamics,
    need_partials,
):
    """Everything the controllers need at one state, in one compiled pass.

    Returns (rots, poss, axw, ee_rot, ee_pos, centers, J, sphJ, dJ, M, c, g,
    jdot_qd, v_sph, a_sph). With need_dynamics=False the dynamic outputs are
    zero-filled; with need_partials=False the dJ tensor is zero-filled.
    """
    n = q.shape[0]
    S = sph_link.shape[0]
    rots, poss, axw, ee_rot, ee_pos, centers = frames_kernel(
        q, off_rot, off_trans, axes, prism, ee_rot_off, ee_trans_off, sph_link, sph_loc
    )

    # EE geometric Jacobian
    J = np.zeros((6, n))
    for j in range(n):
        if prism[j]:
            for r in range(3):
                J[r, j] = axw[j, r]
        else:
            rx = ee_pos[0] - poss[j, 0]
            ry = ee_pos[1] - poss[j, 1]
            rz = ee_pos[2] - poss[j, 2]
            c0, c1, c2 = _cross(axw[j, 0], axw[j, 1], axw[j, 2], rx, ry, rz)
            J[0, j] = c0
            J[1, j] = c1
            J[2, j] = c2
            J[3, j] = axw[j, 0]
            J[4, j] = axw[j, 1]
            J[5, j] = axw[j, 2]

    # sphere point Jacobians
    sphJ = np.zeros((S, 3, n))
    for s in range(S):
        l = sph_link[s]
        for j in range(l + 1):
            if prism[j]:
                for r in range(3):
                    sphJ[s, r, j] = axw[j, r]
            else:
                rx = centers[s, 0] - poss[j, 0]
                ry = centers[s, 1] - poss[j, 1]
                rz = centers[s, 2] - poss[j, 2]
                c0, c1, c2 = _cross(axw[j, 0], axw[j, 1], axw[j, 2], rx, ry, rz)
                sphJ[s, 0, j] = c0
                sphJ[s, 1, j] = c1
                sphJ[s, 2, j] = c2

    # configuration partials of J: dJ[k, :, j] = d J[:, j] / d q_k
    dJ = np.zeros((n, 6, n))
    if need_partials:
        for j in range(n):
            rex = ee_pos[0] - poss[j, 0]
            rey = ee_pos[1] - poss[j, 1]
            rez = ee_pos[2] - poss[j, 2]
            for k in range(n):
                # Dz = d z_j / d q_k (revolute k at or before j rotates it)
                if k <= j and not prism[k]:
                    dz0, dz1, dz2 = _cross(
                        axw[k, 0], axw[k, 1], axw[k, 2], axw[j, 0], axw[j, 1], axw[j, 2]
                    )
                else:
                    dz0 = dz1 = dz2 = 0.0
                if prism[j]:
                    dJ[k, 0, j] = dz0
                    dJ[k, 1, j] = dz1
                    dJ[k, 2, j] = dz2
                    continue
                # Dpe = d ee_pos / d q_k (Jacobian column k)
                de0, de1, de2 = J[0, k], J[1, k], J[2, k]
                # Dp = d p_j / d q_k
                if k <= j:
                    if prism[k]:
                        dp0, dp1, dp2 = axw[k, 0], axw[k, 1], axw[k, 2]
                    else:
                        dp0, dp1, dp2 = _cross(
                            axw[k, 0], axw[k, 1], axw[k, 2],
                            poss[j, 0] - poss[k, 0],
                            poss[j, 1] - poss[k, 1],
                            poss[j, 2] - poss[k, 2],
                        )
                else:
                    dp0 = dp1 = dp2 = 0.0
                t10, t11, t12 = _cross(dz0, dz1, dz2, rex, rey, rez)
                t20, t21, t22 = _cross(
                    axw[j, 0], axw[j, 1], axw[j, 2], de0 - dp0, de1 - dp1, de2 - dp2
                )
                dJ[k, 0, j] = t10 + t20
                dJ[k, 1, j] = t11 + t21
                dJ[k, 2, j] = t12 + t22
                dJ[k, 3, j] = dz0
                dJ[k, 4, j] = dz1
                dJ[k, 5, j] = dz2

    M = np.zeros((n, n))
    cvec = np.zeros(n)
    gvec = np.zeros(n)
    jq = np.zeros(6)
    v_sph = np.zeros((S, 3))
    a_sph = np.zeros((S, 3))
    if not need_dynamics:
        return rots, poss, axw, ee_rot, ee_pos, centers, J, sphJ, dJ, M, cvec, gvec, jq, v_sph, a_sph

    # world COM positions and world inertias
    coms_w = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    for i in range(n):
        for r in range(3):
            coms_w[i, r] = poss[i, r] + (
                rots[i, r, 0] * coms[i, 0]
                + rots[i, r, 1] * coms[i, 1]
                + rots[i, r, 2] * coms[i, 2]
            )
        Iw[i] = rots[i] @ inertias[i] @ rots[i].T

    # composite-rigid-body mass matrix (tip-to-base composite aggregation)
    m_c = 0.0
    c_c = np.zeros(3)
    I_c = np.zeros((3, 3))
    for k in range(n - 1, -1, -1):
        m_new = m_c + masses[k]
        cx = (m_c * c_c[0] + masses[k] * coms_w[k, 0]) / m_new
        cy = (m_c * c_c[1] + masses[k] * coms_w[k, 1]) / m_new
        cz = (m_c * c_c[2] + masses[k] * coms_w[k, 2]) / m_new
        # parallel-axis shifts of the old composite and the new link
        for (mm, px, py, pz) in ((m_c, c_c[0] - cx, c_c[1] - cy, c_c[2] - cz),
                                 (masses[k], coms_w[k, 0] - cx, coms_w[k, 1] - cy, coms_w[k, 2] - cz)):
            dd = px * px + py * py + pz * pz
            I_c[0, 0] += mm * (dd - px * px)
            I_c[0, 1] += mm * (-px * py)
            I_c[0, 2] += mm * (-px * pz)
            I_c[1, 0] += mm * (-py * px)
            I_c[1, 1] += mm * (dd - py * py)
            I_c[1, 2] += mm * (-py * pz)
            I_c[2, 0] += mm * (-pz * px)
            I_c[2, 1] += mm * (-pz * py)
            I_c[2, 2] += mm * (dd - pz * pz)
        I_c += Iw[k]
        m_c = m_new
        c_c[0], c_c[1], c_c[2] = cx, cy, cz

        ax, ay, az = c_c[0] - poss[k, 0], c_c[1] - poss[k, 1], c_c[2] - poss[k, 2]
        if prism[k]:
            Fx, Fy, Fz = m_c * axw[k, 0], m_c * axw[k, 1], m_c * axw[k, 2]
            nx, ny, nz = _cross(ax, ay, az, Fx, Fy, Fz)
        else:
            Fx, Fy, Fz = _cross(axw[k, 0], axw[k, 1], axw[k, 2], ax, ay, az)
            Fx, Fy, Fz = m_c * Fx, m_c * Fy, m_c * Fz
            nx, ny, nz = _cross(ax, ay, az, Fx, Fy, Fz)
            nx += I_c[0, 0] * axw[k, 0] + I_c[0, 1] * axw[k, 1] + I_c[0, 2] * axw[k, 2]
            ny += I_c[1, 0] * axw[k, 0] + I_c[1, 1] * axw[k, 1] + I_c[1, 2] * axw[k, 2]
            nz += I_c[2, 0] * axw[k, 0] + I_c[2, 1] * axw[k, 1] + I_c[2, 2] * axw[k, 2]
        for j in range(k + 1):
            if prism[j]:
                M[j, k] = axw[j, 0] * Fx + axw[j, 1] * Fy + axw[j, 2] * Fz
            else:
                rx = poss[k, 0] - poss[j, 0]
                ry = poss[k, 1] - poss[j, 1]
                rz = poss[k, 2] - poss[j, 2]
                mx, my, mz = _cross(rx, ry, rz, Fx, Fy, Fz)
                M[j, k] = (
                    axw[j, 0] * (nx + mx) + axw[j, 1] * (ny + my) + axw[j, 2] * (nz + mz)
                )
            M[k, j] = M[j, k]

    # velocity-product forward pass with the gravity trick (qdd = 0)
    ws = np.empty((n, 3))
    als = np.empty((n, 3))
    vls = np.empty((n, 3))
    accs = np.empty((n, 3))
    w0 = w1 = w2 = 0.0
    l0 = l1 = l2 = 0.0
    v0 = v1 = v2 = 0.0
    a0, a1, a2 = -gravity[0], -gravity[1], -gravity[2]
    p0 = p1 = p2 = 0.0
    for i in range(n):
        rx = poss[i, 0] - p0
        ry = poss[i, 1] - p1
        rz = poss[i, 2] - p2
        wr0, wr1, wr2 = _cross(w0, w1, w2, rx, ry, rz)
        t0, t1, t2 = _cross(l0, l1, l2, rx, ry, rz)
        u0, u1, u2 = _cross(w0, w1, w2, wr0, wr1, wr2)
        a0 += t0 + u0
        a1 += t1 + u1
        a2 += t2 + u2
        v0 += wr0
        v1 += wr1
        v2 += wr2
        dq = qd[i]
        z0, z1, z2 = axw[i, 0], axw[i, 1], axw[i, 2]
        if prism[i]:
            s0, s1, s2 = z0 * dq, z1 * dq, z2 * dq
            cc0, cc1, cc2 = _cross(w0, w1, w2, s0, s1, s2)
            a0 += 2.0 * cc0
            a1 += 2.0 * cc1
            a2 += 2.0 * cc2
            v0 += s0
            v1 += s1
            v2 += s2
        else:
            wz0, wz1, wz2 = _cross(w0, w1, w2, z0, z1, z2)
            l0 += wz0 * dq
            l1 += wz1 * dq
            l2 += wz2 * dq
            w0 += z0 * dq
            w1 += z1 * dq
            w2 += z2 * dq
        ws[i, 0], ws[i, 1], ws[i, 2] = w0, w1, w2
        als[i, 0], als[i, 1], als[i, 2] = l0, l1, l2
        vls[i, 0], vls[i, 1], vls[i, 2] = v0, v1, v2
        accs[i, 0], accs[i, 1], accs[i, 2] = a0, a1, a2
        p0, p1, p2 = poss[i, 0], poss[i, 1], poss[i, 2]

    # per-link inertial wrenches and the backward torque recursion (c + g)
    SFx = SFy = SFz = 0.0
    SMx = SMy = SMz = 0.0  # moments about the origin
    GFx = GFy = GFz = 0.0  # gravity-only force sums
    GMx = GMy = GMz = 0.0
    for i in range(n - 1, -1, -1):
        rcx = coms_w[i, 0] - poss[i, 0]
        rcy = coms_w[i, 1] - poss[i, 1]
        rcz = coms_w[i, 2] - poss[i, 2]
        t0, t1, t2 = _cross(als[i, 0], als[i, 1], als[i, 2], rcx, rcy, rcz)
        wr0, wr1, wr2 = _cross(ws[i, 0], ws[i, 1], ws[i, 2], rcx, rcy, rcz)
        u0, u1, u2 = _cross(ws[i, 0], ws[i, 1], ws[i, 2], wr0, wr1, wr2)
        acx = accs[i, 0] + t0 + u0
        acy = accs[i, 1] + t1 + u1
        acz = accs[i, 2] + t2 + u2
        Fx, Fy, Fz = masses[i] * acx, masses[i] * acy, masses[i] * acz
        # N = Iw al + w x (Iw w)
        Iwx = Iw[i, 0, 0] * ws[i, 0] + Iw[i, 0, 1] * ws[i, 1] + Iw[i, 0, 2] * ws[i, 2]
        Iwy = Iw[i, 1, 0] * ws[i, 0] + Iw[i, 1, 1] * ws[i, 1] + Iw[i, 1, 2] * ws[i, 2]
        Iwz = Iw[i, 2, 0] * ws[i, 0] + Iw[i, 2, 1] * ws[i, 1] + Iw[i, 2, 2] * ws[i, 2]
        Nx = Iw[i, 0, 0] * als[i, 0] + Iw[i, 0, 1] * als[i, 1] + Iw[i, 0, 2] * als[i, 2]
        Ny = Iw[i, 1, 0] * als[i, 0] + Iw[i, 1, 1] * als[i, 1] + Iw[i, 1, 2] * als[i, 2]
        Nz = Iw[i, 2, 0] * als[i, 0] + Iw[i, 2, 1] * als[i, 1] + Iw[i, 2, 2] * als[i, 2]
        cw0, cw1, cw2 = _cross(ws[i, 0], ws[i, 1], ws[i, 2], Iwx, Iwy, Iwz)
        Nx += cw0
        Ny += cw1
        Nz += cw2
        SFx += Fx
        SFy += Fy
        SFz += Fz
        m0, m1, m2 = _cross(coms_w[i, 0], coms_w[i, 1], coms_w[i, 2], Fx, Fy, Fz)
        SMx += m0 + Nx
        SMy += m1 + Ny
        SMz += m2 + Nz
        # gravity-only wrench (zero-velocity call): F = -m g at the COM
        gFx, gFy, gFz = -masses[i] * gravity[0], -masses[i] * gravity[1], -masses[i] * gravity[2]
        GFx += gFx
        GFy += gFy
        GFz += gFz
        gm0, gm1, gm2 = _cross(coms_w[i, 0], coms_w[i, 1], coms_w[i, 2], gFx, gFy, gFz)
        GMx += gm0
        GMy += gm1
        GMz += gm2
        # project onto joint i
        px0, px1, px2 = _cross(poss[i, 0], poss[i, 1], poss[i, 2], SFx, SFy, SFz)
        gx0, gx1, gx2 = _cross(poss[i, 0], poss[i, 1], poss[i, 2], GFx, GFy, GFz)
        if prism[i]:
            cgi = axw[i, 0] * SFx + axw[i, 1] * SFy + axw[i, 2] * SFz
            gi = axw[i, 0] * GFx + axw[i, 1] * GFy + axw[i, 2] * GFz
        else:
            cgi = (
                axw[i, 0] * (SMx - px0) + axw[i, 1] * (SMy - px1) + axw[i, 2] * (SMz - px2)
            )
            gi = (
                axw[i, 0] * (GMx - gx0) + axw[i, 1] * (GMy - gx1) + axw[i, 2] * (GMz - gx2)
            )
        gvec[i] = gi
        cvec[i] = cgi - gi

    # EE twist rate at qdd = 0 (undo the gravity offset on linear acceleration)
    nl = n - 1
    rx = ee_pos[0] - poss[nl, 0]
    ry = ee_pos[1] - poss[nl, 1]
    rz = ee_pos[2] - poss[nl, 2]
    t0, t1, t2 = _cross(als[nl, 0], als[nl, 1], als[nl, 2], rx, ry, rz)
    wr0, wr1, wr2 = _cross(ws[nl, 0], ws[nl, 1], ws[nl, 2], rx, ry, rz)
    u0, u1, u2 = _cross(ws[nl, 0], ws[nl, 1], ws[nl, 2], wr0, wr1, wr2)
    jq[0] = accs[nl, 0] + t0 + u0 + gravity[0]
    jq[1] = accs[nl, 1] + t1 + u1 + gravity[1]
    jq[2] = accs[nl, 2] + t2 + u2 + gravity[2]
    jq[3] = als[nl, 0]
    jq[4] = als[nl, 1]
    jq[5] = als[nl, 2]

    # sphere velocities and velocity-product accelerations (no gravity)
    for s in range(S):
        l = sph_link[s]
        rx = centers[s, 0] - poss[l, 0]
        ry = centers[s, 1] - poss[l, 1]
        rz = centers[s, 2] - poss[l, 2]
        wr0, wr1, wr2 = _cross(ws[l, 0], ws[l, 1], ws[l, 2], rx, ry, rz)
        v_sph[s, 0] = vls[l, 0] + wr0
        v_sph[s, 1] = vls[l, 1] + wr1
        v_sph[s, 2] = vls[l, 2] + wr2
        t0, t1, t2 = _cross(als[l, 0], als[l, 1], als[l, 2], rx, ry, rz)
        u0, u1, u2 = _cross(ws[l, 0], ws[l, 1], ws[l, 2], wr0, wr1, wr2)
        a_sph[s, 0] = accs[l, 0] + t0 + u0 + gravity[0]
        a_sph[s, 1] = accs[l, 1] + t1 + u1 + gravity[1]
        a_sph[s, 2] = accs[l, 2] + t2 + u2 + gravity[2]

    return rots, poss, axw, ee_rot, ee_pos, centers, J, sphJ, dJ, M, cvec, gvec, jq, v_sph, a_sph


@njit(cache=True)
def manipulability_kernel(q, off_rot, off_trans, axes, prism, ee_rot_off,
                          ee_trans_off, task_rows):
    """Manipulability index sqrt(det(Jt Jt')) after an in-kernel chain pass."""
    n = q.shape[0]
    rots, poss, axw = fk_kernel(q, off_rot, off_trans, axes, prism)
    R = rots[n - 1]
    p = poss[n - 1]
    ee = np.empty(3)
    for r in range(3):
        ee[r] = p[r] + (
            R[r, 0] * ee_trans_off[0] + R[r, 1] * ee_trans_off[1] + R[r, 2] * ee_trans_off[2]
        )
    J = np.zeros((6, n))
    for j in range(n):
        if prism[j]:
            for r in range(3):
                J[r, j] = axw[j, r]
        else:
            c0, c1, c2 = _cross(
                axw[j, 0], axw[j, 1], axw[j, 2],
                ee[0] - poss[j, 0], ee[1] - poss[j, 1], ee[2] - poss[j, 2],
            )
            J[0, j] = c0
            J[1, j] = c1
            J[2, j] = c2
            J[3, j] = axw[j, 0]
            J[4, j] = axw[j, 1]
            J[5, j] = axw[j, 2]
    k = task_rows.shape[0]
    Jt = np.empty((k, n))
    for a in range(k):
        Jt[a] = J[task_rows[a]]
    if k <= n:
        G = Jt @ Jt.T
    else:
        G = Jt.T @ Jt
    det = np.linalg.det(G)
    if det < 0.0:
        det = 0.0
    return np.sqrt(det)


@njit(cache=True)
def qp_step_kernel(P, Gs, hs, Gh, hh, x, t, w, lam, r_dx, r_dt, r_p, mu, reg, tau_frac):
    """One Mehrotra predictor-corrector step (in place on x, t, w, lam).

    Same algebra as the numpy loop in qp.py: the slack block is eliminated
    onto the decision variables, one Cholesky factorization per iteration,
    two triangular-solve pairs. Raises LinAlgError on factorization
    breakdown (caller falls back to its best iterate).
    """
    d = x.shape[0]
    s = hs.shape[0]
    mh = hh.shape[0]
    m_total = 2 * s + mh

    D = lam / w
    D1 = D[:s]
    D2 = D[s : 2 * s]
    D3 = D[2 * s :]
    Ktt = D1 + D2

    S = P.copy()
    for i in range(d):
        S[i, i] += reg
    for r in range(s):
        dt_r = D1[r] * D2[r] / Ktt[r]
        for a in range(d):
            ga = Gs[r, a] * dt_r
            for b in range(d):
                S[a, b] += ga * Gs[r, b]
    for r in range(mh):
        for a in range(d):
            ga = Gh[r, a] * D3[r]
            for b in range(d):
                S[a, b] += ga * Gh[r, b]
    # factor once, reuse for predictor and corrector
    L = np.linalg.cholesky(S)

    lw = lam * w
    dx = np.empty(d)
    dt = np.empty(s)
    dlam = np.empty(m_total)
    dw = np.empty(m_total)
    dx_a = np.empty(d)
    dt_a = np.empty(s)
    dlam_a = np.empty(m_total)
    dw_a = np.empty(m_total)

    for phase in range(2):
        if phase == 0:
            rc = lw
        else:
            # corrector with Mehrotra centering
            a_p = 1.0
            a_d = 1.0
            for i in range(m_total):
                if dw_a[i] < 0.0:
                    r = -w[i] / dw_a[i]
                    if r < a_p:
                        a_p = r
                if dlam_a[i] < 0.0:
                    r = -lam[i] / dlam_a[i]
                    if r < a_d:
                        a_d = r
            mu_aff = 0.0
            for i in range(m_total):
                mu_aff += (lam[i] + a_d * dlam_a[i]) * (w[i] + a_p * dw_a[i])
            mu_aff /= m_total
            if mu_aff < 0.0:
                mu_aff = 0.0
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            rc = lw + dlam_a * dw_a - sigma * mu

        e = -rc / w - D * r_p
        r1 = -r_dx.copy()
        if s > 0:
            r2 = -r_dt + e[:s] + e[s : 2 * s]
            for a in range(d):
                acc = 0.0
                for r in range(s):
                    acc += Gs[r, a] * (e[r] - D1[r] * (r2[r] / Ktt[r]))
                r1[a] += acc
        else:
            r2 = np.zeros(0)
        if mh > 0:
            for a in range(d):
                acc = 0.0
                for r in range(mh):
                    acc += Gh[r, a] * e[2 * s + r]
                r1[a] += acc
        # two triangular solves with the cached factor
        y = np.empty(d)
        for i in range(d):
            acc = r1[i]
            for jj in range(i):
                acc -= L[i, jj] * y[jj]
            y[i] = acc / L[i, i]
        dxv = np.empty(d)
        for i in range(d - 1, -1, -1):
            acc = y[i]
            for jj in range(i + 1, d):
                acc -= L[jj, i] * dxv[jj]
            dxv[i] = acc / L[i, i]

        if s > 0:
            Gsdx = Gs @ dxv
            dtv = (r2 - D1 * Gsdx) / Ktt
        else:
            Gsdx = np.zeros(0)
            dtv = np.zeros(0)
        if mh > 0:
            Ghdx = Gh @ dxv
        else:
            Ghdx = np.zeros(0)
        for i in range(s):
            adx = Gsdx[i] + dtv[i]
            dlam[i] = e[i] - D[i] * adx
            dw[i] = adx + r_p[i]
            dlam[s + i] = e[s + i] - D[s + i] * dtv[i]
            dw[s + i] = dtv[i] + r_p[s + i]
        for i in range(mh):
            dlam[2 * s + i] = e[2 * s + i] - D[2 * s + i] * Ghdx[i]
            dw[2 * s + i] = Ghdx[i] + r_p[2 * s + i]
        if phase == 0:
            dx_a[:] = dxv
            dt_a[:] = dtv
            dlam_a[:] = dlam
            dw_a[:] = dw
        else:
            dx[:] = dxv
            dt[:] = dtv

    a_p = 1.0
    a_d = 1.0
    for i in range(m_total):
        if dw[i] < 0.0:
            r = -w[i] / dw[i]
            if r < a_p:
                a_p = r
        if dlam[i] < 0.0:
            r = -lam[i] / dlam[i]
            if r < a_d:
                a_d = r
    a_p *= tau_frac
    a_d *= tau_frac
    if a_p > 1.0:
        a_p = 1.0
    if a_d > 1.0:
        a_d = 1.0
    x += a_p * dx
    t += a_p * dt
    w += a_p * dw
    lam += a_d * dlam
    return 0
