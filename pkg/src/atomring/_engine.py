"""Fused numba kernel propagating atom ensembles through the guide+ring field.

The math here mirrors the analytic sources in ``atomring.magnetics``
(exact two-wire guide with optional taper, toroidally wrapped two-wire ring
with the junction ripple bump); a cross-validation test pins the two paths
against each other. Atoms are fully independent, every array row is written
by exactly one atom, and there are no cross-atom reductions, so results are
bitwise identical for any thread count.

Status codes: -1 unreleased, 0 alive, 1 majorana, 2 escape, 3 background,
4 shaping (applied outside the kernel).
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        def deco(f):
            return f
        return deco

    prange = range

B_REG = 1e-10

ST_UNRELEASED = -1
ST_ALIVE = 0
ST_MAJORANA = 1
ST_ESCAPE = 2
ST_BACKGROUND = 3
ST_SHAPING = 4

# guide parameter vector layout
# 0:3 anchor, 3:6 ex, 6:9 ey, 9:12 ez, 12 d0, 13 has_taper,
# 14 z_wide, 15 d_wide, 16 z_narrow, 17 d_narrow
GP_LEN = 18
# ring parameter vector layout
# 0:3 center, 3:6 e1, 6:9 e2, 9:12 normal, 12 R, 13 d, 14 has_junction,
# 15 ripple, 16 half_width_phi, 17 phi_j
RP_LEN = 18


@njit(cache=True, inline="always")
def _two_wire(x, y, h, k):
    ym = y - h
    yp = y + h
    r1 = x * x + ym * ym
    r2 = x * x + yp * yp
    bx = -k * (ym / r1 + yp / r2)
    by = k * (x / r1 + x / r2)
    return bx, by, r1, r2, ym, yp


@njit(cache=True, inline="always")
def _two_wire_jac(x, ym, yp, r1, r2, k):
    r1q = r1 * r1
    r2q = r2 * r2
    bxx = 2.0 * k * x * (ym / r1q + yp / r2q)
    bxy = -k * ((x * x - ym * ym) / r1q + (x * x - yp * yp) / r2q)
    return bxx, bxy


@njit(cache=True)
def _guide_eval(px, py, pz, cur, gp, mu0):
    """Guide field + Jacobian in world frame; returns 12 floats + trans dist^2."""
    rx = px - gp[0]
    ry = py - gp[1]
    rz = pz - gp[2]
    # local coordinates
    xl = rx * gp[3] + ry * gp[4] + rz * gp[5]
    yl = rx * gp[6] + ry * gp[7] + rz * gp[8]
    zl = rx * gp[9] + ry * gp[10] + rz * gp[11]
    d = gp[12]
    hz = 0.0
    if gp[13] > 0.5:
        zw, dw, zn, dn = gp[14], gp[15], gp[16], gp[17]
        f = (zl - zn) / (zw - zn)
        if f < 0.0:
            f = 0.0
            slope = 0.0
        elif f > 1.0:
            f = 1.0
            slope = 0.0
        else:
            slope = (dw - dn) / (zw - zn)
        d = dn + f * (dw - dn)
        hz = 0.5 * slope
    h = 0.5 * d
    k = mu0 * cur / (2.0 * math.pi)
    bx, by, r1, r2, ym, yp = _two_wire(xl, yl, h, k)
    bxx, bxy = _two_wire_jac(xl, ym, yp, r1, r2, k)
    # taper z-column (sensitivity to h times dh/dz)
    bxz = 0.0
    byz = 0.0
    if hz != 0.0:
        r1q = r1 * r1
        r2q = r2 * r2
        dbx = -k * ((-r1 + 2.0 * ym * ym) / r1q + (r2 - 2.0 * yp * yp) / r2q)
        dby = k * xl * (2.0 * ym / r1q - 2.0 * yp / r2q)
        bxz = dbx * hz
        byz = dby * hz
    # world field: B = bx*ex + by*ey
    bwx = bx * gp[3] + by * gp[6]
    bwy = bx * gp[4] + by * gp[7]
    bwz = bx * gp[5] + by * gp[8]
    # world Jacobian: J_w[a,b] = sum_ij R[i,a] Jl[i,j] R[j,b], R rows ex,ey,ez
    j = np.empty((3, 3))
    for a in range(3):
        exa = gp[3 + a]
        eya = gp[6 + a]
        for b in range(3):
            exb = gp[3 + b]
            eyb = gp[6 + b]
            ezb = gp[9 + b]
            # Jl = [[bxx, bxy, bxz], [bxy, -bxx, byz], [0,0,0]]
            j[a, b] = (exa * (bxx * exb + bxy * eyb + bxz * ezb)
                       + eya * (bxy * exb - bxx * eyb + byz * ezb))
    trans2 = xl * xl + yl * yl
    return bwx, bwy, bwz, j, trans2


@njit(cache=True)
def _ring_eval(px, py, pz, cur, rp, mu0):
    """Ring field + Jacobian; also returns (u, w, wrapped phi)."""
    rx = px - rp[0]
    ry = py - rp[1]
    rz = pz - rp[2]
    w = rx * rp[9] + ry * rp[10] + rz * rp[11]
    ipx = rx - w * rp[9]
    ipy = ry - w * rp[10]
    ipz = rz - w * rp[11]
    rho = math.sqrt(ipx * ipx + ipy * ipy + ipz * ipz)
    rmin = 1e-6 * rp[12]
    if rho < rmin:
        rho = rmin
    rhx = ipx / rho
    rhy = ipy / rho
    rhz = ipz / rho
    c1 = rx * rp[3] + ry * rp[4] + rz * rp[5]
    c2 = rx * rp[6] + ry * rp[7] + rz * rp[8]
    phi = math.atan2(c2, c1)
    u = rho - rp[12]
    h = 0.5 * rp[13]
    k = mu0 * cur / (2.0 * math.pi)
    xl = -u
    yl = w
    bx, by, r1, r2, ym, yp = _two_wire(xl, yl, h, k)
    bxx, bxy = _two_wire_jac(xl, ym, yp, r1, r2, k)
    # phi_hat = n x rho_hat
    phx = rp[10] * rhz - rp[11] * rhy
    phy = rp[11] * rhx - rp[9] * rhz
    phz = rp[9] * rhy - rp[10] * rhx
    bwx = -bx * rhx + by * rp[9]
    bwy = -bx * rhy + by * rp[10]
    bwz = -bx * rhz + by * rp[11]
    j = np.empty((3, 3))
    nrm = (rp[9], rp[10], rp[11])
    rh = (rhx, rhy, rhz)
    ph = (phx, phy, phz)
    byx = bxy          # curl-free transverse block
    byy = -bxx
    for a in range(3):
        for b in range(3):
            j[a, b] = (bxx * rh[a] * rh[b]
                       - bxy * rh[a] * nrm[b]
                       - byx * nrm[a] * rh[b]
                       + byy * nrm[a] * nrm[b]
                       - (bx / rho) * ph[a] * ph[b])
    if rp[14] > 0.5:
        halfw = rp[16]
        dphi = (phi - rp[17] + math.pi) % (2.0 * math.pi) - math.pi
        if abs(dphi) < halfw:
            arg = math.pi * dphi / halfw
            wb = 0.5 * (1.0 + math.cos(arg))
            dwb = -0.5 * math.pi / halfw * math.sin(arg)
            mult = 1.0 + rp[15] * wb
            dmul = rp[15] * dwb / rho
            for a in range(3):
                bv = (bwx, bwy, bwz)[a]
                for b in range(3):
                    j[a, b] = mult * j[a, b] + dmul * bv * ph[b]
            bwx *= mult
            bwy *= mult
            bwz *= mult
    return bwx, bwy, bwz, j, u, w, phi


@njit(cache=True)
def _accel(px, py, pz, ig, ir, gp, rp, cp):
    """Acceleration, transverse ring coords, wrapped phi, guide trans dist^2."""
    mu0 = cp[6]
    bx = 0.0
    by = 0.0
    bz = 0.0
    j = np.zeros((3, 3))
    gtrans2 = 1e30
    if ig > 0.0:
        gbx, gby, gbz, gj, gtrans2 = _guide_eval(px, py, pz, ig, gp, mu0)
        bx += gbx
        by += gby
        bz += gbz
        j += gj
    rbx, rby, rbz, rj, u, w, phi = _ring_eval(px, py, pz, ir if ir > 0.0 else 1.0, rp, mu0)
    if ir > 0.0:
        bx += rbx
        by += rby
        bz += rbz
        j += rj
    nrm = math.sqrt(bx * bx + by * by + bz * bz + B_REG * B_REG)
    gnx = (j[0, 0] * bx + j[1, 0] * by + j[2, 0] * bz) / nrm
    gny = (j[0, 1] * bx + j[1, 1] * by + j[2, 1] * bz) / nrm
    gnz = (j[0, 2] * bx + j[1, 2] * by + j[2, 2] * bz) / nrm
    fac = -cp[0] / cp[1]     # -mu_m / m
    ax = fac * gnx - cp[2] * cp[3]
    ay = fac * gny - cp[2] * cp[4]
    az = fac * gnz - cp[2] * cp[5]
    return ax, ay, az, u, w, phi, gtrans2


@njit(cache=True, parallel=True)
def propagate_segment(pos, vel, status, loss_time, phi_wrap, phi_cont,
                      path_len, alive_time, r2_hist, bg_time,
                      pass_count, pass_data,
                      ig_steps, ir_steps, gp, rp, cp,
                      t0, dt, n_steps, stride, samples, sample_offset,
                      b0_sq, majorana_mode, rcap_sq, resc_sq, abs_esc_sq):
    n_atoms = pos.shape[0]
    for i in prange(n_atoms):
        st = status[i]
        x = pos[i, 0]
        y = pos[i, 1]
        z = pos[i, 2]
        vx = vel[i, 0]
        vy = vel[i, 1]
        vz = vel[i, 2]
        pw = phi_wrap[i]
        pc = phi_cont[i]
        r2a = r2_hist[i, 0]
        r2b = r2_hist[i, 1]
        pl = path_len[i]
        at = alive_time[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        u = 0.0
        w = 0.0
        phw = pw
        gt2 = 1e30
        if st == ST_ALIVE:
            ax, ay, az, u, w, phw, gt2 = _accel(x, y, z, ig_steps[0], ir_steps[0], gp, rp, cp)
        for k in range(n_steps):
            if st == ST_ALIVE:
                t_now = t0 + k * dt
                if bg_time[i] <= t_now + dt:
                    st = ST_BACKGROUND
                    loss_time[i] = bg_time[i]
                else:
                    vhx = vx + 0.5 * dt * ax
                    vhy = vy + 0.5 * dt * ay
                    vhz = vz + 0.5 * dt * az
                    x += dt * vhx
                    y += dt * vhy
                    z += dt * vhz
                    ax, ay, az, u, w, phw, gt2 = _accel(
                        x, y, z, ig_steps[k + 1], ir_steps[k + 1], gp, rp, cp)
                    vx = vhx + 0.5 * dt * ax
                    vy = vhy + 0.5 * dt * ay
                    vz = vhz + 0.5 * dt * az
                    pl += dt * math.sqrt(vhx * vhx + vhy * vhy + vhz * vhz)
                    at += dt
                    dphi = phw - pw
                    if dphi > math.pi:
                        dphi -= 2.0 * math.pi
                    elif dphi < -math.pi:
                        dphi += 2.0 * math.pi
                    pc += dphi
                    pw = phw
                    r2c = u * u + w * w
                    if majorana_mode >= 1:
                        # closest approach between samples: r^2(t) is quadratic
                        # along a straight micro-segment, so the 3-point
                        # parabola through (r2a, r2b, r2c) is exact there
                        r2min = r2c
                        if r2b <= r2a and r2b <= r2c and r2a < 1e29:
                            denom = r2a + r2c - 2.0 * r2b
                            if denom > 0.0:
                                dvals = r2c - r2a
                                r2v = r2b - dvals * dvals / (8.0 * denom)
                                if r2v < r2min:
                                    r2min = r2v
                            else:
                                r2v = r2b
                                if r2v < r2min:
                                    r2min = r2v
                        if majorana_mode == 1:
                            if r2min < b0_sq:
                                st = ST_MAJORANA
                                loss_time[i] = t_now + dt
                        else:
                            if r2min < rcap_sq and r2b <= r2a and r2b <= r2c:
                                npass = pass_count[i]
                                if npass < pass_data.shape[1]:
                                    # transverse velocity at the close pass
                                    rx = x - rp[0]
                                    ry = y - rp[1]
                                    rz = z - rp[2]
                                    wdot = vx * rp[9] + vy * rp[10] + vz * rp[11]
                                    ww = rx * rp[9] + ry * rp[10] + rz * rp[11]
                                    ipx = rx - ww * rp[9]
                                    ipy = ry - ww * rp[10]
                                    ipz = rz - ww * rp[11]
                                    rho = math.sqrt(ipx * ipx + ipy * ipy + ipz * ipz)
                                    udot = (vx * ipx + vy * ipy + vz * ipz) / rho
                                    pass_data[i, npass, 0] = t_now
                                    pass_data[i, npass, 1] = u
                                    pass_data[i, npass, 2] = w
                                    pass_data[i, npass, 3] = udot
                                    pass_data[i, npass, 4] = wdot
                                    pass_count[i] = npass + 1
                        r2a = r2b
                        r2b = r2c
                    if st == ST_ALIVE:
                        rr2 = u * u + w * w
                        d2c = x * x + y * y + z * z
                        if (rr2 > resc_sq and gt2 > resc_sq) or d2c > abs_esc_sq:
                            st = ST_ESCAPE
                            loss_time[i] = t_now + dt
            if (k + 1) % stride == 0:
                samples[i, sample_offset + (k + 1) // stride - 1] = pc
        pos[i, 0] = x
        pos[i, 1] = y
        pos[i, 2] = z
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
        status[i] = st
        phi_wrap[i] = pw
        phi_cont[i] = pc
        r2_hist[i, 0] = r2a
        r2_hist[i, 1] = r2b
        path_len[i] = pl
        alive_time[i] = at
