"""Compiled per-environment physics used by the vectorized environment.

Mirrors ``sim.step`` + ``sim.update_jump_phase`` + the actuator chain, one
environment at a time, so a whole control period runs in a single call.
"""

import math

import numpy as np
from numba import njit

STANCE, IN_FLIGHT, LANDED = 0, 1, 2


@njit(cache=True)
def _close_leg(a, b, t, s, hip_offset, branch, out):
    """Fill out[0:2]=ankle, out[2:6]=d_ankle (col-major: da_x, da_z, db_x, db_z),
    out[6:8]=knee_i, out[8:10]=knee_o. Returns reachable flag."""
    kix = 0.5 * hip_offset + t * math.sin(a)
    kiz = -t * math.cos(a)
    kox = -0.5 * hip_offset - t * math.sin(b)
    koz = -t * math.cos(b)
    Dx = kox - kix
    Dz = koz - kiz
    dist = math.sqrt(Dx * Dx + Dz * Dz)
    h2 = s * s - 0.25 * dist * dist
    reachable = h2 >= 0.0
    h = math.sqrt(h2) if h2 > 0.0 else 0.0
    degenerate = dist < 1e-9
    if degenerate:
        half = 0.5 * (a - b)
        nx = math.sin(half)
        nz = -math.cos(half)
        ex = 0.0
        ez = 0.0
        sd = 1.0
    else:
        sd = dist
        ex = Dx / dist
        ez = Dz / dist
        nx = -ez
        nz = ex
    sign = (-1.0 if nz > 0.0 else 1.0) * branch
    px = sign * nx
    pz = sign * nz
    mx = 0.5 * (kix + kox)
    mz = 0.5 * (kiz + koz)
    out[0] = mx + h * px
    out[1] = mz + h * pz
    out[6] = kix
    out[7] = kiz
    out[8] = kox
    out[9] = koz
    safe_h = h if h > 1e-12 else 1e-12
    for col in range(2):
        if col == 0:
            dDx = -t * math.cos(a)
            dDz = -t * math.sin(a)
            dMx = 0.5 * t * math.cos(a)
            dMz = 0.5 * t * math.sin(a)
            hs = 0.5
        else:
            dDx = -t * math.cos(-b)
            dDz = -t * math.sin(-b)
            dMx = -0.5 * t * math.cos(-b)
            dMz = -0.5 * t * math.sin(-b)
            hs = -0.5
        if degenerate:
            dh = 0.0
            half = 0.5 * (a - b)
            dnx = hs * math.cos(half)
            dnz = hs * math.sin(half)
        else:
            dh = -(Dx * dDx + Dz * dDz) / (4.0 * safe_h)
            edd = ex * dDx + ez * dDz
            dex = (dDx - ex * edd) / sd
            dez = (dDz - ez * edd) / sd
            dnx = -dez
            dnz = dex
        out[2 + 2 * col] = dMx + dh * px + h * sign * dnx
        out[3 + 2 * col] = dMz + dh * pz + h * sign * dnz
    return reachable


@njit(cache=True)
def _wrap(x):
    return (x + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def _passive(a, b, buf):
    # assumes buf filled by _close_leg for (a, b)
    ik = _wrap(math.atan2(buf[0] - buf[6], -(buf[1] - buf[7])) - a)
    ok = _wrap(-math.atan2(buf[0] - buf[8], -(buf[1] - buf[9])) - b)
    return ik, ok


@njit(cache=True)
def _ik_leg_terms(q, tx, tz, t, s, reach, hip_offset, r, J):
    """Stacked residual (ckc; paw - target) and its 4x4 jacobian for one leg."""
    a, b, ik, ok = q[0], q[1], q[2], q[3]
    kix = 0.5 * hip_offset + t * math.sin(a)
    kiz = -t * math.cos(a)
    kox = -0.5 * hip_offset - t * math.sin(b)
    koz = -t * math.cos(b)
    si, ci = math.sin(a + ik), math.cos(a + ik)
    so, co = math.sin(-b - ok), math.cos(-b - ok)
    r[0] = kix + s * si - (kox + s * so)
    r[1] = kiz - s * ci - (koz - s * co)
    r[2] = kox + reach * so - tx
    r[3] = koz - reach * co - tz
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(-b), math.sin(-b)
    J[0, 0] = t * ca + s * ci
    J[1, 0] = t * sa + s * si
    J[0, 1] = t * cb + s * co
    J[1, 1] = t * sb + s * so
    J[0, 2] = s * ci
    J[1, 2] = s * si
    J[0, 3] = s * co
    J[1, 3] = s * so
    J[2, 0] = 0.0
    J[3, 0] = 0.0
    J[2, 1] = -t * cb - reach * co
    J[3, 1] = -t * sb - reach * so
    J[2, 2] = 0.0
    J[3, 2] = 0.0
    J[2, 3] = -reach * co
    J[3, 3] = -reach * so


@njit(cache=True)
def _solve4(A, g, x):
    """Gaussian elimination with partial pivoting on a 4x4 system (A, g are overwritten)."""
    n = 4
    for k in range(n):
        p = k
        for i in range(k + 1, n):
            if abs(A[i, k]) > abs(A[p, k]):
                p = i
        if p != k:
            for j in range(n):
                A[k, j], A[p, j] = A[p, j], A[k, j]
            g[k], g[p] = g[p], g[k]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            for j in range(k, n):
                A[i, j] -= f * A[k, j]
            g[i] -= f * g[k]
    for i in range(n - 1, -1, -1):
        acc = g[i]
        for j in range(i + 1, n):
            acc -= A[i, j] * x[j]
        x[i] = acc / A[i, i]


@njit(cache=True)
def ik_solve(targets, q0, w, damping, max_iters, tol, t, s, paw_offset, hip_offset, branch,
             q_out, err_out, iters_out, best_q, best_err):
    """Per-item damped least squares on the stacked constraint with passive re-closure.

    Same iteration as the numpy reference in geometry: every leg of an item
    steps until the item's total residual norm is below tol.
    """
    n, n_legs = targets.shape[0], targets.shape[1]
    reach = s + paw_offset
    r = np.empty((n_legs, 4))
    J = np.empty((n_legs, 4, 4))
    A = np.empty((4, 4))
    g = np.empty(4)
    dq = np.empty(4)
    buf = np.empty(10)
    for i in range(n):
        q = q0[i].copy()
        e2 = 0.0
        for l in range(n_legs):
            _ik_leg_terms(q[l], targets[i, l, 0], targets[i, l, 1], t, s, reach, hip_offset, r[l], J[l])
            for k in range(4):
                e2 += r[l, k] * r[l, k]
        err = math.sqrt(e2)
        bq = q.copy()
        be = err
        it = 0
        while err > tol and it < max_iters:
            for l in range(n_legs):
                for a_ in range(4):
                    acc = 0.0
                    for k in range(4):
                        acc += J[l, k, a_] * w[k] * r[l, k]
                    g[a_] = acc
                    for b_ in range(4):
                        acc = 0.0
                        for k in range(4):
                            acc += J[l, k, a_] * w[k] * J[l, k, b_]
                        A[a_, b_] = acc + (damping if a_ == b_ else 0.0)
                _solve4(A, g, dq)
                qa = q[l, 0] - dq[0]
                qb = q[l, 1] - dq[1]
                _close_leg(qa, qb, t, s, hip_offset, branch, buf)
                ik, ok = _passive(qa, qb, buf)
                q[l, 0] = qa
                q[l, 1] = qb
                q[l, 2] = ik
                q[l, 3] = ok
            e2 = 0.0
            for l in range(n_legs):
                _ik_leg_terms(q[l], targets[i, l, 0], targets[i, l, 1], t, s, reach, hip_offset, r[l], J[l])
                for k in range(4):
                    e2 += r[l, k] * r[l, k]
            err = math.sqrt(e2)
            it += 1
            if err < be:
                be = err
                bq[:] = q
        q_out[i] = q
        err_out[i] = err
        iters_out[i] = it
        best_q[i] = bq
        best_err[i] = be


@njit(cache=True)
def _allowance(dist_to_limit, toward_speed, horizon, overshoot, brake_time, floor):
    if floor > 0.0:
        t_v = dist_to_limit / max(toward_speed, floor)
        ramp = min(max(t_v / horizon, 0.0), 1.0)
    else:
        if toward_speed > 0.0:
            ramp = min(max(dist_to_limit / toward_speed / horizon, 0.0), 1.0)
        else:
            ramp = 1.0
    pull = max(toward_speed, 0.0) * brake_time
    return (overshoot + pull) * ramp - pull


@njit(cache=True)
def advance(
    n_sub, step0, pd_every, dt,
    # state (modified in place)
    time, pos, pitch, vel, pitch_rate, q, qd, passive, contact, force, anchor, accel,
    phase, phase_entry, airborne, max_h, apex, takeoff_pos, takeoff_vel,
    # control
    targets, safe_out, tau_out, tau_hold, decel_peak, touched,
    # per-env params
    mass, inertia, k_n, c_n, mu_s, mu_d, k_t, c_t, armature, com_shift, ext_f, ext_tau, ground_h,
    kp, kd, peak, no_load, cutoff, visc, joint_offset,
    # shared params
    thigh, shank, hip_offset, paw_offset, hips, q_lo, q_hi, sum_lo, sum_hi,
    horizon, overshoot, brake_time, floor, gravity, mult, lim_k, lim_d, debounce, blowup_speed,
    landing_window, alive,
):
    n = pos.shape[0]
    buf = np.empty(10)
    jac = np.empty((2, 2, 2))
    qm = np.empty(4)
    for i in range(n):
        if not alive[i]:
            continue
        for k in range(n_sub):
            if (step0 + k) % pd_every == 0:
                for j in range(4):
                    qm[j] = q[i, j] + joint_offset[i, j]
                for j in range(4):
                    v = qd[i, j]
                    hi_j = q_hi[j]
                    lo_j = q_lo[j]
                    up = hi_j + _allowance(hi_j - qm[j] if hi_j > qm[j] else 0.0, v, horizon, overshoot, brake_time, floor)
                    lo = lo_j - _allowance(qm[j] - lo_j if qm[j] > lo_j else 0.0, -v, horizon, overshoot, brake_time, floor)
                    if up < lo:
                        up = lo
                    x = targets[i, j]
                    if x < lo:
                        x = lo
                    elif x > up:
                        x = up
                    safe_out[i, j] = x
                for leg in range(2):
                    a = safe_out[i, 2 * leg]
                    b = safe_out[i, 2 * leg + 1]
                    ssum = a + b
                    if ssum > sum_hi:
                        sh = 0.5 * (ssum - sum_hi)
                    elif ssum < sum_lo:
                        sh = 0.5 * (ssum - sum_lo)
                    else:
                        sh = 0.0
                    a -= sh
                    b -= sh
                    stride = 0.0
                    for _ in range(128):
                        ssum = a + b
                        if ssum > sum_hi:
                            direction = -1.0
                        elif ssum < sum_lo:
                            direction = 1.0
                        else:
                            break
                        ulp = abs(np.nextafter(b, direction * np.inf) - b)
                        stride = max(2.0 * stride, ulp)
                        b = b + direction * stride
                    safe_out[i, 2 * leg] = a
                    safe_out[i, 2 * leg + 1] = b
                for j in range(4):
                    v = qd[i, j]
                    raw = kp[i] * (safe_out[i, j] - qm[j]) - kd[i] * v
                    frac = (no_load[i] - abs(v)) / (no_load[i] - cutoff[i])
                    frac = min(max(frac, 0.0), 1.0)
                    drive = peak[i] * frac
                    upper = drive if v > 0.0 else peak[i]
                    lower = -drive if v < 0.0 else -peak[i]
                    if raw > upper:
                        raw = upper
                    elif raw < lower:
                        raw = lower
                    tau_hold[i, j] = raw - visc[i] * v

            c = math.cos(pitch[i])
            s = math.sin(pitch[i])
            fx_tot = ext_f[i, 0]
            fz_tot = ext_f[i, 1]
            moment = ext_tau[i]
            any_contact = False
            for leg in range(2):
                a = q[i, 2 * leg]
                b = q[i, 2 * leg + 1]
                _close_leg(a, b, thigh, shank, hip_offset, 1.0, buf)
                ax = buf[0]
                az = buf[1]
                j00 = buf[2]
                j10 = buf[3]
                j01 = buf[4]
                j11 = buf[5]
                if paw_offset != 0.0:
                    kk = paw_offset / shank
                    ax = ax + kk * (ax - buf[8])
                    az = az + kk * (az - buf[9])
                    j00 = (1.0 + kk) * j00
                    j10 = (1.0 + kk) * j10
                    j01 = (1.0 + kk) * j01 + kk * thigh * math.cos(-b)
                    j11 = (1.0 + kk) * j11 + kk * thigh * math.sin(-b)
                bx = ax + hips[leg, 0] - com_shift[i]
                bz = az + hips[leg, 1]
                rx = c * bx - s * bz
                rz = s * bx + c * bz
                vbx = j00 * qd[i, 2 * leg] + j01 * qd[i, 2 * leg + 1]
                vbz = j10 * qd[i, 2 * leg] + j11 * qd[i, 2 * leg + 1]
                w = pitch_rate[i]
                px = pos[i, 0] + rx
                pz = pos[i, 1] + rz
                pvx = vel[i, 0] - w * rz + (c * vbx - s * vbz)
                pvz = vel[i, 1] + w * rx + (s * vbx + c * vbz)

                pen = ground_h[i] - pz
                fn = 0.0
                ft = 0.0
                if pen > 0.0:
                    any_contact = True
                    contact[i, leg] = True
                    fn = k_n[i] * pen - c_n[i] * pvz
                    if fn < 0.0:
                        fn = 0.0
                    if math.isnan(anchor[i, leg]):
                        anchor[i, leg] = px
                    ft_trial = -k_t[i] * (px - anchor[i, leg]) - c_t[i] * pvx
                    if abs(ft_trial) <= mu_s[i] * fn:
                        ft = ft_trial
                    else:
                        if pvx != 0.0:
                            direction = -1.0 if pvx > 0.0 else 1.0
                        else:
                            direction = 1.0 if ft_trial > 0.0 else (-1.0 if ft_trial < 0.0 else 0.0)
                        ft = mu_d[i] * fn * direction
                        anchor[i, leg] = px
                else:
                    contact[i, leg] = False
                    anchor[i, leg] = np.nan
                force[i, leg, 0] = ft
                force[i, leg, 1] = fn
                fx_tot += ft
                fz_tot += fn
                moment += rx * fn - rz * ft
                # ground load on the motors: J^T R^T F / multiplicity
                fbx = c * ft + s * fn
                fbz = -s * ft + c * fn
                jac[leg, 0, 0] = (j00 * fbx + j10 * fbz) / mult
                jac[leg, 0, 1] = (j01 * fbx + j11 * fbz) / mult

            ax_o = fx_tot / mass[i]
            az_o = fz_tot / mass[i]
            alpha = moment / inertia[i]
            v0x = vel[i, 0]
            v0z = vel[i, 1]
            vel[i, 0] = v0x + ax_o * dt
            vel[i, 1] = v0z + (az_o - gravity) * dt
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += (vel[i, 1] + 0.5 * gravity * dt) * dt
            pitch_rate[i] += alpha * dt
            pitch[i] += pitch_rate[i] * dt
            accel[i, 0] = (vel[i, 0] - v0x) / dt
            accel[i, 1] = (vel[i, 1] - v0z) / dt
            for leg in range(2):
                for m in range(2):
                    j = 2 * leg + m
                    qq = q[i, j]
                    tl = 0.0
                    if qq > q_hi[j]:
                        tl = -lim_k * (qq - q_hi[j]) - lim_d * qd[i, j]
                    elif qq < q_lo[j]:
                        tl = lim_k * (q_lo[j] - qq) - lim_d * qd[i, j]
                    qdd = (tau_hold[i, j] + jac[leg, 0, m] + tl) / armature[i]
                    qd[i, j] += qdd * dt
            for j in range(4):
                q[i, j] += qd[i, j] * dt
            time[i] += dt

            # jump phase
            if any_contact:
                airborne[i] = 0
            else:
                airborne[i] += 1
            if phase[i] == STANCE and airborne[i] >= debounce:
                phase[i] = IN_FLIGHT
                phase_entry[i] = time[i]
                takeoff_pos[i, 0] = pos[i, 0]
                takeoff_pos[i, 1] = pos[i, 1]
                takeoff_vel[i, 0] = vel[i, 0]
                takeoff_vel[i, 1] = vel[i, 1]
                max_h[i] = pos[i, 1]
                apex[i] = False
            elif phase[i] == IN_FLIGHT and any_contact:
                phase[i] = LANDED
                phase_entry[i] = time[i]
                touched[i] = True
            if phase[i] == IN_FLIGHT:
                if pos[i, 1] > max_h[i]:
                    max_h[i] = pos[i, 1]
                if vel[i, 1] <= 0.0:
                    apex[i] = True
            if phase[i] == LANDED and time[i] - phase_entry[i] <= landing_window:
                an = math.sqrt(accel[i, 0] ** 2 + accel[i, 1] ** 2)
                if an > decel_peak[i]:
                    decel_peak[i] = an
            sp = max(abs(vel[i, 0]), abs(vel[i, 1]), abs(pitch_rate[i]))
            bad = not (math.isfinite(pos[i, 0]) and math.isfinite(pos[i, 1]) and math.isfinite(pitch[i]))
            for j in range(4):
                if not (abs(qd[i, j]) <= 10.0 * blowup_speed):
                    bad = True
            if sp > blowup_speed or bad:
                alive[i] = False
                break
        for leg in range(2):
            a = q[i, 2 * leg]
            b = q[i, 2 * leg + 1]
            _close_leg(a, b, thigh, shank, hip_offset, 1.0, buf)
            ik, ok = _passive(a, b, buf)
            passive[i, 2 * leg] = ik
            passive[i, 2 * leg + 1] = ok
        for j in range(4):
            tau_out[i, j] = tau_hold[i, j]
