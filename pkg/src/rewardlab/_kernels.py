"""Compiled inner loops for the planar arm.

Everything here works on flat float64 buffers so it can be jitted by numba:

* ``y`` (length 10): ``q1, q2, qd1, qd2, a1..a6``
* ``p`` (length 11): ``L1, L2, m1, m2, g, damping, tau_act, lo1, hi1, lo2, hi2``
* ``A`` (2 x 6): joint torque per unit activation (moment arms times max force)

The public, typed wrappers live in :mod:`rewardlab.arm`.
"""

import math

import numpy as np
from numba import njit

N_STATE = 10
N_MUSCLES = 6

_BISECT_ITERS = 52
_MAX_SEGMENTS = 12


@njit(cache=True)
def _mass_matrix(q2, p):
    L1, L2, m1, m2 = p[0], p[1], p[2], p[3]
    lc1 = 0.5 * L1
    lc2 = 0.5 * L2
    I1 = m1 * L1 * L1 / 12.0
    I2 = m2 * L2 * L2 / 12.0
    c2 = math.cos(q2)
    M11 = I1 + I2 + m1 * lc1 * lc1 + m2 * (L1 * L1 + lc2 * lc2 + 2.0 * L1 * lc2 * c2)
    M12 = I2 + m2 * (lc2 * lc2 + L1 * lc2 * c2)
    M22 = I2 + m2 * lc2 * lc2
    return M11, M12, M22


@njit(cache=True)
def _torques(act, A):
    t1 = 0.0
    t2 = 0.0
    for k in range(N_MUSCLES):
        t1 += A[0, k] * act[k]
        t2 += A[1, k] * act[k]
    return t1, t2


@njit(cache=True)
def _accel(q1, q2, qd1, qd2, t1, t2, p):
    """Joint accelerations with joint limits treated as unilateral locks.

    A joint resting exactly on a limit with zero velocity is locked when the
    constraint torque needed to hold it points away from the limit; the
    2-joint complementarity problem is solved by enumerating lock sets.
    """
    L1, m1, m2, g, b = p[0], p[2], p[3], p[4], p[5]
    lc1 = 0.5 * L1
    lc2 = 0.5 * p[1]
    M11, M12, M22 = _mass_matrix(q2, p)
    h = m2 * L1 * lc2 * math.sin(q2)
    c12 = math.cos(q1 + q2)
    r1 = t1 - b * qd1 + h * qd2 * (2.0 * qd1 + qd2) - (m1 * lc1 + m2 * L1) * g * math.cos(q1) - m2 * lc2 * g * c12
    r2 = t2 - b * qd2 - h * qd1 * qd1 - m2 * lc2 * g * c12

    # +1 resting on the lower limit, -1 on the upper, 0 free
    s1 = 0
    s2 = 0
    if qd1 == 0.0:
        if q1 <= p[7]:
            s1 = 1
        elif q1 >= p[8]:
            s1 = -1
    if qd2 == 0.0:
        if q2 <= p[9]:
            s2 = 1
        elif q2 >= p[10]:
            s2 = -1

    det = M11 * M22 - M12 * M12
    a1 = (M22 * r1 - M12 * r2) / det
    a2 = (M11 * r2 - M12 * r1) / det
    if s1 == 0 and s2 == 0:
        return a1, a2
    if s1 * a1 >= 0.0 and s2 * a2 >= 0.0:
        return a1, a2
    if s1 != 0 and s2 != 0:
        # joint 1 locked only
        b2 = r2 / M22
        lam1 = M12 * b2 - r1
        if s1 * lam1 >= 0.0 and s2 * b2 >= 0.0:
            return 0.0, b2
        b1 = r1 / M11
        lam2 = M12 * b1 - r2
        if s2 * lam2 >= 0.0 and s1 * b1 >= 0.0:
            return b1, 0.0
        return 0.0, 0.0
    if s1 != 0:
        return 0.0, r2 / M22
    return r1 / M11, 0.0


@njit(cache=True)
def _deriv(y, u, p, A, dy):
    """Fill ``dy`` with dy/dt and return the actuator power tau . qdot."""
    act = y[4:]
    t1, t2 = _torques(act, A)
    a1, a2 = _accel(y[0], y[1], y[2], y[3], t1, t2, p)
    dy[0] = y[2]
    dy[1] = y[3]
    dy[2] = a1
    dy[3] = a2
    inv_tau = 1.0 / p[6]
    for k in range(N_MUSCLES):
        dy[4 + k] = (u[k] - y[4 + k]) * inv_tau
    return t1 * y[2] + t2 * y[3]


@njit(cache=True)
def _rk4(y, u, h, p, A, out, ws):
    """One classical Runge-Kutta step; returns the actuator work done.

    ``ws`` is a (5, N_STATE) scratch buffer.
    """
    k1 = ws[0]
    k2 = ws[1]
    k3 = ws[2]
    k4 = ws[3]
    tmp = ws[4]
    w1 = _deriv(y, u, p, A, k1)
    for i in range(N_STATE):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    w2 = _deriv(tmp, u, p, A, k2)
    for i in range(N_STATE):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    w3 = _deriv(tmp, u, p, A, k3)
    for i in range(N_STATE):
        tmp[i] = y[i] + h * k3[i]
    w4 = _deriv(tmp, u, p, A, k4)
    for i in range(N_STATE):
        out[i] = y[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
    return h * (w1 + 2.0 * w2 + 2.0 * w3 + w4) / 6.0


@njit(cache=True)
def _violates(y, p):
    return y[0] < p[7] or y[0] > p[8] or y[1] < p[9] or y[1] > p[10]


@njit(cache=True)
def _impact(y, p):
    """Clamp joints onto their limits and remove the velocity into them.

    The velocity change is the inelastic constraint impulse, so kinetic
    energy never increases.
    """
    hit1 = False
    hit2 = False
    if y[0] <= p[7]:
        y[0] = p[7]
        hit1 = y[2] < 0.0
    elif y[0] >= p[8]:
        y[0] = p[8]
        hit1 = y[2] > 0.0
    if y[1] <= p[9]:
        y[1] = p[9]
        hit2 = y[3] < 0.0
    elif y[1] >= p[10]:
        y[1] = p[10]
        hit2 = y[3] > 0.0
    if hit1 and hit2:
        y[2] = 0.0
        y[3] = 0.0
        return
    if not (hit1 or hit2):
        return
    M11, M12, M22 = _mass_matrix(y[1], p)
    det = M11 * M22 - M12 * M12
    i11 = M22 / det
    i12 = -M12 / det
    i22 = M11 / det
    if hit1:
        lam = y[2] / i11
        y[3] -= i12 * lam
        y[2] = 0.0
    else:
        lam = y[3] / i22
        y[2] -= i12 * lam
        y[3] = 0.0
    # other joint also on a limit: corner impact, stop both (else the two
    # joints hand the impulse back and forth in ever smaller bounces)
    on1 = y[0] <= p[7] or y[0] >= p[8]
    on2 = y[1] <= p[9] or y[1] >= p[10]
    if on1 and on2:
        y[2] = 0.0
        y[3] = 0.0


@njit(cache=True)
def substep(y, u, dt, p, A, out):
    """Advance one physics timestep with limit-impact event location.

    Returns the actuator work over the step (signed, joules).
    """
    ws = np.empty((8, N_STATE))
    return _substep(y, u, dt, p, A, out, ws)


@njit(cache=True)
def _substep(y, u, dt, p, A, out, ws):
    cur = ws[5]
    nxt = ws[6]
    probe = ws[7]
    cur[:] = y
    remaining = dt
    work = 0.0
    for _ in range(_MAX_SEGMENTS):
        w = _rk4(cur, u, remaining, p, A, nxt, ws)
        if not _violates(nxt, p):
            work += w
            cur[:] = nxt
            remaining = 0.0
            break
        lo = 0.0
        hi = 1.0
        for _k in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            _rk4(cur, u, mid * remaining, p, A, probe, ws)
            if _violates(probe, p):
                hi = mid
            else:
                lo = mid
        work += _rk4(cur, u, hi * remaining, p, A, nxt, ws)
        _impact(nxt, p)
        cur[:] = nxt
        remaining = remaining * (1.0 - hi)
        if remaining <= 0.0:
            break
    if remaining > 0.0:
        work += _rk4(cur, u, remaining, p, A, nxt, ws)
        cur[:] = nxt
        _impact(cur, p)
    for k in range(N_MUSCLES):
        a = cur[4 + k]
        if a < 0.0:
            cur[4 + k] = 0.0
        elif a > 1.0:
            cur[4 + k] = 1.0
    out[:] = cur
    return work


@njit(cache=True)
def control_step_batch(Y, U, n_sub, dt, p, A, Y_out, qacc_out, work_signed, work_abs):
    """Advance every arm in the batch by ``n_sub`` physics steps.

    ``qacc_out`` receives the effective acceleration of the final substep,
    ``work_abs`` the unsigned joint work summed over substeps with the
    end-of-substep torque and velocity.
    """
    n = Y.shape[0]
    u = np.empty(N_MUSCLES)
    cur = np.empty(N_STATE)
    nxt = np.empty(N_STATE)
    ws = np.empty((8, N_STATE))
    for e in range(n):
        for k in range(N_MUSCLES):
            v = U[e, k]
            u[k] = 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)
        cur[:] = Y[e]
        wsum = 0.0
        wa = 0.0
        qa1 = 0.0
        qa2 = 0.0
        for _s in range(n_sub):
            wsum += _substep(cur, u, dt, p, A, nxt, ws)
            qa1 = (nxt[2] - cur[2]) / dt
            qa2 = (nxt[3] - cur[3]) / dt
            t1, t2 = _torques(nxt[4:], A)
            wa += (abs(t1 * nxt[2]) + abs(t2 * nxt[3])) * dt
            cur[:] = nxt
        Y_out[e] = cur
        qacc_out[e, 0] = qa1
        qacc_out[e, 1] = qa2
        work_signed[e] = wsum
        work_abs[e] = wa
