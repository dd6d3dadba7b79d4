"""Compiled geodesic integrator for the warped flanks ``d rho^2 + f(rho)^2 d phi^2``.

State is ``(rho, phi, alpha)`` with ``alpha`` the angle from the vertical
(``d/d phi``) direction, so the velocity is unit by construction:

    rho'   = sin(alpha)
    phi'   = cos(alpha) / f(rho)
    alpha' = f'(rho) cos(alpha) / f(rho)

Steps are DOP853 with the usual embedded error control, plus a monitor on
the Clairaut integral ``f cos(alpha)`` that rejects steps whose drift
exceeds ``ctol`` per unit time.
"""

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

N_STAGES = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A[:N_STAGES, :N_STAGES])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:N_STAGES])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

DONE = 0
HIT_EDGE = 1
HIT_OUTER = 2
FAILED = -1


@njit(cache=True)
def warp(rho, lo, hi, h, a):
    """Return ``(f, f'/f)`` for the C^1 cosh-flanked warp profile."""
    if rho > hi:
        x = (rho - hi) / a
        return h * math.cosh(x), math.tanh(x) / a
    if rho < lo:
        x = (lo - rho) / a
        return h * math.cosh(x), -math.tanh(x) / a
    return h, 0.0


@njit(cache=True)
def _rhs(y, out, lo, hi, h, a):
    f, lf = warp(y[0], lo, hi, h, a)
    ca = math.cos(y[2])
    out[0] = math.sin(y[2])
    out[1] = ca / f
    out[2] = lf * ca


@njit(cache=True)
def _clairaut(y, lo, hi, h, a):
    f, _ = warp(y[0], lo, hi, h, a)
    return f * math.cos(y[2])


@njit(cache=True)
def _step(y, f0, dt, K, lo, hi, h, a, y_new, f_new):
    n = 3
    K[0, :] = f0
    tmp = np.empty(n)
    for s in range(1, N_STAGES):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += K[j, i] * A[s, j]
            tmp[i] = y[i] + dt * acc
        _rhs(tmp, K[s], lo, hi, h, a)
    for i in range(n):
        acc = 0.0
        for j in range(N_STAGES):
            acc += K[j, i] * B[j]
        y_new[i] = y[i] + dt * acc
    _rhs(y_new, f_new, lo, hi, h, a)
    K[N_STAGES, :] = f_new


@njit(cache=True)
def _error_norm(K, dt, y, y_new, rtol, atol):
    e5 = 0.0
    e3 = 0.0
    for i in range(3):
        sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
        a5 = 0.0
        a3 = 0.0
        for j in range(N_STAGES + 1):
            a5 += K[j, i] * E5[j]
            a3 += K[j, i] * E3[j]
        a5 /= sc
        a3 /= sc
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(dt) * e5 / math.sqrt((e5 + 0.01 * e3) * 3.0)


@njit(cache=True)
def _probe(y, f0, tau, K, lo, hi, h, a, out):
    fn = np.empty(3)
    _step(y, f0, tau, K, lo, hi, h, a, out, fn)


@njit(cache=True)
def _refine(y, f0, t_lo, g_lo, t_hi, g_hi, comp, level, K, lo, hi, h, a, out):
    """Locate ``out[comp] == level`` inside a single step by safeguarded secant."""
    side = 0
    tmid = t_hi
    for _ in range(200):
        tmid = (t_lo * g_hi - t_hi * g_lo) / (g_hi - g_lo)
        if not (t_lo < tmid < t_hi):
            tmid = 0.5 * (t_lo + t_hi)
        _probe(y, f0, tmid, K, lo, hi, h, a, out)
        if comp == 0:
            gm = out[0] - level
        else:
            gm = math.sin(out[2]) - level
        if abs(gm) < 1e-15 or (t_hi - t_lo) < 1e-16:
            return tmid, gm
        if (gm > 0) == (g_hi > 0):
            t_hi, g_hi = tmid, gm
            if side == -1:
                g_lo *= 0.5
            side = -1
        else:
            t_lo, g_lo = tmid, gm
            if side == 1:
                g_hi *= 0.5
            side = 1
    return tmid, gm


@njit(cache=True)
def flank_run(rho, phi, alpha, t_avail, lo, hi, h, a, outer_lo, outer_hi,
              rtol, atol, ctol, record, events):
    """Integrate until ``t_avail`` is used up or a band edge / collar boundary is hit.

    With ``events`` false the edges are ignored and the whole warped chart is
    integrated as one ODE.

    Returns ``(t_used, rho, phi, alpha, code, nodes, clairaut_drift, residual)``.
    ``nodes`` holds accepted step endpoints ``(t, rho, phi, alpha)`` when
    ``record`` is true (always includes the start and the end).
    """
    y = np.array([rho, phi, alpha])
    f0 = np.empty(3)
    _rhs(y, f0, lo, hi, h, a)
    K = np.empty((N_STAGES + 1, 3))
    y_new = np.empty(3)
    f_new = np.empty(3)
    tmp = np.empty(3)
    upper = rho >= hi
    edge = hi if upper else lo
    outer = outer_hi if upper else outer_lo
    sgn = 1.0 if upper else -1.0

    cap = 64
    nodes = np.empty((cap, 4))
    nn = 0
    if record:
        nodes[0, 0] = 0.0
        nodes[0, 1:] = y
        nn = 1

    p_start = _clairaut(y, lo, hi, h, a)
    t = 0.0
    dt = min(0.05, t_avail) if t_avail > 0 else 0.0
    code = DONE
    residual = 0.0
    n_iter = 0
    while t < t_avail:
        n_iter += 1
        if n_iter > 2000000:
            code = FAILED
            break
        dt = min(dt, t_avail - t)
        if dt < 1e-14 * max(1.0, t):
            if t_avail - t < 1e-12 * max(1.0, t_avail):
                t = t_avail
                break
            code = FAILED
            break
        _step(y, f0, dt, K, lo, hi, h, a, y_new, f_new)
        err = _error_norm(K, dt, y, y_new, rtol, atol)
        p0 = _clairaut(y, lo, hi, h, a)
        p1 = _clairaut(y_new, lo, hi, h, a)
        if err > 1.0 or abs(p1 - p0) > ctol * dt + 4e-16 * max(1.0, abs(p0)):
            if err != err:
                fac = MIN_FACTOR
            elif err > 1.0:
                fac = max(MIN_FACTOR, SAFETY * err ** (-1.0 / 8.0))
            else:
                fac = 0.5
            dt *= fac
            continue

        # event scan: distance to the band edge and to the collar boundary
        g_edge0 = sgn * (y[0] - edge)
        g_edge1 = sgn * (y_new[0] - edge)
        g_out1 = sgn * (y_new[0] - outer)
        hit_tau = -1.0
        hit_code = DONE
        if not events:
            pass
        elif g_edge0 > 0.0 and g_edge1 <= 0.0:
            hit_tau, residual = _refine(y, f0, 0.0, y[0] - edge, dt, y_new[0] - edge,
                                        0, edge, K, lo, hi, h, a, tmp)
            hit_code = HIT_EDGE
        elif g_out1 >= 0.0 and sgn * (y[0] - outer) < 0.0:
            hit_tau, residual = _refine(y, f0, 0.0, y[0] - outer, dt, y_new[0] - outer,
                                        0, outer, K, lo, hi, h, a, tmp)
            hit_code = HIT_OUTER
        elif g_out1 > 0.0 and y[0] == outer and sgn * math.sin(y[2]) < 0.0:
            # grazing entry: dips into the collar and leaves within the first step
            tt, _ = _refine(y, f0, 0.0, math.sin(y[2]), dt, math.sin(y_new[2]),
                            1, 0.0, K, lo, hi, h, a, tmp)
            if sgn * (tmp[0] - outer) < 0.0:
                hit_tau, residual = _refine(y, f0, tt, tmp[0] - outer, dt, y_new[0] - outer,
                                            0, outer, K, lo, hi, h, a, tmp)
            else:
                hit_tau = 0.0
            hit_code = HIT_OUTER
        else:
            s0 = sgn * math.sin(y[2])
            s1 = sgn * math.sin(y_new[2])
            if s0 < 0.0 and s1 > 0.0:
                # turning point inside the step: check it stays off the band
                tt, _ = _refine(y, f0, 0.0, math.sin(y[2]), dt, math.sin(y_new[2]),
                                1, 0.0, K, lo, hi, h, a, tmp)
                if sgn * (tmp[0] - edge) <= 0.0:
                    hit_tau, residual = _refine(y, f0, 0.0, y[0] - edge, tt, tmp[0] - edge,
                                                0, edge, K, lo, hi, h, a, tmp)
                    hit_code = HIT_EDGE
        if hit_code != DONE:
            _probe(y, f0, hit_tau, K, lo, hi, h, a, y_new)
            residual = abs(y_new[0] - (edge if hit_code == HIT_EDGE else outer))
            y_new[0] = edge if hit_code == HIT_EDGE else outer
            t += hit_tau
            y[:] = y_new
            code = hit_code
            if record:
                if nn >= cap:
                    nodes2 = np.empty((2 * cap, 4))
                    nodes2[:cap] = nodes
                    nodes = nodes2
                    cap *= 2
                nodes[nn, 0] = t
                nodes[nn, 1:] = y
                nn += 1
            break

        t += dt
        y[:] = y_new
        f0[:] = f_new
        if record:
            if nn >= cap:
                nodes2 = np.empty((2 * cap, 4))
                nodes2[:cap] = nodes
                nodes = nodes2
                cap *= 2
            nodes[nn, 0] = t
            nodes[nn, 1:] = y
            nn += 1
        if err == 0.0:
            fac = MAX_FACTOR
        else:
            fac = min(MAX_FACTOR, SAFETY * err ** (-1.0 / 8.0))
        dt *= fac
        dt = min(dt, 0.25)

    drift = abs(_clairaut(y, lo, hi, h, a) - p_start)
    return t, y[0], y[1], y[2], code, nodes[:nn].copy(), drift, residual
