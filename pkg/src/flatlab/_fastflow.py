"""Compiled flow on the torus presets, used by the shadowing grid search.

Same chart logic as :func:`flatlab.flow.iter_arcs` (band, flank, Fuchsian
chart) without arc objects or events.  Besides the end state, the kernel
returns a certified lower bound for ``min_{t in window} d(g_t w0, w0)``
where ``w0`` is a band vector: exact flat distance in the band, a projected
base distance in the flanks, and the collar width in the Fuchsian chart.
"""

import math

import numpy as np
from numba import njit

from . import _flank
from .flow import ATOL, CTOL, RTOL

BAND, FLANK, HYP = 0, 1, 2
TWO_PI = 2.0 * math.pi


def pack(m):
    """Arrays describing a torus model, in the order expected by :func:`run`."""
    w = m.warp
    ch = m.hyperbolic
    lo_c, hi_c = m.collar_bounds
    fp = np.array([w.lo, w.hi, w.h, w.flank_scale, lo_c, hi_c, w.collar, ch.cut_length,
                   ch.min_lift_separation, 1.0 if m.preset == "FlatCylinderTorus" else 0.0])
    SN = np.ascontiguousarray(ch._side_N)
    SM = np.ascontiguousarray(np.array(ch._side_M))
    LN = np.ascontiguousarray(ch._lift_N)
    LF = np.ascontiguousarray(np.array([[f.e0, f.e1, f.n] for f in ch.lifts]))
    ref = ch.reference
    REF = np.ascontiguousarray(np.array([ref.e0, ref.e1, ref.n]))
    return fp, SN, SM, LN, LF, REF, np.ascontiguousarray(ch.origin)


@njit(cache=True)
def _mdot(u, v):
    return -u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


@njit(cache=True)
def _renorm(X, V):
    X = X / math.sqrt(-_mdot(X, X))
    V = V + _mdot(V, X) * X
    V = V / math.sqrt(_mdot(V, V))
    return X, V


@njit(cache=True)
def _geo(X, V, t):
    c, s = math.cosh(t), math.sinh(t)
    return c * X + s * V, s * X + c * V


@njit(cache=True)
def _side_exit(SN, X, V, t_max):
    best, idx = t_max, -1
    for i in range(SN.shape[0]):
        a = SN[i, 0] * X[0] + SN[i, 1] * X[1] + SN[i, 2] * X[2]
        b = SN[i, 0] * V[0] + SN[i, 1] * V[1] + SN[i, 2] * V[2]
        if b <= 0.0:
            continue
        if a >= 0.0:
            t = 0.0
        elif -a < b:
            t = math.atanh(-a / b)
        else:
            continue
        if t < best:
            best, idx = t, i
    return best, idx


@njit(cache=True)
def _roots(a, b, c, out):
    """Real roots of ``a cosh t + b sinh t = c``; returns their count."""
    A = a + b
    C = a - b
    Bq = -2.0 * c
    disc = Bq * Bq - 4 * A * C
    n = 0
    if disc < 0:
        return 0
    sq = math.sqrt(disc)
    if A == 0.0:
        if Bq != 0.0:
            u = -C / Bq
            if u > 0:
                out[0] = math.log(u)
                n = 1
        return n
    q = -0.5 * (Bq + math.copysign(sq, Bq)) if Bq != 0 else 0.5 * sq
    if q == 0:
        u = q / A
        if u > 0 and math.isfinite(u):
            out[0] = math.log(u)
            n = 1
        return n
    for u in (q / A, C / q):
        if u > 0 and math.isfinite(u):
            out[n] = math.log(u)
            n += 1
    return n


@njit(cache=True)
def _collar_entry(LN, sw, X, V, t_max):
    best, idx = t_max, -1
    roots = np.empty(2)
    for k in range(LN.shape[0]):
        a = LN[k, 0] * X[0] + LN[k, 1] * X[1] + LN[k, 2] * X[2]
        b = LN[k, 0] * V[0] + LN[k, 1] * V[1] + LN[k, 2] * V[2]
        sg = 1.0 if a >= 0 else -1.0
        if sg * b >= 0.0:
            continue
        n = _roots(a, b, sg * sw, roots)
        for j in range(n):
            t = roots[j]
            if t < -1e-13 or t >= best:
                continue
            if sg * (a * math.sinh(t) + b * math.cosh(t)) < 0.0:
                best, idx = max(t, 0.0), k
    return best, idx


@njit(cache=True)
def _reduce(SN, SM, O, X, V):
    d = -_mdot(O, X)
    G = np.eye(3)
    if d > 1.0 + 1e-15:
        D = math.acosh(d)
        Y = O.copy()
        W = (X - d * O) / math.sinh(D)
        remaining = D
        for _ in range(65):
            t, i = _side_exit(SN, Y, W, remaining)
            if i < 0:
                break
            Y, W = _geo(Y, W, t)
            Y, W = _renorm(SM[i] @ Y, SM[i] @ W)
            G = SM[i] @ G
            remaining -= t
    return _renorm(G @ X, G @ V)


@njit(cache=True)
def _fermi_vectors(F, rho, s, alpha):
    cr, sr = math.cosh(rho), math.sinh(rho)
    cs, ss = math.cosh(s), math.sinh(s)
    base = cs * F[0] + ss * F[1]
    X = cr * base + sr * F[2]
    e_rho = sr * base + cr * F[2]
    e_s = ss * F[0] + cs * F[1]
    return X, math.sin(alpha) * e_rho + math.cos(alpha) * e_s


@njit(cache=True)
def _fermi_coords(F, X, V):
    rho = math.asinh(_mdot(X, F[2]))
    cr = math.cosh(rho)
    s = math.asinh(_mdot(X, F[1]) / cr)
    cs, ss = math.cosh(s), math.sinh(s)
    e_rho = math.sinh(rho) * (cs * F[0] + ss * F[1]) + cr * F[2]
    e_s = ss * F[0] + cs * F[1]
    return rho, s, math.atan2(_mdot(V, e_rho), _mdot(V, e_s))


@njit(cache=True)
def _wrap_phi(p):
    w = np.fmod(p, TWO_PI)
    if w < 0:
        w += TWO_PI
    if w >= TWO_PI:
        w -= TWO_PI
    return w


@njit(cache=True)
def _gap(p1, p2):
    d = abs(_wrap_phi(p1) - _wrap_phi(p2))
    return min(d, TWO_PI - d)


@njit(cache=True)
def _wrap_angle(a):
    w = np.fmod(a + math.pi, TWO_PI)
    if w <= 0:
        w += TWO_PI
    return w - math.pi


@njit(cache=True)
def _flat_min(rho, phi, alpha, dur, w0, fp):
    """Lower bound of the distance to ``w0`` along a band segment, and where it is attained."""
    lo, hi, h, S = fp[0], fp[1], fp[2], fp[8]
    s, c = math.sin(alpha), math.cos(alpha)
    da = abs(_wrap_angle(alpha - w0[2]))
    dr = rho - w0[0]
    dp = _wrap_angle(phi - w0[1]) * h  # in (-pi h, pi h]
    best = math.inf
    tb = 0.0
    span = dur * abs(c) / (TWO_PI * h) + 2.0
    kmax = int(span) + 1
    for k in range(-kmax, kmax + 1):
        q = dp + TWO_PI * h * k
        tau = -(dr * s + q * c)
        tau = min(max(tau, 0.0), dur)
        d2 = (dr + tau * s) ** 2 + (q + tau * c) ** 2
        if d2 < best:
            best, tb = d2, tau
    val = math.sqrt(best + da * da)
    if math.isfinite(hi):
        r_end = rho + dur * s
        alt = math.inf
        for r in (rho, r_end):
            a1 = min((hi - w0[0]) + (r - lo), (w0[0] - lo) + (hi - r)) + S
            alt = min(alt, a1)
        val = min(val, alt)
    return val, tb


@njit(cache=True)
def _flank_lb(rho, phi, w0, fp):
    hi, h, lo_c, hi_c, wc = fp[1], fp[2], fp[4], fp[5], fp[6]
    flat = math.sqrt((rho - w0[0]) ** 2 + (h * _gap(phi, w0[1])) ** 2)
    out = (hi_c - rho) if rho > hi else (rho - lo_c)
    return min(flat, out + wc)


@njit(cache=True)
def run(chart, rho, phi, alpha, X, V, T, w0, win_lo, win_hi, fp, SN, SM, LN, LF, REF, O):
    """Flow for time ``T``; returns ``(chart, rho, phi, alpha, X, V, residual_lb, t_best, code)``.

    ``code`` is 0 on success, -1 if the flank integrator failed and -2 if
    the side pairings cycled without progress.
    """
    lo, hi, h, a = fp[0], fp[1], fp[2], fp[3]
    lo_c, hi_c, wc, ell = fp[4], fp[5], fp[6], fp[7]
    torus = fp[9] > 0.5
    sw = math.sinh(wc)
    t = 0.0
    res = math.inf
    t_best = math.nan
    X = X.copy()
    V = V.copy()
    code = 0
    guard = 0
    while T - t > 1e-13 * max(1.0, T):
        guard += 1
        if guard > 10000000:
            code = -1
            break
        avail = T - t
        if chart == BAND:
            s = math.sin(alpha)
            if s > 0:
                t_edge = (hi - rho) / s if math.isfinite(hi) else math.inf
                edge = hi
            elif s < 0:
                t_edge = (lo - rho) / s
                edge = lo
            else:
                t_edge = math.inf
                edge = 0.0
            t_edge = max(t_edge, 0.0)
            dur = min(t_edge, avail)
            a0 = max(win_lo - t, 0.0)
            a1 = min(win_hi - t, dur)
            if a1 >= a0:
                r0 = rho + a0 * s
                p0 = phi + a0 * math.cos(alpha) / h
                val, tau = _flat_min(r0, p0, alpha, a1 - a0, w0, fp)
                if val < res:
                    res, t_best = val, t + a0 + tau
            phi = phi + dur * math.cos(alpha) / h
            rho = rho + dur * s
            t += dur
            if t_edge <= avail:
                rho = edge
                chart = FLANK
        elif chart == FLANK:
            s = math.sin(alpha)
            if (rho == hi and s < 0) or (rho == lo and s > 0):
                chart = BAND
                continue
            if (rho >= hi_c and s > 0) or (rho <= lo_c and s < 0):
                rho = hi_c if (rho > 0 and torus and abs(rho - hi_c) < abs(rho - lo_c)) else lo_c
                rp = rho - hi if rho >= hi else rho - lo
                sf = phi * ell / TWO_PI
                sf = sf - ell * math.floor(sf / ell + 0.5)
                X, V = _fermi_vectors(REF, rp, sf, alpha)
                X, V = _reduce(SN, SM, O, X, V)
                chart = HYP
                continue
            need = win_hi > t and win_lo < t + avail
            r = _flank.flank_run(rho, phi, alpha, avail, lo, hi, h, a, lo_c, hi_c,
                                 RTOL, ATOL, CTOL, need, True)
            dur, r1, p1, al1, fcode, nodes, drift, resid = r
            if fcode == _flank.FAILED:
                code = -1
                break
            if need:
                for j in range(nodes.shape[0] - 1):
                    ta, tb = t + nodes[j, 0], t + nodes[j + 1, 0]
                    if tb < win_lo or ta > win_hi:
                        continue
                    da = _flank_lb(nodes[j, 1], nodes[j, 2], w0, fp)
                    db = _flank_lb(nodes[j + 1, 1], nodes[j + 1, 2], w0, fp)
                    val = max(0.5 * (da + db - (tb - ta)), 0.0)
                    if val < res:
                        res, t_best = val, 0.5 * (ta + tb)
            t += dur
            rho, phi, alpha = r1, p1, al1
            if fcode == _flank.HIT_EDGE:
                chart = BAND
            elif fcode == _flank.HIT_OUTER:
                rho = hi_c if (rho > 0 and torus and abs(rho - hi_c) < abs(rho - lo_c)) else lo_c
                rp = rho - hi if rho >= hi else rho - lo
                sf = phi * ell / TWO_PI
                sf = sf - ell * math.floor(sf / ell + 0.5)
                X, V = _fermi_vectors(REF, rp, sf, alpha)
                X, V = _reduce(SN, SM, O, X, V)
                chart = HYP
        else:
            local = 0.0
            k_hit = -1
            zero_run = 0
            while True:
                rem = avail - local
                tc, k = _collar_entry(LN, sw, X, V, rem)
                ts, i = _side_exit(SN, X, V, tc)
                if i >= 0:
                    X, V = _geo(X, V, ts)
                    X, V = _renorm(SM[i] @ X, SM[i] @ V)
                    local += ts
                    zero_run = zero_run + 1 if ts == 0.0 else 0
                    if zero_run > 8:
                        code = -2
                        break
                    continue
                if k >= 0:
                    X, V = _geo(X, V, tc)
                    local += tc
                    k_hit = k
                else:
                    X, V = _geo(X, V, rem)
                    local = avail
                X, V = _renorm(X, V)
                break
            if code != 0:
                break
            if t + local >= win_lo and t <= win_hi:
                if wc < res:
                    res, t_best = wc, max(t, win_lo)
            t += local
            if k_hit >= 0:
                rp, sf, al = _fermi_coords(LF[k_hit], X, V)
                rr = hi + rp if rp > 0 else lo + rp
                phi = _wrap_phi(sf * TWO_PI / ell)
                alpha = al
                rho = hi_c if (torus and rr > 0) else lo_c
                chart = FLANK
    return chart, rho, phi, alpha, X, V, res, t_best, code
