"""Geodesic flow on the surface presets.

A trajectory is a list of arcs, each living in a single chart:

* ``FlatArc``: straight line in the band / flat end (exact);
* ``FlankArc``: numerically integrated arc in a warped flank;
* ``FunnelArc``: closed-form arc in a funnel of curvature ``-1/h^2``;
* ``HyperbolicArc``: closed-form arc in the Fuchsian chart, with the side
  pairings applied on the way (replayed exactly by ``state_at``).

Chart changes happen only at band edges and gluing circles; these are the
recorded :class:`CrossingEvent` s.  Negative durations run the reversed flow
(flip, flow, flip back).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _flank
from . import hyperbolic as hb
from .errors import ContractViolation, InvalidParameter, ReductionFailure, StiffnessFailure
from .surface import (TWO_PI, SurfaceModel, UnitTangent, check_domain, halfplane_from_vectors,
                      renormalize, vectors_from_halfplane, vectors_to_warped, warped_to_vectors,
                      wrap_phi)

__all__ = [
    "UnitTangent", "CrossingEvent", "TrajectorySegment", "Transit", "step_exact_flat",
    "step_exact_hyperbolic", "step_ode_warped", "integrate", "iter_arcs", "transit_report",
    "is_rank_one", "flip", "RANK_ONE", "RANK_TWO", "UNDETERMINED",
]

RTOL = 1e-12
ATOL = 1e-13
CTOL = 1e-10

BAND_ENTER = "band-edge-enter"
BAND_EXIT = "band-edge-exit"
GLUING = "gluing-circle"
ESCAPE = "escape-threshold"

RANK_ONE = "rank-one-certified"
RANK_TWO = "rank-two-certified"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class CrossingEvent:
    t: float
    kind: str
    side: int
    chart_from: str
    chart_to: str
    residual: float = 0.0

    def as_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "side": self.side, "from": self.chart_from,
                "to": self.chart_to, "residual": self.residual}


def flip(v: UnitTangent) -> UnitTangent:
    """Opposite unit vector at the same point."""
    return UnitTangent(v.chart, v.c1, v.c2, hb.wrap_angle(v.alpha + math.pi), v.t)


# -- arcs ----------------------------------------------------------------------

class Arc:
    kind = "arc"
    chart = ""
    t0 = 0.0
    duration = 0.0

    def state_at(self, tau: float) -> UnitTangent:
        raise NotImplementedError

    @property
    def start(self) -> UnitTangent:
        return self.state_at(0.0)

    @property
    def end(self) -> UnitTangent:
        return self.state_at(self.duration)

    def speed_defect(self) -> float:
        return 0.0


class FlatArc(Arc):
    kind = "flat"

    def __init__(self, chart, t0, duration, rho, phi, alpha, h):
        self.chart, self.t0, self.duration = chart, t0, duration
        self.rho, self.phi, self.alpha, self.h = rho, phi, alpha, h
        self.sin, self.cos = math.sin(alpha), math.cos(alpha)

    def coords(self, tau):
        """Unwrapped ``(rho, phi)`` at local time(s) ``tau``."""
        return self.rho + tau * self.sin, self.phi + tau * self.cos / self.h

    def state_at(self, tau):
        r, p = self.coords(tau)
        return UnitTangent(self.chart, r, wrap_phi(p), self.alpha, self.t0 + tau)

    def sample(self, taus):
        r, p = self.coords(np.asarray(taus))
        return r, np.mod(p, TWO_PI), np.full(len(r), self.alpha)


class FlankArc(Arc):
    kind = "ode"
    chart = "flank"

    def __init__(self, t0, nodes, warp, bounds, clairaut, drift):
        self.t0 = t0
        self.nodes = nodes
        self.duration = float(nodes[-1, 0])
        self.warp = warp
        self.bounds = bounds
        self.clairaut = clairaut
        self.drift = drift

    def _run(self, k, dt):
        w = self.warp
        r = _flank.flank_run(self.nodes[k, 1], self.nodes[k, 2], self.nodes[k, 3], dt, w.lo, w.hi,
                             w.h, w.flank_scale, self.bounds[0], self.bounds[1], RTOL, ATOL, CTOL,
                             False, False)
        return r[1], r[2], r[3]

    def state_at(self, tau):
        k = int(np.searchsorted(self.nodes[:, 0], tau, side="right")) - 1
        k = min(max(k, 0), len(self.nodes) - 1)
        dt = tau - self.nodes[k, 0]
        if dt <= 0.0:
            r, p, a = self.nodes[k, 1:]
        else:
            r, p, a = self._run(k, dt)
        return UnitTangent("flank", float(r), wrap_phi(p), hb.wrap_angle(a), self.t0 + tau)

    def sample(self, taus):
        taus = np.asarray(taus, dtype=float)
        out = np.empty((3, len(taus)))
        ks = np.clip(np.searchsorted(self.nodes[:, 0], taus, side="right") - 1, 0,
                     len(self.nodes) - 1)
        for n, (k, tau) in enumerate(zip(ks, taus)):
            dt = tau - self.nodes[k, 0]
            out[:, n] = self.nodes[k, 1:] if dt <= 0.0 else self._run(k, dt)
        return out[0], np.mod(out[1], TWO_PI), np.mod(out[2] + math.pi, TWO_PI) - math.pi

    def max_excess(self) -> float:
        w = self.warp
        r = self.nodes[:, 1]
        return float(max(np.max(r - w.hi), np.max(w.lo - r)))


def _logcosh(t):
    t = abs(t)
    return t + math.log1p(math.exp(-2 * t)) - math.log(2.0)


class FunnelArc(Arc):
    """Closed-form arc in a funnel ``f = h cosh((|rho| - b)/h)``.

    With ``x = (|rho| - b)/h`` and ``tau = t/h`` the metric is ``h^2`` times
    the hyperbolic Fermi metric about the band-edge circle, so
    ``sinh x(tau) = A cosh tau + B sinh tau``.
    """

    kind = "funnel"
    chart = "funnel"

    def __init__(self, t0, duration, rho, phi, alpha, warp):
        self.t0, self.duration = t0, duration
        self.warp = warp
        self.sigma = 1.0 if rho > 0 else -1.0
        self.b = warp.hi if rho > 0 else -warp.lo
        self.h = warp.h
        self.rho0, self.phi0, self.alpha0 = rho, phi, alpha
        x0 = (abs(rho) - self.b) / self.h
        ax = self.sigma * alpha
        self.sa, self.ca = math.sin(ax), math.cos(ax)
        self.x0 = x0
        self.A = math.sinh(x0)
        self.B = math.cosh(x0) * self.sa
        self.cx0 = math.cosh(x0)

    def local(self, tau):
        """``(x, s, alpha_x)`` at arc time ``tau`` (scaled internally by ``h``)."""
        u = tau / self.h
        if self.sa < 0 and self.x0 < 300 and u < 300:
            # incoming: rewrite around x0 - u to avoid cancelling e^x0 terms
            ca, sa, A = self.ca, self.sa, self.A
            k = ca * ca / (1.0 - sa)
            c = self.cx0 * k
            x = math.asinh(math.sinh(self.x0 - u) + c * math.sinh(u))
            ax = math.atan2(c * math.cosh(u) - math.cosh(self.x0 - u), self.cx0 * ca)
            X0 = math.cosh(self.x0 - u) + k * A * math.sinh(u)
            s = math.atanh(math.sinh(u) * ca / X0)
            return x, s, ax
        th = math.tanh(u)
        q = self.A + self.B * th
        if u < 300.0:
            x = math.asinh(math.cosh(u) * q)
        elif q == 0.0:
            x = 0.0
        else:
            lz = math.log(abs(q)) + _logcosh(u)
            x = math.copysign(lz + math.log1p(math.sqrt(1.0 + math.exp(-2 * lz))), q)
        sech = 1.0 / math.cosh(u) if u < 700 else 0.0
        num = th * self.ca
        den = self.cx0 + th * self.sa * self.A
        r = num / den if den > 0 else math.copysign(1.0, num)
        s = math.atanh(r) if abs(r) < 1 else math.copysign(40.0, num)
        ax = math.atan2(self.A * th + self.B, self.cx0 * self.ca * sech)
        return x, s, ax

    def state_at(self, tau):
        x, s, ax = self.local(tau)
        rho = self.sigma * (self.b + self.h * x)
        alpha = ax if self.sigma > 0 else -ax
        return UnitTangent("funnel", rho, wrap_phi(self.phi0 + s), hb.wrap_angle(alpha), self.t0 + tau)

    def sample(self, taus):
        loc = np.array([self.local(t) for t in taus]).reshape(-1, 3)
        rho = self.sigma * (self.b + self.h * loc[:, 0])
        alpha = loc[:, 2] if self.sigma > 0 else -loc[:, 2]
        return rho, np.mod(self.phi0 + loc[:, 1], TWO_PI), np.mod(alpha + math.pi, TWO_PI) - math.pi

    def inward_hit(self, x_c: float) -> float:
        """First local time with ``x`` decreasing through ``x_c``, or ``inf``."""
        best = math.inf
        for u in hb.solve_cosh_sinh(self.A, self.B, math.sinh(x_c)):
            if u > 1e-15 and self.A * math.sinh(u) + self.B * math.cosh(u) < 0:
                best = min(best, u * self.h)
        return best

    def turning_time(self) -> float:
        """Local time where ``x`` stops decreasing (``0`` if already outgoing, ``inf`` if never)."""
        if self.B >= 0:
            return 0.0
        r = -self.B / self.A
        return math.atanh(r) * self.h if r < 1 else math.inf


def _geo(X, V, t):
    ch, sh = math.cosh(t), math.sinh(t)
    return ch * X + sh * V, sh * X + ch * V


class HyperbolicArc(Arc):
    kind = "hyperbolic"
    chart = "hyperbolic"

    def __init__(self, t0, X, V, chart):
        self.t0 = t0
        self.X0, self.V0 = X, V
        self.hchart = chart
        self.crossings = []  # (local time, leg length, side index)
        self.duration = 0.0
        self._defect = 0.0

    def _replay(self, tau):
        X, V = self.X0, self.V0
        t_prev = 0.0
        ch = self.hchart
        for tk, leg, i in self.crossings:
            if tk > tau:
                break
            X, V = _geo(X, V, leg)
            M = ch._side_M[i]
            X, V = renormalize(M @ X, M @ V)
            t_prev = tk
        return _geo(X, V, tau - t_prev)

    def vectors_at(self, tau):
        return self._replay(tau)

    def state_at(self, tau):
        X, V = self._replay(tau)
        x, y, a = halfplane_from_vectors(X, V)
        return UnitTangent("hyperbolic", x, y, a, self.t0 + tau)

    def sample(self, taus):
        taus = np.asarray(taus, dtype=float)
        X, V = self.X0, self.V0
        t_prev = 0.0
        ch = self.hchart
        legs = []
        for tk, leg, i in self.crossings:
            legs.append((t_prev, tk, X, V))
            X, V = _geo(X, V, leg)
            M = ch._side_M[i]
            X, V = renormalize(M @ X, M @ V)
            t_prev = tk
        legs.append((t_prev, math.inf, X, V))
        out = np.empty((3, len(taus)))
        for a, b, X, V in legs:
            sel = (taus >= a) & (taus < b) if b < math.inf else taus >= a
            if legs[0][0] == a:
                sel |= taus < a
            if not np.any(sel):
                continue
            u = taus[sel] - a
            c, s = np.cosh(u), np.sinh(u)
            Xs = np.outer(X, c) + np.outer(V, s)
            Vs = np.outer(X, s) + np.outer(V, c)
            y = 1.0 / (Xs[0] - Xs[1])
            ydot = -(Vs[0] - Vs[1]) * y * y
            xdot = Vs[2] * y + Xs[2] * ydot
            out[:, sel] = Xs[2] * y, y, np.arctan2(-xdot, ydot)
        return out[0], out[1], out[2]

    def speed_defect(self):
        return self._defect


# -- internal state ----------------------------------------------------------

@dataclass
class _State:
    chart: str
    rho: float = 0.0
    phi: float = 0.0
    alpha: float = 0.0
    X: np.ndarray | None = None
    V: np.ndarray | None = None

    def public(self, t) -> UnitTangent:
        if self.chart == "hyperbolic":
            x, y, a = halfplane_from_vectors(self.X, self.V)
            return UnitTangent("hyperbolic", x, y, a, t)
        return UnitTangent(self.chart, self.rho, wrap_phi(self.phi), hb.wrap_angle(self.alpha), t)


def _internal(m: SurfaceModel, v: UnitTangent) -> _State:
    check_domain(m, v)
    if v.chart == "hyperbolic":
        ch = m.hyperbolic
        X, V = vectors_from_halfplane(v.c1, v.c2, v.alpha)
        if not ch.inside(X, 1e-9):
            X, V, _ = ch.reduce(X, V)
        depth, k = ch.collar_depth(X)
        if abs(depth) < ch.collar - 1e-12:
            # the point lies in a collar: hand it to the warped chart
            rho, phi, alpha = vectors_to_warped(m, X, V, k)
            return _State(m.warped_chart_of(rho), rho, phi, alpha)
        return _State("hyperbolic", X=X, V=V)
    rho = v.c1
    w = m.warp
    lo, hi = m.collar_bounds
    # clamp tiny excursions produced by rounding in a neighbouring chart
    if v.chart == "flank":
        rho = min(max(rho, lo), hi)
    elif v.chart == m.band_chart:
        rho = min(max(rho, w.lo), w.hi)
    return _State(v.chart, rho, v.c2, v.alpha)


# -- single-chart steps --------------------------------------------------------

def _flat_leg(m, st, t_avail):
    """Straight line in the band; returns (duration, hits_edge, edge)."""
    w = m.warp
    s = math.sin(st.alpha)
    if s > 0:
        edge = w.hi
        t_edge = (edge - st.rho) / s if math.isfinite(edge) else math.inf
    elif s < 0:
        edge = w.lo
        t_edge = (edge - st.rho) / s
    else:
        return t_avail, False, None
    t_edge = max(t_edge, 0.0)
    if t_edge <= t_avail:
        return t_edge, True, edge
    return t_avail, False, None


def step_exact_flat(m: SurfaceModel, v: UnitTangent, dt: float) -> UnitTangent:
    """Exact straight-line step inside the band (or flat end)."""
    if v.chart != m.band_chart:
        raise ContractViolation(f"step_exact_flat needs a {m.band_chart!r} state, got {v.chart!r}")
    w = m.warp
    r = v.c1 + dt * math.sin(v.alpha)
    if r > w.hi + 1e-12 or r < w.lo - 1e-12:
        raise ContractViolation("segment leaves the band; split it at the crossing event")
    phi = v.c2 + dt * math.cos(v.alpha) / m.h
    return UnitTangent(v.chart, r, wrap_phi(phi), v.alpha, v.t + dt)


def step_exact_hyperbolic(m, v: UnitTangent, dt: float, cap: int = 64) -> UnitTangent:
    """Closed-form step along the constant-curvature geodesic, reduced into the domain.

    ``m`` is a :class:`SurfaceModel` with a hyperbolic chart, or the chart
    itself.  The flattened collar is ignored: this is the flow of the
    unmodified hyperbolic metric.
    """
    ch = m.hyperbolic if isinstance(m, SurfaceModel) else m
    if ch is None or v.chart != "hyperbolic":
        raise ContractViolation("step_exact_hyperbolic needs a hyperbolic chart state")
    X, V = vectors_from_halfplane(v.c1, v.c2, v.alpha)
    if dt < 0:
        X, V = _geo(X, -V, -dt)
        V = -V
    else:
        X, V = _geo(X, V, dt)
    X, V = renormalize(X, V)
    X, V, _ = ch.reduce(X, V, cap)
    x, y, a = halfplane_from_vectors(X, V)
    return UnitTangent("hyperbolic", x, y, a, v.t + dt)


def step_ode_warped(m, v: UnitTangent, dt: float, tol: float = CTOL, record: bool = False):
    """Integrate the warped-chart geodesic equations for ``dt`` (band edges are not events).

    ``m`` is a :class:`SurfaceModel` or a :class:`~flatlab.surface.WarpFunction`.
    Returns the end state, or ``(end, FlankArc)`` with ``record=True``.
    """
    warp = m.warp if isinstance(m, SurfaceModel) else m
    if not v.is_warped:
        raise ContractViolation("step_ode_warped needs a warped chart state")
    sgn = 1.0 if dt >= 0 else -1.0
    alpha = v.alpha if dt >= 0 else v.alpha + math.pi
    res = _flank.flank_run(v.c1, v.c2, alpha, abs(dt), warp.lo, warp.hi, warp.h,
                           warp.flank_scale, -math.inf, math.inf, RTOL, ATOL, tol, record, False)
    t_used, r, p, a, code, nodes, drift, _ = res
    if code == _flank.FAILED:
        raise StiffnessFailure(f"step size underflow at t={t_used}")
    if sgn < 0:
        a += math.pi
    chart = v.chart
    out = UnitTangent(chart, r, wrap_phi(p), hb.wrap_angle(a), v.t + dt)
    if record:
        return out, FlankArc(v.t, nodes, warp, (-math.inf, math.inf), warp.clairaut(v.c1, alpha), drift)
    return out


# -- the integrator -------------------------------------------------------------

def iter_arcs(m: SurfaceModel, v: UnitTangent, T: float, events: list | None = None,
              result: dict | None = None, max_arcs: int | None = None,
              rtol: float = RTOL, ctol: float = CTOL):
    """Yield the arcs of the forward trajectory of ``v`` over ``[0, T]``.

    ``rtol`` and ``ctol`` are the flank integrator's error and Clairaut tolerances.

    Crossing events are appended to ``events`` when a list is given; the end
    state is stored under ``result["final"]`` once the generator is exhausted.
    """
    if T < 0:
        raise InvalidParameter("iter_arcs runs forward; use integrate for negative T")
    st = _internal(m, v)
    t = float(v.t)
    t_end = t + T
    w = m.warp
    lo_c, hi_c = m.collar_bounds
    ch = m.hyperbolic
    escaped = False
    n_arcs = 0
    stall = 0

    def emit(kind, side, a, b, res=0.0):
        if events is not None:
            events.append(CrossingEvent(t, kind, side, a, b, res))

    while t_end - t > 1e-13 * max(1.0, abs(t_end)):
        avail = t_end - t
        if max_arcs is not None and n_arcs >= max_arcs:
            break
        before = t
        if st.chart == m.band_chart:
            if st.chart == "end" and math.sin(st.alpha) > 0 and not escaped:
                emit(ESCAPE, 1, "end", "end")
                escaped = True
            dur, hit, edge = _flat_leg(m, st, avail)
            if dur > 0:
                arc = FlatArc(st.chart, t, dur, st.rho, st.phi, st.alpha, m.h)
                n_arcs += 1
                yield arc
                st.phi += dur * math.cos(st.alpha) / m.h
                st.rho = arc.rho + dur * arc.sin
                t += dur
            if hit:
                st.rho = edge
                emit(BAND_EXIT, 1 if math.sin(st.alpha) > 0 else -1, st.chart, "flank")
                st.chart = "flank"
        elif st.chart == "flank":
            s = math.sin(st.alpha)
            if (st.rho == w.hi and s < 0) or (st.rho == w.lo and s > 0):
                emit(BAND_ENTER, 1 if s > 0 else -1, "flank", m.band_chart)
                st.chart = m.band_chart
                continue
            if (st.rho >= hi_c and s > 0) or (st.rho <= lo_c and s < 0):
                _leave_collar(m, st, emit)
                continue
            res = _flank.flank_run(st.rho, st.phi, st.alpha, avail, w.lo, w.hi, w.h, w.flank_scale,
                                   lo_c, hi_c, rtol, ATOL * rtol / RTOL, ctol, True, True)
            dur, r, p, a, code, nodes, drift, resid = res
            if code == _flank.FAILED:
                raise StiffnessFailure(f"flank integration failed at t={t + dur}")
            arc = FlankArc(t, nodes, w, (lo_c, hi_c), w.clairaut(st.rho, st.alpha), drift)
            n_arcs += 1
            yield arc
            t += dur
            st.rho, st.phi, st.alpha = r, p, a
            if code == _flank.HIT_EDGE:
                emit(BAND_ENTER, 1 if math.sin(a) > 0 else -1, "flank", m.band_chart, resid)
                st.chart = m.band_chart
            elif code == _flank.HIT_OUTER:
                _leave_collar(m, st, emit, resid)
        elif st.chart == "funnel":
            probe = FunnelArc(t, 0.0, st.rho, st.phi, st.alpha, w)
            x_c = w.collar / w.h
            t_hit = probe.inward_hit(x_c)
            t_turn = probe.turning_time()
            if not escaped and t_turn < min(t_hit, avail):
                tt = t + t_turn
                if events is not None:
                    events.append(CrossingEvent(tt, ESCAPE, 1 if st.rho > 0 else -1, "funnel", "funnel"))
                escaped = True
            dur = min(t_hit, avail)
            probe.duration = dur
            n_arcs += 1
            yield probe
            end = probe.state_at(dur)
            t += dur
            st.rho, st.alpha = end.c1, end.alpha
            st.phi = st.phi + probe.local(dur)[1]
            if t_hit <= avail:
                st.rho = hi_c if st.rho > 0 else lo_c
                emit(GLUING, 1 if math.sin(st.alpha) > 0 else -1, "funnel", "flank")
                st.chart = "flank"
        else:
            arc = HyperbolicArc(t, st.X, st.V, ch)
            X, V = st.X, st.V
            local = 0.0
            k_hit = -1
            zero_run = 0
            while True:
                rem = avail - local
                tc, k = ch.collar_entry(X, V, rem)
                ts, i = ch.side_exit(X, V, tc)
                if i >= 0:
                    X, V = _geo(X, V, ts)
                    M = ch._side_M[i]
                    X, V = renormalize(M @ X, M @ V)
                    local += ts
                    arc.crossings.append((local, ts, i))
                    zero_run = zero_run + 1 if ts == 0.0 else 0
                    if zero_run > 8:
                        raise ReductionFailure("side pairings cycle without progress")
                    continue
                if k >= 0:
                    X, V = _geo(X, V, tc)
                    local += tc
                    k_hit = k
                else:
                    X, V = _geo(X, V, rem)
                    local = avail
                X, V = renormalize(X, V)
                break
            # replaying must give exactly these vectors: store the final leg's end
            arc.duration = local
            arc._defect = max(abs(hb.mdot(X, X) + 1), abs(hb.mdot(V, V) - 1), abs(hb.mdot(X, V)))
            if local > 0:
                n_arcs += 1
                yield arc
            t += local
            st.X, st.V = X, V
            if k_hit >= 0:
                rho, phi, alpha = vectors_to_warped(m, X, V, k_hit)
                resid = abs(abs(rho - (w.hi if rho > 0 and m.preset == "FlatCylinderTorus" else w.lo))
                            - w.collar)
                st.rho = hi_c if (m.preset == "FlatCylinderTorus" and rho > 0) else lo_c
                st.phi, st.alpha = phi, alpha
                st.chart = "flank"
                st.X = st.V = None
                emit(GLUING, 1 if math.sin(alpha) > 0 else -1, "hyperbolic", "flank", resid)
        if t == before:
            stall += 1
            if stall > 16:
                raise ContractViolation(f"no progress at t={t} in chart {st.chart!r}")
        else:
            stall = 0
    if result is not None:
        result["final"] = st.public(t_end)


def _leave_collar(m, st, emit, resid=0.0):
    lo_c, hi_c = m.collar_bounds
    st.rho = hi_c if st.rho > 0 and math.isfinite(hi_c) and abs(st.rho - hi_c) < abs(st.rho - lo_c) else lo_c
    side = 1 if math.sin(st.alpha) > 0 else -1
    if m.preset == "CylinderWithFunnels":
        emit(GLUING, side, "flank", "funnel", resid)
        st.chart = "funnel"
        return
    X, V = warped_to_vectors(m, st.rho, st.phi, st.alpha)
    st.X, st.V = X, V
    st.chart = "hyperbolic"
    emit(GLUING, side, "flank", "hyperbolic", resid)


@dataclass
class TrajectorySegment:
    """Orbit piece ``{g_t(v) : t in [0, T]}`` (or ``[T, 0]`` for negative ``T``)."""

    initial: UnitTangent
    duration: float
    arcs: list
    events: list
    final: UnitTangent
    model: SurfaceModel = field(repr=False, default=None)
    reversed: bool = False

    @property
    def end(self) -> UnitTangent:
        return self.final

    @property
    def clairaut(self) -> list:
        """``(arc index, p, drift)`` for every warped (ODE) arc."""
        return [(i, a.clairaut, a.drift) for i, a in enumerate(self.arcs) if a.kind == "ode"]

    def arc_at(self, t: float):
        tau = abs(t - self.initial.t)
        starts = [a.t0 for a in self.arcs]
        k = max(int(np.searchsorted(starts, self.initial.t + tau, side="right")) - 1, 0)
        return self.arcs[k], self.initial.t + tau - self.arcs[k].t0

    def state_at(self, t: float) -> UnitTangent:
        if not self.arcs:
            return self.initial
        arc, tau = self.arc_at(t)
        tau = min(max(tau, 0.0), arc.duration)
        s = arc.state_at(tau)
        if self.reversed:
            s = flip(s)
            s = UnitTangent(s.chart, s.c1, s.c2, s.alpha, 2 * self.initial.t - s.t)
        return s

    def junction_gap(self) -> float:
        """Largest position/direction mismatch between consecutive arcs (same chart only)."""
        gap = 0.0
        for a, b in zip(self.arcs, self.arcs[1:]):
            e, s = a.end, b.start
            if e.chart == s.chart:
                if e.chart == "hyperbolic":
                    X1, V1 = vectors_from_halfplane(e.c1, e.c2, e.alpha)
                    X2, V2 = vectors_from_halfplane(s.c1, s.c2, s.alpha)
                    gap = max(gap, float(np.max(np.abs(X1 - X2))), float(np.max(np.abs(V1 - V2))))
                else:
                    gap = max(gap, abs(e.c1 - s.c1), abs(hb.wrap_angle(e.c2 - s.c2)),
                              abs(hb.wrap_angle(e.alpha - s.alpha)))
        return gap

    def speed_defect(self) -> float:
        return max((a.speed_defect() for a in self.arcs), default=0.0)

    def to_csv(self, path, samples_per_arc: int = 0) -> int:
        """Write ``t, chart, coord1, coord2, alpha`` rows at arc junctions (plus optional samples)."""
        rows = 0
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "chart", "coord1", "coord2", "alpha"])
            for a in self.arcs:
                taus = np.linspace(0.0, a.duration, samples_per_arc + 2) if samples_per_arc else [0.0]
                for tau in taus:
                    s = a.state_at(float(tau))
                    if self.reversed:
                        s = flip(s)
                        s = UnitTangent(s.chart, s.c1, s.c2, s.alpha, 2 * self.initial.t - s.t)
                    wr.writerow([repr(s.t), s.chart, repr(s.c1), repr(s.c2), repr(s.alpha)])
                    rows += 1
            f = self.final
            wr.writerow([repr(f.t), f.chart, repr(f.c1), repr(f.c2), repr(f.alpha)])
            rows += 1
        return rows

    def events_json(self) -> str:
        return json.dumps([e.as_dict() for e in self.events], indent=1)


def integrate(m: SurfaceModel, v: UnitTangent, T: float, record: bool = True) -> TrajectorySegment:
    """Flow ``v`` for time ``T`` (negative ``T`` runs the reversed flow).

    With ``record=False`` only the events and the end state are kept.
    """
    T = float(T)
    if not math.isfinite(T):
        raise InvalidParameter("T must be finite")
    rev = T < 0
    start = flip(v) if rev else v
    events: list = []
    arcs = []
    result: dict = {}
    for a in iter_arcs(m, start, abs(T), events, result):
        if record:
            arcs.append(a)
    final = result["final"]
    final = UnitTangent(final.chart, final.c1, final.c2, final.alpha, v.t + T)
    if rev:
        final = flip(final)
        events = [CrossingEvent(2 * v.t - e.t, e.kind, -e.side, e.chart_to, e.chart_from,
                                e.residual) for e in reversed(events)]
        events = [CrossingEvent(e.t, _swap_kind(e.kind), e.side, e.chart_from, e.chart_to,
                                e.residual) for e in events]
    return TrajectorySegment(v, T, arcs, events, final, m, rev)


def _swap_kind(kind):
    return {BAND_ENTER: BAND_EXIT, BAND_EXIT: BAND_ENTER}.get(kind, kind)


# -- transits and rank ------------------------------------------------------------

@dataclass(frozen=True)
class Transit:
    enter: CrossingEvent
    exit: CrossingEvent | None
    sign: int
    duration: float
    theta: float
    open: bool = False


def transit_report(seg: TrajectorySegment) -> list:
    """Pair band-edge events into transits ``(enter, exit, sign, duration)``.

    ``theta`` is the angle with the vertical direction (``|sin theta| = |d rho/dt|``).
    A transit still inside the band at the end of the segment is flagged ``open``.
    """
    out = []
    pending = None
    for e in seg.events:
        if e.kind == BAND_ENTER:
            pending = e
        elif e.kind == BAND_EXIT and pending is not None:
            dur = e.t - pending.t
            st = seg.state_at(pending.t + 0.5 * dur)
            theta = math.asin(min(1.0, abs(math.sin(st.alpha))))
            out.append(Transit(pending, e, pending.side, dur, theta))
            pending = None
    if pending is not None:
        st = seg.state_at(seg.initial.t + seg.duration) if not seg.reversed else seg.final
        theta = math.asin(min(1.0, abs(math.sin(st.alpha))))
        out.append(Transit(pending, None, pending.side, seg.initial.t + seg.duration - pending.t,
                           theta, True))
    return out


def is_rank_one(m: SurfaceModel, v: UnitTangent, T: float) -> str:
    """Surface rank criterion on the orbit segment over ``[-T, T]``."""
    if not T > 0:
        raise InvalidParameter("horizon must be positive")
    if v.chart == m.band_chart and math.sin(v.alpha) == 0.0:
        return RANK_TWO
    for seg in (integrate(m, v, T), integrate(m, v, -T)):
        for a in seg.arcs:
            if a.duration <= 0:
                continue
            if a.kind in ("hyperbolic", "funnel"):
                return RANK_ONE
            if a.kind == "ode" and a.max_excess() > 0.0:
                return RANK_ONE
    return UNDETERMINED
