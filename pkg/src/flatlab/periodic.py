"""Closed geodesics and shadowing searches.

Three sources of closed orbits: the vertical families of the flat band
(closed form), axes of words in the Fuchsian group (closed form in the
unmodified metric) and a shooting solver for the closure equation under the
modified metric.  The shadowing search looks for a closed orbit near a
pseudo-orbit; across the band it first checks the transit-sign argument
that rules closure out, then measures how far the search stays from closing.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _fastflow
from . import hyperbolic as hb
from .errors import ContractViolation, InvalidParameter, NotApplicable, RefineFailure
from .flow import (BAND_ENTER, BAND_EXIT, RANK_ONE, RANK_TWO, CrossingEvent, FlatArc, TrajectorySegment, Transit, _internal,
                   integrate, is_rank_one, iter_arcs)
from .measure import sasaki_distance
from .surface import (TWO_PI, CylinderSpec, SurfaceModel, UnitTangent, halfplane_from_vectors,
                      renormalize, vectors_from_halfplane, warped_to_vectors, wrap_phi)

__all__ = [
    "ClosedGeodesic", "VerticalFamily", "ShadowingQuery", "ShadowingResult",
    "ObstructionCertificate", "vertical_orbit", "vertical_family", "axis_from_word",
    "axis_distance_to_cut", "refine_periodic", "closure_residual", "chart_distance",
    "transit_sign_certificate", "endpoint_transit", "harvest_recurrence",
    "control_pseudo_orbit", "shadowing_search", "section_residuals", "catalog_json",
]

CLOSED_TOL = 1e-8
_J = np.array([-1.0, 1.0, 1.0])


@dataclass
class ClosedGeodesic:
    """Periodic orbit: ``initial`` returns to itself after ``period``.

    ``residual`` is the closure gap after one period (Sasaki distance,
    chart-wise).  ``guess`` marks orbits computed in the unmodified metric
    whose axis meets the flattened region; their residual is not certified.
    """

    initial: UnitTangent
    period: float
    residual: float
    rank: str
    label: str = ""
    word: str | None = None
    guess: bool = False
    model: SurfaceModel | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.period > 0:
            raise ContractViolation(f"period must be positive, got {self.period}")
        if not self.guess and not self.residual < CLOSED_TOL:
            raise ContractViolation(f"closure residual {self.residual} is not below {CLOSED_TOL}")

    def as_dict(self) -> dict:
        return {"label": self.label, "word": self.word, "period": self.period,
                "residual": self.residual, "rank": self.rank, "guess": self.guess,
                "initial": self.initial.as_dict()}


def catalog_json(orbits, path=None) -> str:
    """Periodic-orbit catalogue (id, period, residual, rank tag) as JSON."""
    text = json.dumps([c.as_dict() for c in orbits], indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# -- vertical families ------------------------------------------------------------

@dataclass
class VerticalFamily:
    members: list
    designated: int
    boundary: list
    spec: CylinderSpec | None = None

    @property
    def designated_orbit(self) -> ClosedGeodesic:
        return self.members[self.designated]


def vertical_orbit(m: SurfaceModel, rho: float, upward: bool = True, label: str = "") -> ClosedGeodesic:
    """Vertical band orbit at ``rho``: period ``2 pi h`` exactly, residual 0."""
    w = m.warp
    if not (w.lo <= rho <= w.hi):
        raise InvalidParameter(f"rho={rho} is outside the band")
    v = UnitTangent(m.band_chart, float(rho), 0.0, 0.0 if upward else math.pi)
    return ClosedGeodesic(v, TWO_PI * m.h, 0.0, RANK_TWO, label or f"vertical rho={rho:.6g}",
                          model=m, meta={"vertical": True})


def vertical_family(m: SurfaceModel, spec: CylinderSpec | None = None, n: int = 9,
                    depth: float = 2.0) -> VerticalFamily:
    """Vertical closed geodesics across the band, the designated one at distance ``d`` from the edge.

    For a flat end (no upper edge) the grid covers ``[lo, lo + depth]``.
    """
    w = m.warp
    if n < 2:
        raise InvalidParameter("need at least two family members")
    hi = w.hi if math.isfinite(w.hi) else w.lo + depth
    if spec is None:
        rho_A = 0.5 * (w.lo + hi) if math.isfinite(w.hi) else w.lo + 1.0
    else:
        if math.isfinite(w.hi) and (abs(spec.l - m.l) > 1e-12 or abs(spec.h - m.h) > 1e-12):
            raise InvalidParameter("cylinder spec does not match the model")
        rho_A = w.lo + spec.d
    rhos = sorted(set(np.linspace(w.lo, hi, n).tolist()) | {rho_A})
    members = [vertical_orbit(m, r) for r in rhos]
    designated = rhos.index(rho_A)
    members[designated].label += " (designated)"
    boundary = [i for i, r in enumerate(rhos) if r == w.lo or r == w.hi]
    return VerticalFamily(members, designated, boundary, spec)


# -- chart-wise Sasaki distance -----------------------------------------------------

def _vectors(m: SurfaceModel, v: UnitTangent):
    """Hyperboloid vectors of a state in the Fuchsian chart or a collar flank, else None."""
    if m.hyperbolic is None:
        return None
    if v.chart == "hyperbolic":
        X, V = vectors_from_halfplane(v.c1, v.c2, v.alpha)
        if not m.hyperbolic.inside(X, 1e-9):
            X, V, _ = m.hyperbolic.reduce(X, V)
        return X, V
    if v.chart == "flank":
        return warped_to_vectors(m, v.c1, v.c2, v.alpha)
    return None


def _transport(p, q, v):
    """Parallel transport of ``v`` from ``p`` to ``q`` along the hyperboloid geodesic."""
    return v + hb.mdot(q, v) / (1.0 - hb.mdot(p, q)) * (p + q)


def _representatives(ch):
    Ms = [np.eye(3)] + list(ch._side_M)
    return Ms + [a @ b for a in ch._side_M for b in ch._side_M]


def _nearest_image(m, X1, X2, V2):
    ch = m.hyperbolic
    best = None
    for g in _representatives(ch):
        Y = g @ X2
        c = -hb.mdot(X1, Y)
        if best is None or c < best[0]:
            best = (c, Y, g @ V2)
    _, Y, W = best
    d = X1 - Y
    # chordal form keeps full precision for nearby points
    return 2.0 * math.asinh(0.5 * math.sqrt(max(hb.mdot(d, d), 0.0))), Y, W


def _tangent_angle(X, V1, V2):
    d = V1 - V2
    n = math.sqrt(max(hb.mdot(d, d), 0.0))
    return 2.0 * math.asin(min(1.0, 0.5 * n))


def chart_distance(m: SurfaceModel, v1: UnitTangent, v2: UnitTangent) -> float:
    """Sasaki distance: exact in the band, hyperbolic where both states lift, chart-wise otherwise.

    Hyperbolic pairs use the nearest image under the side pairings and the
    angle after parallel transport.  Mixed band/Fuchsian pairs fall back to
    the certified lower bound of :func:`flatlab.measure.sasaki_distance`.
    """
    if v1.chart == m.band_chart and v2.chart == m.band_chart:
        return sasaki_distance(m, v1, v2).value
    a, b = _vectors(m, v1), _vectors(m, v2)
    if a is not None and b is not None:
        X1, V1 = a
        dH, Y, W = _nearest_image(m, X1, *b)
        return math.hypot(dH, _tangent_angle(X1, V1, _transport(Y, X1, W)))
    if v1.is_warped and v2.is_warped:
        f = max(m.warp.f(v1.c1), m.warp.f(v2.c1))
        gap = abs(hb.wrap_angle(v1.c2 - v2.c2))
        return math.sqrt((v1.c1 - v2.c1) ** 2 + (f * gap) ** 2
                         + hb.wrap_angle(v1.alpha - v2.alpha) ** 2)
    return sasaki_distance(m, v1, v2).value


# -- axes of words ------------------------------------------------------------------

def _axis_frame(W):
    rep, att = hb.fixed_points(W)
    return hb.FermiFrame.from_endpoints(rep, att)


def _meets_cut(ch, frame, length: float, step: float = 0.05):
    """Does the axis (one period from the frame origin) meet a lift of the cut geodesic?

    Walks the axis in steps, reducing into the domain as it goes and
    carrying the axis normal along.  Returns ``(meets, coincides)``.
    """
    n = max(int(math.ceil(length / step)), 8)
    h = length / n
    X, V = frame.vectors(0.0, 0.0, 0.0)
    nW = frame.n
    for _ in range(n + 1):
        X, V, G = ch.reduce(X, V)
        nW = G @ nW
        nW = nW / math.sqrt(hb.mdot(nW, nW))
        # pull back onto the axis so rounding does not grow along the flow
        X, V = renormalize(X - hb.mdot(X, nW) * nW, V - hb.mdot(V, nW) * nW)
        depth, k = ch.collar_depth(X)
        if abs(depth) <= ch.collar + h:
            nk = ch.lifts[k].n
            c = abs(hb.mdot(nW, nk))
            if c <= 1.0 + 1e-12:
                return True, bool(abs(c - 1.0) < 1e-12 and abs(hb.mdot(X, nk)) < 1e-9)
        X, V = renormalize(math.cosh(h) * X + math.sinh(h) * V, math.sinh(h) * X + math.cosh(h) * V)
    return False, False


_EXPAND = {"C": "ABab", "c": "BAba"}


def _cyclic_reduce(word: str) -> str:
    """Free and cyclic reduction over ``A, B, a, b`` (``C`` and ``c`` expanded)."""
    out = []
    for ch in "".join(_EXPAND.get(x, x) for x in word.replace(" ", "")):
        if out and out[-1] == ch.swapcase():
            out.pop()
        else:
            out.append(ch)
    i, j = 0, len(out) - 1
    while i < j and out[i] == out[j].swapcase():
        i, j = i + 1, j - 1
    return "".join(out[i:j + 1])


def _cut_power(word: str, cut_word: str) -> int:
    """Signed ``k`` if ``word`` is conjugate to ``cut^k``, else 0."""
    w = _cyclic_reduce(word)
    for sign, c in ((1, _cyclic_reduce(cut_word)), (-1, _cyclic_reduce(cut_word)[::-1].swapcase())):
        if c and len(w) % len(c) == 0:
            k = len(w) // len(c)
            if w in (c * k) * 2:
                return sign * k
    return 0


def _fixed_point_residual(W) -> float:
    """Backward error of the computed fixed points of ``W`` (scale free)."""
    (a, b), (c, d) = np.asarray(W, dtype=float)
    scale = float(np.max(np.abs(W)))
    out = 0.0
    for p in hb.fixed_points(W):
        if math.isinf(p):
            out = max(out, abs(c) / scale)
        else:
            q = max(1.0, abs(p))
            out = max(out, abs(c * p * p + (d - a) * p - b) / (scale * q * q))
    return float(out)


def axis_from_word(m: SurfaceModel, word: str) -> ClosedGeodesic:
    """Axis of a Fuchsian word with its translation length ``2 acosh(|tr| / 2)``.

    The initial vector is the foot of the perpendicular from the domain's
    centre, reduced into the domain.  The residual is the algebraic closure
    gap between flowing for one length and acting by the word.  Axes that
    meet a lift of the cut geodesic are returned with ``guess=True``.
    """
    ch = m.hyperbolic
    if ch is None:
        raise NotApplicable(f"{m.preset} has no Fuchsian chart")
    W = ch.word_matrix(word)
    length = hb.translation_length(W)
    frame = _axis_frame(W)
    _, s0, _ = frame.coords(ch.origin, frame.e1)
    frame = frame.shifted(s0)
    X, V = frame.vectors(0.0, 0.0, 0.0)
    residual = _fixed_point_residual(W)
    meta = {"trace": hb.trace(W)}
    if ch.core_side:
        # the cut bounds the convex core, so only its own powers reach it
        k = _cut_power(word, ch.cut_word)
        meets = coincides = k != 0
        orientation = 1 if k > 0 else -1
    else:
        meets, coincides = _meets_cut(ch, frame, length)
        orientation = 1 if hb.mdot(frame.e1, ch.reference.e1) > 0 else -1
    meta.update(meets_cut=meets, coincides_with_cut=coincides)
    if coincides:
        # the cut lies in the flat part: start on its vertical geodesic directly
        meta["multiplicity"] = int(round(length / ch.cut_length))
        meta["orientation"] = orientation
        w = m.warp
        rho = 0.5 * (w.lo + w.hi) if math.isfinite(w.hi) else w.lo
        v = vertical_orbit(m, rho, orientation > 0).initial
    else:
        Xr, Vr, _ = ch.reduce(X, V)
        v = _internal(m, UnitTangent("hyperbolic", *halfplane_from_vectors(Xr, Vr))).public(0.0)
    rank = RANK_ONE if not meets else "undetermined"
    return ClosedGeodesic(v, length, residual, rank, f"axis {word}", word, meets, m, meta)


def axis_distance_to_cut(m: SurfaceModel, word: str) -> float:
    """Hyperbolic distance between the axis of ``word`` and the reference lift of the cut geodesic."""
    ch = m.hyperbolic
    frame = _axis_frame(ch.word_matrix(word))
    c = abs(hb.mdot(frame.n, ch.reference.n))
    return math.acosh(c) if c > 1.0 else 0.0


# -- shooting ---------------------------------------------------------------------------

def _offset(m: SurfaceModel, v: UnitTangent, u: float, beta: float) -> UnitTangent:
    """Move ``u`` along the normal of ``v`` and turn by ``beta``."""
    if v.chart == "hyperbolic":
        X, V = vectors_from_halfplane(v.c1, v.c2, v.alpha)
        N = _normal(X, V)
        cu, su = math.cosh(u), math.sinh(u)
        X1 = cu * X + su * N
        N1 = su * X + cu * N
        X1, V1 = renormalize(X1, math.cos(beta) * V + math.sin(beta) * N1)
        return UnitTangent("hyperbolic", *halfplane_from_vectors(X1, V1))
    f = m.warp.f(v.c1)
    rho = v.c1 + u * math.cos(v.alpha)
    return _internal(m, UnitTangent(m.warped_chart_of(rho), rho,
                                    wrap_phi(v.c2 - u * math.sin(v.alpha) / f),
                                    hb.wrap_angle(v.alpha + beta))).public(0.0)


def _normal(X, V):
    cr = np.cross(X, V)
    n = np.array([-cr[0], cr[1], cr[2]])
    return n / math.sqrt(hb.mdot(n, n))


def _closure_vector(m: SurfaceModel, end: UnitTangent, start: UnitTangent) -> np.ndarray:
    """Signed closure gap of ``end`` against ``start`` in the frame of ``start``."""
    a, b = _vectors(m, end), _vectors(m, start)
    if a is not None and b is not None:
        Xb, Vb = b
        _, Y, W = _nearest_image(m, Xb, *a)
        N = _normal(Xb, Vb)
        dX = Y - Xb
        return np.array([hb.mdot(dX, Vb), hb.mdot(dX, N), hb.mdot(W - Vb, N)])
    if end.is_warped and start.is_warped and (end.chart == m.band_chart) == (start.chart == m.band_chart):
        f = m.warp.f(start.c1)
        return np.array([end.c1 - start.c1, f * hb.wrap_angle(end.c2 - start.c2),
                         hb.wrap_angle(end.alpha - start.alpha)])
    return np.full(3, 10.0)


def _shoot(m: SurfaceModel, v: UnitTangent, T: float, tol: float, max_iter: int = 50):
    """Newton iteration on ``(u, beta, T)`` for ``g_T(w) = w``; returns ``(w, T, residual, iterations)``."""
    def F(z):
        w = _offset(m, v, z[0], z[1])
        end = integrate(m, w, z[2], record=False).final
        return _closure_vector(m, end, w), w, end

    z = np.array([0.0, 0.0, float(T)])
    r, w, end = F(z)
    h = 1e-7
    for it in range(max_iter):
        res = chart_distance(m, end, w)
        if res < tol:
            return w, float(z[2]), res, it
        J = np.empty((3, 3))
        for j in range(3):
            dz = np.zeros(3)
            dz[j] = h
            J[:, j] = (F(z + dz)[0] - F(z - dz)[0]) / (2 * h)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        norm0 = float(np.linalg.norm(r))
        while lam > 1e-4:
            zn = z + lam * step
            rn, wn, en = F(zn)
            if np.linalg.norm(rn) < norm0:
                break
            lam *= 0.5
        else:
            raise RefineFailure(f"closure solver stalled at residual {res:.3g}")
        z, r, w, end = zn, rn, wn, en
    res = chart_distance(m, end, w)
    if res < tol:
        return w, float(z[2]), res, max_iter
    raise RefineFailure(f"no convergence in {max_iter} iterations (residual {res:.3g})")


def closure_residual(m: SurfaceModel, v: UnitTangent, T: float) -> float:
    """Sasaki gap between ``g_T(v)`` and ``v``."""
    return chart_distance(m, integrate(m, v, T, record=False).final, v)


def refine_periodic(m: SurfaceModel, guess: ClosedGeodesic, tol: float = 1e-9,
                    max_iter: int = 50) -> ClosedGeodesic:
    """Solve the closure equation under the modified metric, starting from ``guess``.

    Vertical orbits and axes that avoid the flattened region are already
    exact and come back unchanged.  An axis equal to the cut geodesic (or a
    power of it) becomes the designated vertical orbit of the band.
    """
    if guess.meta.get("vertical"):
        return guess
    if guess.meta.get("coincides_with_cut"):
        k = guess.meta.get("multiplicity", 1)
        v = guess.initial
        out = vertical_orbit(m, v.c1, math.cos(v.alpha) > 0, f"axis {guess.word} (band)")
        out.period = k * out.period
        out.word = guess.word
        return out
    if not guess.guess and guess.residual < tol:
        return guess
    r0 = closure_residual(m, guess.initial, guess.period)
    if r0 < tol:
        return ClosedGeodesic(guess.initial, guess.period, r0, is_rank_one(m, guess.initial, guess.period),
                              guess.label, guess.word, False, m, dict(guess.meta))
    if r0 > 0.1:
        raise RefineFailure(f"guess residual {r0:.3g} is too large for the local solver")
    w, T, res, it = _shoot(m, guess.initial, guess.period, tol, max_iter)
    if abs(T - guess.period) > 0.1 * guess.period:
        raise RefineFailure(f"period moved from {guess.period:.6g} to {T:.6g}")
    meta = dict(guess.meta, iterations=it, start_residual=r0)
    return ClosedGeodesic(w, T, res, is_rank_one(m, w, T), guess.label, guess.word, False, m, meta)


# -- transit signs ------------------------------------------------------------------

@dataclass(frozen=True)
class ObstructionCertificate:
    """Transit-sign clash ruling out periodic closure of a pseudo-orbit.

    ``s1`` is the sign of the band transit through the start of the
    pseudo-orbit, ``s2`` the sign of the transit through its end.  A periodic
    vector near both would have to cross the band with both signs at once.
    """

    s1: int
    s2: int
    theta: float | None = None
    eps: float | None = None
    verdict: str = "closure-obstructed"
    enter_times: tuple = ()

    def __post_init__(self):
        if self.s1 == self.s2:
            raise ContractViolation("a certificate needs opposite transit signs")

    def as_dict(self) -> dict:
        return {"s1": self.s1, "s2": self.s2, "theta": self.theta, "eps": self.eps,
                "verdict": self.verdict, "enter_times": list(self.enter_times)}


def transit_sign_certificate(tr1: Transit, tr2: Transit, theta: float | None = None,
                             eps: float | None = None) -> ObstructionCertificate | None:
    """Certificate when the two transits cross the band in opposite directions, else None."""
    for tr in (tr1, tr2):
        if tr is None or tr.open or tr.exit is None:
            raise NotApplicable("both transits must cross the full band")
    if tr1.sign == tr2.sign:
        return None
    return ObstructionCertificate(tr1.sign, tr2.sign, theta, eps,
                                  enter_times=(tr1.enter.t, tr2.enter.t))


def endpoint_transit(m: SurfaceModel, v: UnitTangent) -> Transit:
    """The full band transit through a band vector, from straight-line geometry."""
    if v.chart != m.band_chart:
        raise NotApplicable("vector is not in the band")
    s = math.sin(v.alpha)
    w = m.warp
    if s == 0.0:
        raise NotApplicable("vertical vector: no transit")
    enter_edge, exit_edge = (w.lo, w.hi) if s > 0 else (w.hi, w.lo)
    if not (math.isfinite(enter_edge) and math.isfinite(exit_edge)):
        raise NotApplicable("transit does not cross the full band")
    sign = 1 if s > 0 else -1
    t_in = v.t + (enter_edge - v.c1) / s
    t_out = v.t + (exit_edge - v.c1) / s
    enter = CrossingEvent(t_in, BAND_ENTER, sign, "flank", m.band_chart)
    leave = CrossingEvent(t_out, BAND_EXIT, sign, m.band_chart, "flank")
    return Transit(enter, leave, sign, t_out - t_in, math.asin(min(1.0, abs(s))))


# -- pseudo-orbits --------------------------------------------------------------------

def harvest_recurrence(m: SurfaceModel, v: UnitTangent, budget: float, eps: float, theta: float,
                       T0: float = 10.0, rho_A: float = 0.0):
    """Search one orbit for a visit to ``U2`` followed by a visit to ``U1`` at least ``T0`` later.

    ``U2`` holds band vectors with ``rho - rho_A`` in ``(0, eps)`` and angle
    in ``(0, theta)``; ``U1`` the mirror image.  The shortest such recurrence
    is returned as a :class:`TrajectorySegment` cut out of the orbit of
    ``v`` (starting at ``rho_A + eps / 2``, ending at ``rho_A - eps / 2``),
    or None.  Re-integrating from the cut point would not reproduce the
    orbit piece: errors grow exponentially over the recurrence time.
    """
    def visits(T):
        for a in iter_arcs(m, v, T):
            if isinstance(a, FlatArc) and a.sin != 0.0:
                if 0.0 < a.alpha < theta:
                    tau = (rho_A + 0.5 * eps - a.rho) / a.sin
                    if 0.0 <= tau <= a.duration:
                        yield 2, a.t0 + tau, a
                elif -theta < a.alpha < 0.0:
                    tau = (rho_A - 0.5 * eps - a.rho) / a.sin
                    if 0.0 <= tau <= a.duration:
                        yield 1, a.t0 + tau, a
            yield 0, a.t0, a

    u2 = []
    best = None
    for kind, t, _ in visits(budget):
        if kind == 2:
            u2.append(t)
        elif kind == 1:
            k = int(np.searchsorted(u2, t - T0, side="right"))
            if k > 0 and (best is None or t - u2[k - 1] < best[1] - best[0]):
                best = (u2[k - 1], t)
    if best is None:
        return None
    t1, t2 = best
    # replay up to t2 (same adaptive steps) and keep the arcs of [t1, t2]
    arcs, start, end = [], None, None
    for kind, t, a in visits(t2 + 1.0):
        if kind == 2 and t == t1:
            start = a.state_at(t - a.t0)
        elif kind == 1 and t == t2:
            end = a.state_at(t - a.t0)
        elif kind == 0 and a.t0 <= t2 and a.t0 + a.duration >= t1:
            arcs.append(a)
        if end is not None:
            break
    if start is None or end is None:
        raise ContractViolation("orbit replay did not reproduce the recurrence")
    return TrajectorySegment(start, t2 - t1, arcs, [], end, m)


# -- shadowing search -------------------------------------------------------------------

@dataclass
class ShadowingQuery:
    """Pseudo-orbit ``{g_t(w) : t in [0, T]}`` and the closing-lemma parameters.

    ``eps`` is the shadowing tolerance, ``T0`` the minimal period and
    ``radius`` the size of the search neighbourhood around the pseudo-orbit.
    """

    pseudo_orbit: object
    eps: float
    T0: float = 1.0
    radius: float = 0.05
    grid: int = 200
    theta: float | None = None
    region_eps: float | None = None

    def __post_init__(self):
        if not (self.eps > 0 and self.radius > 0 and self.T0 > 0):
            raise InvalidParameter("eps, radius and T0 must be positive")
        if self.pseudo_orbit.duration < self.T0:
            raise InvalidParameter("pseudo-orbit is shorter than the minimal period")
        if self.grid < 2:
            raise InvalidParameter("grid needs at least two points per axis")

    @property
    def start(self) -> UnitTangent:
        return self.pseudo_orbit.initial

    @property
    def period(self) -> float:
        return self.pseudo_orbit.duration

    def gap(self, m: SurfaceModel) -> float:
        return chart_distance(m, self.pseudo_orbit.final, self.start)


@dataclass
class ShadowingResult:
    """Outcome of :func:`shadowing_search`.

    ``kind`` is ``closed`` (``closed`` holds the orbit), ``obstructed``
    (``certificate`` holds the sign clash and ``min_residual`` the search
    floor) or ``best-residual``.
    """

    kind: str
    gap: float
    closed: ClosedGeodesic | None = None
    certificate: ObstructionCertificate | None = None
    min_residual: float = math.nan
    shadow_distance: float = math.nan
    argmin: dict = field(default_factory=dict)
    evaluations: int = 0
    failures: int = 0
    grid: tuple | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "gap": self.gap,
                "closed": None if self.closed is None else self.closed.as_dict(),
                "certificate": None if self.certificate is None else self.certificate.as_dict(),
                "min_residual": self.min_residual, "shadow_distance": self.shadow_distance,
                "argmin": self.argmin, "evaluations": self.evaluations, "failures": self.failures}


def _kernel_state(chart, out, t):
    code_chart, rho, phi, alpha, X, V = out[:6]
    if code_chart == _fastflow.HYP:
        return UnitTangent("hyperbolic", *halfplane_from_vectors(X, V), t)
    name = "band" if code_chart == _fastflow.BAND else "flank"
    return UnitTangent(chart if name == "band" else name, rho, wrap_phi(phi), hb.wrap_angle(alpha), t)


class _Defect:
    """Closing-lemma defect of candidates ``w0`` on the band section through the pseudo-orbit start.

    ``value = max(min_{l in [T-1, T+1]} d(g_l w0, w0), d(g_T w0, g_T w))``:
    the closure gap of ``w0`` and how far it has drifted from the
    pseudo-orbit at its end.  Both terms are certified lower bounds, so a
    genuine shadowing orbit would have a value below ``eps``.
    """

    def __init__(self, m: SurfaceModel, q: ShadowingQuery):
        self.m, self.T = m, q.period
        self.rho = q.start.c1
        self.target = q.pseudo_orbit.final
        self.packed = _fastflow.pack(m)
        self.calls = 0
        self.failures = 0

    def __call__(self, phi: float, alpha: float):
        """Return ``(value, closure, drift, period_of_best_closure)``."""
        self.calls += 1
        T, z = self.T, np.zeros(3)
        w0 = np.array([self.rho, phi, alpha])
        r1 = _fastflow.run(_fastflow.BAND, self.rho, phi, alpha, z, z, T, w0, T - 1.0, T, *self.packed)
        if r1[8] != 0:
            self.failures += 1
            return math.inf, math.inf, math.inf, math.nan
        r2 = _fastflow.run(r1[0], r1[1], r1[2], r1[3], r1[4], r1[5], 1.0, w0, 0.0, 1.0, *self.packed)
        if r2[8] != 0:
            self.failures += 1
            return math.inf, math.inf, math.inf, math.nan
        closure, t_best = (r1[6], r1[7]) if r1[6] <= r2[6] else (r2[6], T + r2[7])
        drift = sasaki_distance(self.m, _kernel_state(self.m.band_chart, r1, T), self.target).value
        return max(closure, drift), closure, drift, t_best


def section_residuals(m: SurfaceModel, q: ShadowingQuery, workers: int = 1):
    """Defect grid over ``h |phi - phi_w| <= radius``, ``|alpha - alpha_w| <= radius``.

    Returns ``(phis, alphas, values, defect)`` where ``values[i, j]`` is
    ``(value, closure, drift, period)`` of :class:`_Defect`.
    """
    w = q.start
    n = q.grid
    phis = w.c2 + np.linspace(-q.radius, q.radius, n) / m.h
    alphas = w.alpha + np.linspace(-q.radius, q.radius, n)
    k = max(int(workers), 1)
    if k > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(k) as ex:
            parts = list(ex.map(_grid_rows, [(m, q, phis[i::k], alphas) for i in range(k)]))
    else:
        parts = [_grid_rows((m, q, phis, alphas))]
    values = np.empty((n, n, 4))
    calls = fails = 0
    for i, (part, c, f) in enumerate(parts):
        values[i::k] = part
        calls += c
        fails += f
    return phis, alphas, values, (calls, fails)


def _grid_rows(args):
    m, q, phis, alphas = args
    defect = _Defect(m, q)
    out = np.array([[defect(float(p), float(a)) for a in alphas] for p in phis]).reshape(
        len(phis), len(alphas), 4)
    return out, defect.calls, defect.failures


def _grid_search(m, q: ShadowingQuery, workers: int = 1):
    """Grid plus Nelder-Mead polish of the defect; ties go to the smaller period."""
    phis, alphas, vals, (calls, fails) = section_residuals(m, q, workers)
    cands = [(float(vals[i, j, 0]), float(vals[i, j, 3]), float(phis[i]), float(alphas[j]),
              float(vals[i, j, 1]), float(vals[i, j, 2]))
             for i in range(len(phis)) for j in range(len(alphas)) if math.isfinite(vals[i, j, 0])]
    cands.sort(key=lambda c: (c[0], c[1]))
    defect = _Defect(m, q)
    lo = np.array([phis[0], alphas[0]])
    hi = np.array([phis[-1], alphas[-1]])
    polished = []

    def f(x):
        x = np.clip(x, lo, hi)
        val, clo, dr, tb = defect(float(x[0]), float(x[1]))
        polished.append((val, tb, float(x[0]), float(x[1]), clo, dr))
        return val

    for c in cands[:3]:
        minimize(f, np.array(c[2:4]), method="Nelder-Mead",
                 options={"maxiter": 200, "xatol": 1e-9, "fatol": 1e-12})
    allc = cands + [c for c in polished if math.isfinite(c[0])]
    val, t_best, phi, alpha, clo, dr = min(allc, key=lambda c: (c[0], c[1]))
    argmin = {"rho": q.start.c1, "phi": phi, "alpha": alpha, "period": t_best,
              "closure": clo, "drift": dr,
              "min_closure": min(c[4] for c in allc)}
    return val, argmin, calls + defect.calls, fails + defect.failures, (phis, alphas, vals)


def shadowing_search(m: SurfaceModel, q: ShadowingQuery, workers: int = 1,
                     tol: float = 1e-10) -> ShadowingResult:
    """Look for a closed orbit shadowing the pseudo-orbit of ``q``.

    Exactly periodic pseudo-orbits are returned as they are.  If the transits
    through the two endpoints have opposite signs, the result carries the
    sign certificate and the smallest closure bound found by a grid on the
    band-edge section plus a local search; no closed orbit is returned.
    Otherwise the closure equation is solved from the pseudo-orbit start.
    """
    v, T, end = q.start, q.period, q.pseudo_orbit.final
    gap = q.gap(m)
    if v.chart == m.band_chart and math.sin(v.alpha) == 0.0:
        k = T / (TWO_PI * m.h)
        if abs(k - round(k)) < 1e-12 and round(k) >= 1:
            c = vertical_orbit(m, v.c1, math.cos(v.alpha) > 0)
            c = ClosedGeodesic(v.at_time(0.0), T, 0.0, RANK_TWO, c.label, model=m,
                               meta={"vertical": True})
            return ShadowingResult("closed", gap, c, min_residual=0.0, shadow_distance=0.0)
    if v.chart == m.band_chart and end.chart == m.band_chart:
        try:
            cert = transit_sign_certificate(endpoint_transit(m, v), endpoint_transit(m, end),
                                            q.theta, q.region_eps)
        except NotApplicable:
            cert = None
        if cert is not None:
            val, argmin, n_eval, fails, grid = _grid_search(m, q, workers)
            return ShadowingResult("obstructed", gap, certificate=cert, min_residual=val,
                                   argmin=argmin, evaluations=n_eval, failures=fails, grid=grid)
    if gap < tol:
        c = ClosedGeodesic(v.at_time(0.0), T, gap, is_rank_one(m, v, T), "pseudo-orbit", model=m)
        return ShadowingResult("closed", gap, c, min_residual=gap, shadow_distance=0.0)
    try:
        w, Tw, res, it = _shoot(m, v, T, tol)
    except RefineFailure:
        return ShadowingResult("best-residual", gap, min_residual=gap)
    dist = chart_distance(m, w, v)
    if dist < q.eps and abs(Tw - T) <= 0.1 * T:
        c = ClosedGeodesic(w, Tw, res, is_rank_one(m, w, Tw), "shadowing orbit", model=m,
                           meta={"iterations": it})
        return ShadowingResult("closed", gap, c, min_residual=res, shadow_distance=dist)
    return ShadowingResult("best-residual", gap, min_residual=min(gap, res), shadow_distance=dist)


def control_pseudo_orbit(m: SurfaceModel, word: str, gap: float = 1e-3):
    """Pseudo-orbit with closure gap ``gap`` next to the axis of ``word``.

    The axis must avoid the flattened region, so the pseudo-orbit lives in
    the constant-curvature part where the classical closing lemma applies.
    Returns ``(segment, axis)``.
    """
    axis = axis_from_word(m, word)
    if axis.guess:
        raise NotApplicable(f"the axis of {word!r} meets the flattened region")

    def seg(u):
        return integrate(m, _offset(m, axis.initial, u, 0.0), axis.period)

    u = 1e-6
    for _ in range(8):
        s = seg(u)
        g = chart_distance(m, s.final, s.initial)
        if abs(g - gap) < 0.05 * gap:
            return s, axis
        u *= gap / g
    raise RefineFailure(f"could not calibrate a pseudo-orbit with gap {gap}")
