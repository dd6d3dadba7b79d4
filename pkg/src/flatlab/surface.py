"""Surface models built from a flat band, warped flanks and hyperbolic charts.

Every preset shares the same warped chart ``(rho, phi)`` with metric
``d rho^2 + f(rho)^2 d phi^2`` and ``phi`` in ``[0, 2 pi)``:

* ``CylinderWithFunnels``: flat band ``|rho| <= l/2``, flanks
  ``f = h cosh((|rho| - l/2)/h)`` out to infinity.  The part of the flank
  within the collar width of the band is the ``flank`` chart (integrated
  numerically), the rest is the ``funnel`` chart (closed form).
* ``FlatCylinderTorus``: a hyperbolic once-punctured torus cut open along the
  axis of ``A`` with a flat band of width ``l`` inserted.  Flanks are the
  hyperbolic Fermi collar ``f = h cosh(x)``; beyond the collar the
  ``hyperbolic`` chart is a fundamental domain in the upper half-plane.
* ``FlatEndedTorus``: a one-holed hyperbolic torus whose boundary geodesic
  ``C = [A, B]`` is glued to a flat half-cylinder ``rho >= 0`` (the ``end``
  chart); the collar on the core side is ``-w <= rho < 0``.

The angle ``alpha`` in warped charts is measured from the vertical
direction ``d/d phi`` (the direction of the closed geodesics in the band)
towards ``d/d rho``, so ``d rho/dt = sin(alpha)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import hyperbolic as hb
from .errors import (ConfigError, InvalidParameter, InvalidSurface, NotApplicable,
                     NotHyperbolic, OutOfDomain, ReductionFailure)

PRESETS = ("CylinderWithFunnels", "FlatCylinderTorus", "FlatEndedTorus")

STANDARD_A = np.array([[1.0, 1.0], [1.0, 2.0]])
STANDARD_B = np.array([[1.0, -1.0], [-1.0, 2.0]])

TWO_PI = 2.0 * math.pi
ACOSH2 = math.acosh(2.0)
_J = np.array([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class UnitTangent:
    """A unit tangent vector in one chart.

    ``(c1, c2)`` is ``(rho, phi)`` in the warped charts (``band``, ``end``,
    ``flank``, ``funnel``) and the half-plane point ``(x, y)`` in the
    ``hyperbolic`` chart, where ``alpha`` is measured counter-clockwise from
    the upward vertical.
    """

    chart: str
    c1: float
    c2: float
    alpha: float
    t: float = 0.0

    def at_time(self, t: float) -> "UnitTangent":
        return UnitTangent(self.chart, self.c1, self.c2, self.alpha, t)

    def as_dict(self) -> dict:
        return {"chart": self.chart, "c1": self.c1, "c2": self.c2, "alpha": self.alpha, "t": self.t}

    @property
    def is_warped(self) -> bool:
        return self.chart != "hyperbolic"


def wrap_phi(phi: float) -> float:
    w = math.fmod(phi, TWO_PI)
    if w < 0:
        w += TWO_PI
    if w >= TWO_PI:
        w -= TWO_PI
    return w


def circle_gap(phi1: float, phi2: float) -> float:
    """Unsigned angular gap on the circle, in ``[0, pi]``."""
    d = abs(wrap_phi(phi1) - wrap_phi(phi2))
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class WarpFunction:
    """Warp profile: ``f = h`` on the band ``[lo, hi]``, cosh flanks beyond.

    Beyond an edge, with ``x`` the distance past it,
    ``f = h cosh(x / a) + flank_slope * x`` where ``a = flank_scale``.
    ``flank_slope`` is zero for every preset; a non-zero value breaks the C^1
    gluing on purpose and is only used to exercise :func:`validate_gluing`.
    ``collar`` is the width of the numerically integrated flank chart beyond
    each edge.
    """

    lo: float
    hi: float
    h: float
    flank_scale: float | None = None
    collar: float | None = None
    flank_slope: float = 0.0

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParameter(f"height must be positive, got {self.h}")
        if not self.lo < self.hi:
            raise InvalidParameter("band must have positive width")
        if self.flank_scale is None:
            object.__setattr__(self, "flank_scale", self.h)
        if self.collar is None:
            object.__setattr__(self, "collar", self.h * ACOSH2)
        if not self.flank_scale > 0 or not self.collar > 0:
            raise InvalidParameter("flank scale and collar width must be positive")

    @classmethod
    def symmetric(cls, band_halfwidth: float, h: float, **kw) -> "WarpFunction":
        return cls(-band_halfwidth, band_halfwidth, h, **kw)

    @property
    def band_halfwidth(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def flank_curvature(self) -> float:
        return -1.0 / self.flank_scale ** 2

    def _split(self, rho):
        rho = np.asarray(rho, dtype=float)
        x_hi = rho - self.hi
        x_lo = self.lo - rho
        sign = np.where(x_hi > 0, 1.0, np.where(x_lo > 0, -1.0, 0.0))
        x = np.maximum(np.maximum(x_hi, x_lo), 0.0)
        return rho, sign, x

    @staticmethod
    def _out(v):
        return float(v) if np.ndim(v) == 0 else v

    def f(self, rho):
        _, sign, x = self._split(rho)
        a = self.flank_scale
        return self._out(self.h * np.cosh(x / a) + self.flank_slope * x)

    def df(self, rho):
        _, sign, x = self._split(rho)
        a = self.flank_scale
        return self._out(sign * (self.h / a * np.sinh(x / a) + self.flank_slope))

    def ddf(self, rho):
        _, sign, x = self._split(rho)
        a = self.flank_scale
        return self._out(np.where(sign != 0, self.h / a ** 2 * np.cosh(x / a), 0.0))

    def curvature(self, rho):
        return self._out(-np.asarray(self.ddf(rho)) / np.asarray(self.f(rho)))

    def edge_limits(self, edge: float) -> dict:
        """One-sided values of ``f, f', K`` at a band edge (band side vs flank side)."""
        if edge not in (self.lo, self.hi):
            raise InvalidParameter("not a band edge")
        a = self.flank_scale
        s = 1.0 if edge == self.hi else -1.0
        return {
            "band": {"f": self.h, "df": 0.0, "K": 0.0},
            "flank": {"f": self.h, "df": s * self.flank_slope, "K": -1.0 / a ** 2},
        }

    def clairaut(self, rho: float, alpha: float) -> float:
        return self.f(rho) * math.cos(alpha)


@dataclass(frozen=True)
class CylinderSpec:
    """Band width ``l``, radius ``h`` and distance ``d`` from the designated geodesic to the nearer edge."""

    l: float
    h: float
    d: float

    def __post_init__(self):
        if not (self.l > 0 and self.h > 0):
            raise InvalidParameter("l and h must be positive")
        if not (0 < self.d <= self.l / 2 + 1e-15):
            raise InvalidParameter(f"need 0 < d <= l/2, got d={self.d}, l={self.l}")

    @property
    def circumference(self) -> float:
        return TWO_PI * self.h


@dataclass
class Side:
    name: str
    endpoints: tuple
    normal: np.ndarray
    pairing: np.ndarray
    pairing_so: np.ndarray
    partner: int


def renormalize(X, V):
    X = X / math.sqrt(-hb.mdot(X, X))
    V = V + hb.mdot(V, X) * X
    V = V / math.sqrt(hb.mdot(V, V))
    return X, V


def halfplane_from_vectors(X, V) -> tuple[float, float, float]:
    y = 1.0 / (X[0] - X[1])
    x = X[2] * y
    ydot = -(V[0] - V[1]) * y * y
    xdot = V[2] * y + X[2] * ydot
    return x, y, math.atan2(-xdot, ydot)


def vectors_from_halfplane(x: float, y: float, alpha: float):
    X = hb.to_hyperboloid(x, y)
    xdot, ydot = -y * math.sin(alpha), y * math.cos(alpha)
    dXdx = np.array([x / y, x / y, 1.0 / y])
    yy = y * y
    dXdy = np.array([(yy - x * x - 1) / (2 * yy), (yy - x * x + 1) / (2 * yy), -x / yy])
    return renormalize(X, xdot * dXdx + ydot * dXdy)


def word_matrix(A, B, word: str) -> np.ndarray:
    """Evaluate a word over ``A, B, a = A^-1, b = B^-1``; ``C = ABab`` and ``c = C^-1``."""
    A, B = hb.as_matrix(A), hb.as_matrix(B)
    table = {"A": A, "B": B, "a": hb.sl2_inverse(A), "b": hb.sl2_inverse(B)}
    table["C"] = hb.commutator(A, B)
    table["c"] = hb.sl2_inverse(table["C"])
    g = np.eye(2)
    for ch in word.replace(" ", ""):
        if ch not in table:
            raise InvalidParameter(f"unknown generator {ch!r} in word {word!r}")
        g = g @ table[ch]
    return g


def _ideal_key(p: float) -> float:
    return math.pi if p == hb.INF or p == -hb.INF else 2.0 * math.atan(p)


class HyperbolicChart:
    """Fuchsian chart: ideal quadrilateral ``Q`` with side pairings, plus the lifts of the cut geodesic.

    ``Q`` has ideal vertices ``P, AP, BAP, BP`` with ``P`` a fixed point of
    ``B^-1 A^-1 B A`` (parabolic for a punctured torus, hyperbolic for a
    one-holed torus, where ``Q`` spirals onto the boundary).  The collar of
    half-width ``collar`` around every lift of the cut geodesic is excluded
    from this chart; ``lifts`` lists the lifts whose collar meets ``Q``.
    """

    def __init__(self, A, B, cut_word: str, collar: float, core_side: bool = False,
                 max_word: int = 7):
        self.generators = {"A": hb.as_matrix(A), "B": hb.as_matrix(B)}
        for name, g in self.generators.items():
            det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
            if abs(det - 1.0) > 1e-12:
                raise InvalidParameter(f"generator {name} has determinant {det!r}")
        A, B = self.generators["A"], self.generators["B"]
        Ai, Bi = hb.sl2_inverse(A), hb.sl2_inverse(B)
        self.peripheral = Bi @ Ai @ B @ A
        tr = hb.trace(self.peripheral)
        if tr > -2.0 + 1e-9 and abs(tr + 2.0) > 1e-9:
            raise InvalidSurface(f"commutator trace {tr} does not give a torus with one end")
        P = hb.fixed_points(self.peripheral)[1]
        self.vertices = (P, hb.mobius(A, P), hb.mobius(B @ A, P), hb.mobius(B, P))
        keys = [_ideal_key(v) for v in self.vertices]
        steps = [(keys[(i + 1) % 4] - keys[i]) % TWO_PI for i in range(4)]
        if not (abs(sum(steps) - TWO_PI) < 1e-9 or abs(sum(steps) - 3 * TWO_PI) < 1e-9):
            raise InvalidSurface("fundamental quadrilateral is not embedded")

        nulls = [hb.null_vector(v) for v in self.vertices]
        O = sum(nulls)
        self.origin = O / math.sqrt(-hb.mdot(O, O))
        P0, P1, P2, P3 = self.vertices
        # (name, endpoints, matrix applied when leaving through this side, partner)
        layout = [("B", (P0, P1), B, 1), ("B'", (P3, P2), Bi, 0),
                  ("A", (P0, P3), A, 3), ("A'", (P1, P2), Ai, 2)]
        self.sides = []
        for name, (p, q), g, partner in layout:
            n = hb.geodesic_normal(p, q)
            if hb.mdot(self.origin, n) > 0:
                n = -n
            self.sides.append(Side(name, (p, q), n, g, hb.so21(g), partner))
        self._side_N = np.array([s.normal * _J for s in self.sides])
        self._side_M = [s.pairing_so for s in self.sides]

        self.cut_word = cut_word
        self.core_side = bool(core_side)
        self.cut_element = self.word_matrix(cut_word)
        self.cut_length = hb.translation_length(self.cut_element)
        rep, att = hb.fixed_points(self.cut_element)
        ref = hb.FermiFrame.from_endpoints(rep, att, side=self.origin if core_side else None)
        # put the arclength origin at the foot of the perpendicular from the origin
        _, s0, _ = ref.coords(self.origin, ref.e1)
        self.reference = ref.shifted(s0)
        self.collar = float(collar)
        self.core_side = core_side
        self._enumerate_lifts(max_word)

    # -- group words ---------------------------------------------------------
    def word_matrix(self, word: str) -> np.ndarray:
        return word_matrix(self.generators["A"], self.generators["B"], word)

    def _enumerate_lifts(self, max_word: int):
        A, B = self.generators["A"], self.generators["B"]
        gens = {"A": A, "a": hb.sl2_inverse(A), "B": B, "b": hb.sl2_inverse(B)}
        inverse = {"A": "a", "a": "A", "B": "b", "b": "B"}
        rep, att = hb.fixed_points(self.cut_element)
        seen = {}
        frontier = [("", np.eye(2))]
        last_new = 0
        margin = 1e-3
        for length in range(max_word + 1):
            nxt = []
            for word, g in frontier:
                ends = tuple(sorted((_ideal_key(hb.mobius(g, rep)), _ideal_key(hb.mobius(g, att)))))
                key = (round(ends[0], 9), round(ends[1], 9))
                if key not in seen:
                    frame = self.reference.transformed(hb.so21(g))
                    dist = self._distance_to_domain(frame.n)
                    seen[key] = (word, frame, dist)
                    if dist < self.collar + margin:
                        last_new = length
                if length < max_word:
                    for ch, m in gens.items():
                        if word and inverse[ch] == word[-1]:
                            continue
                        nxt.append((word + ch, g @ m))
            frontier = nxt
        if last_new >= max_word - 1:
            raise InvalidSurface("lift enumeration did not stabilise; increase the word length")
        near = [(w, f) for w, f, d in seen.values() if d < self.collar + margin]
        near.sort(key=lambda wf: (len(wf[0]), wf[0]))
        self.lift_words = [w for w, _ in near]
        self.lifts = [f for _, f in near]
        self._lift_N = np.array([f.n * _J for f in self.lifts])
        # embeddedness: every other lift must be disjoint and 2*collar away
        self.min_lift_separation = math.inf
        others = [(w, f) for w, f, _ in seen.values()]
        for i, fi in enumerate(self.lifts):
            for w, fj in others:
                if w == self.lift_words[i]:
                    continue
                c = abs(hb.mdot(fi.n, fj.n))
                if c < 1.0:
                    raise InvalidSurface(
                        f"cut geodesic is not simple: lifts {self.lift_words[i]!r} and {w!r} intersect")
                self.min_lift_separation = min(self.min_lift_separation, math.acosh(c))
        if self.min_lift_separation <= 2 * self.collar:
            raise InvalidSurface("collar around the cut geodesic is not embedded")

    def _distance_to_domain(self, n) -> float:
        best = math.inf
        for s in self.sides:
            c = abs(hb.mdot(s.normal, n))
            if c <= 1.0:
                return 0.0
            best = min(best, math.acosh(c))
        return best

    # -- geometry in the domain ---------------------------------------------
    def inside(self, X, tol: float = 1e-9) -> bool:
        return bool(np.all(self._side_N @ X <= tol))

    def collar_depth(self, X) -> tuple[float, int]:
        """Signed Fermi distance to the nearest listed lift, and its index."""
        vals = self._lift_N @ X
        k = int(np.argmin(np.abs(vals)))
        return math.asinh(vals[k]), k

    def side_exit(self, X, V, t_max: float = math.inf):
        """Earliest time a geodesic leaves ``Q`` through a side, or ``(inf, -1)``."""
        a = self._side_N @ X
        b = self._side_N @ V
        best, idx = t_max, -1
        for i in range(4):
            bi = b[i]
            if bi <= 0.0:
                continue
            ai = a[i]
            if ai >= 0.0:
                t = 0.0
            elif -ai < bi:
                t = math.atanh(-ai / bi)
            else:
                continue
            if t < best:
                best, idx = t, i
        return best, idx

    def collar_entry(self, X, V, t_max: float = math.inf):
        """Earliest time ``|rho'|`` decreases through ``sinh(collar)`` for some lift."""
        a = self._lift_N @ X
        b = self._lift_N @ V
        sw = math.sinh(self.collar)
        best, idx = t_max, -1
        for k in range(len(a)):
            ak, bk = a[k], b[k]
            sg = 1.0 if ak >= 0 else -1.0
            if sg * bk >= 0.0:
                continue  # moving away from this lift
            for t in hb.solve_cosh_sinh(ak, bk, sg * sw):
                if t < -1e-13 or t >= best:
                    continue
                # inward crossing only
                if sg * (ak * math.sinh(t) + bk * math.cosh(t)) < 0.0:
                    best, idx = max(t, 0.0), k
        return best, idx

    def reduce(self, X, V, cap: int = 64):
        """Map ``(X, V)`` into ``Q`` by walking the segment from the origin across sides.

        Returns the reduced vectors and the accumulated SO(2,1) matrix.
        """
        G = np.eye(3)
        d = -hb.mdot(self.origin, X)
        if d > 1.0 + 1e-15:
            D = math.acosh(d)
            Y = self.origin.copy()
            W = (X - d * self.origin) / math.sinh(D)
            remaining = D
            for _ in range(cap + 1):
                t, i = self.side_exit(Y, W, remaining)
                if i < 0:
                    break
                ch, sh = math.cosh(t), math.sinh(t)
                Y, W = ch * Y + sh * W, sh * Y + ch * W
                M = self._side_M[i]
                Y, W = renormalize(M @ Y, M @ W)
                G = M @ G
                remaining -= t
            else:
                raise ReductionFailure(f"more than {cap} side crossings while reducing")
        Xr, Vr = renormalize(G @ X, G @ V)
        return Xr, Vr, G

    # -- collar coordinates --------------------------------------------------
    def to_fermi(self, X, V, k: int):
        rho, s, alpha = self.lifts[k].coords(X, V)
        return rho, s, alpha

    def from_fermi(self, rho: float, s: float, alpha: float):
        """Vectors on the reference lift, reduced into ``Q``."""
        s = s - self.cut_length * math.floor(s / self.cut_length + 0.5)
        X, V = self.reference.vectors(rho, s, alpha)
        Xr, Vr, _ = self.reduce(X, V)
        return Xr, Vr

    def describe(self) -> dict:
        return {
            "generators": {k: v.tolist() for k, v in self.generators.items()},
            "vertices": [None if not math.isfinite(v) else float(v) for v in self.vertices],
            "sides": [{"name": s.name, "partner": self.sides[s.partner].name} for s in self.sides],
            "cut_word": self.cut_word,
            "cut_length": float(self.cut_length),
            "lifts": self.lift_words,
            "min_lift_separation": float(self.min_lift_separation),
        }


@dataclass
class SurfaceModel:
    """Chart atlas of one preset.  Treated as immutable after construction."""

    preset: str
    warp: WarpFunction
    l: float
    h: float
    hyperbolic: HyperbolicChart | None = None
    moduli: tuple | None = None
    params: dict = field(default_factory=dict)

    @property
    def band_chart(self) -> str:
        return "end" if self.preset == "FlatEndedTorus" else "band"

    @property
    def outer_chart(self) -> str:
        return "funnel" if self.preset == "CylinderWithFunnels" else "hyperbolic"

    @property
    def charts(self) -> tuple:
        out = (self.band_chart, "flank", self.outer_chart)
        return out

    @property
    def collar(self) -> float:
        return self.warp.collar

    @property
    def collar_bounds(self) -> tuple[float, float]:
        return self.warp.lo - self.warp.collar, self.warp.hi + self.warp.collar

    @property
    def circumference(self) -> float:
        return TWO_PI * self.h

    def warped_chart_of(self, rho: float) -> str:
        w = self.warp
        if w.lo <= rho <= w.hi:
            return self.band_chart
        lo, hi = self.collar_bounds
        if lo <= rho <= hi:
            return "flank"
        if self.preset == "CylinderWithFunnels":
            return "funnel"
        raise OutOfDomain(f"rho={rho} lies outside the warped charts of {self.preset}")

    def cylinder_spec(self, rho_A: float = 0.0) -> CylinderSpec:
        w = self.warp
        if not (w.lo < rho_A < w.hi):
            raise InvalidParameter("designated geodesic must lie in the open band")
        d = min(rho_A - w.lo, w.hi - rho_A)
        return CylinderSpec(self.l, self.h, d)

    def tangent(self, chart: str, c1: float, c2: float, alpha: float) -> UnitTangent:
        """Build a validated :class:`UnitTangent`, normalising angles."""
        v = UnitTangent(chart, float(c1), float(c2), hb.wrap_angle(float(alpha)))
        check_domain(self, v)
        if v.is_warped:
            v = UnitTangent(chart, v.c1, wrap_phi(v.c2), v.alpha)
        return v

    def describe(self) -> dict:
        d = {
            "preset": self.preset,
            "l": self.l if math.isfinite(self.l) else None,
            "h": self.h,
            "band": [self.warp.lo, self.warp.hi if math.isfinite(self.warp.hi) else None],
            "collar": self.warp.collar,
            "flank_scale": self.warp.flank_scale,
            "flank_curvature": self.warp.flank_curvature,
        }
        if self.hyperbolic is not None:
            d["hyperbolic"] = self.hyperbolic.describe()
        d.update(self.params)
        return d


# -- domain checks and curvature -------------------------------------------

def check_domain(m: SurfaceModel, v, tol: float = 1e-9) -> None:
    chart = v.chart
    if chart not in m.charts:
        raise OutOfDomain(f"chart {chart!r} is not part of {m.preset}")
    if chart == "hyperbolic":
        if not v.c2 > 0:
            raise OutOfDomain("half-plane point needs y > 0")
        return
    rho = v.c1
    if not math.isfinite(rho):
        raise OutOfDomain("rho must be finite")
    w = m.warp
    lo, hi = m.collar_bounds
    if chart == m.band_chart:
        ok = w.lo - tol <= rho <= w.hi + tol
    elif chart == "flank":
        ok = (lo - tol <= rho <= w.lo + tol) or (w.hi - tol <= rho <= hi + tol)
    else:  # funnel
        ok = rho <= lo + tol or rho >= hi - tol
    if not ok:
        raise OutOfDomain(f"rho={rho} outside chart {chart!r}")


@dataclass(frozen=True)
class EdgeCurvature:
    """Curvature at a band edge: the gluing is C^1 so both one-sided values are reported."""

    band: float
    flank: float
    side: int


def curvature_at(m: SurfaceModel, p, side: int | None = None):
    """Gaussian curvature at ``p`` (a :class:`UnitTangent` or ``(chart, c1, c2)``).

    At a band edge, ``side=+1`` selects the flank value, ``side=-1`` the band
    value; with ``side=None`` an :class:`EdgeCurvature` with both is returned.
    """
    if isinstance(p, UnitTangent):
        chart, c1, c2 = p.chart, p.c1, p.c2
    else:
        chart, c1, c2 = p
    check_domain(m, UnitTangent(chart, c1, c2, 0.0))
    if chart == "hyperbolic":
        return -1.0
    w = m.warp
    if c1 == w.lo or c1 == w.hi:
        if side is None:
            return EdgeCurvature(0.0, w.flank_curvature, 1 if c1 == w.hi else -1)
        return w.flank_curvature if side > 0 else 0.0
    if chart == m.band_chart:
        return 0.0
    return float(w.curvature(c1))


# -- builders ----------------------------------------------------------------

def build_cylinder_with_funnels(l: float, h: float) -> SurfaceModel:
    """Flat band of width ``l`` and radius ``h`` with two funnels of curvature ``-1/h^2``."""
    if not (l > 0 and h > 0) or not (math.isfinite(l) and math.isfinite(h)):
        raise InvalidParameter(f"need l > 0 and h > 0, got l={l}, h={h}")
    warp = WarpFunction.symmetric(l / 2, h)
    return SurfaceModel("CylinderWithFunnels", warp, float(l), float(h))


def _check_moduli(moduli):
    if moduli is None:
        return STANDARD_A.copy(), STANDARD_B.copy()
    if isinstance(moduli, dict):
        A, B = moduli["A"], moduli["B"]
    else:
        A, B = moduli
    A, B = hb.as_matrix(A), hb.as_matrix(B)
    for name, g in (("A", A), ("B", B)):
        if not np.all(np.isfinite(g)):
            raise InvalidParameter(f"generator {name} has non-finite entries")
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        if abs(det - 1.0) > 1e-12:
            raise InvalidParameter(f"generator {name} has determinant {det!r}, not 1")
    return A, B


def build_flat_cylinder_torus(moduli=None, l: float = 4.0, cut: str = "A") -> SurfaceModel:
    """Punctured hyperbolic torus with a flat band of width ``l`` inserted along the axis of ``cut``."""
    if not (l > 0 and math.isfinite(l)):
        raise InvalidParameter(f"band width must be positive, got {l}")
    A, B = _check_moduli(moduli)
    try:
        length = hb.translation_length(word_matrix(A, B, cut))
    except NotHyperbolic as exc:
        raise InvalidSurface(f"cut element is not hyperbolic: {exc}") from None
    tr = hb.trace(hb.commutator(A, B))
    if abs(tr + 2.0) > 1e-9:
        raise InvalidSurface(f"commutator trace {tr} is not -2: not a once-punctured torus")
    h = length / TWO_PI
    warp = WarpFunction.symmetric(l / 2, h, flank_scale=1.0)
    chart = HyperbolicChart(A, B, cut, warp.collar)
    return SurfaceModel("FlatCylinderTorus", warp, float(l), h, chart, (A, B),
                        {"cut_length": length, "commutator_trace": tr})


def stretched_moduli(target_trace: float = -2.5):
    """Generators ``[[1,s],[s,1+s^2]]`` and ``[[1,-s],[-s,1+s^2]]`` with ``tr[A,B] = target_trace``."""
    if not target_trace < -2.0:
        raise InvalidParameter("target trace must be < -2")

    def mats(s):
        return (np.array([[1.0, s], [s, 1.0 + s * s]]), np.array([[1.0, -s], [-s, 1.0 + s * s]]))

    def gap(s):
        A, B = mats(s)
        return hb.trace(hb.commutator(A, B)) - target_trace

    hi = 1.5
    while gap(hi) > 0:
        hi *= 1.5
    s = brentq(gap, 1.0, hi, xtol=1e-15, rtol=1e-15)
    return mats(s)


def build_flat_ended_torus(moduli=None, h: float | None = None,
                           target_trace: float = -2.5) -> SurfaceModel:
    """One-holed hyperbolic torus with its boundary geodesic glued to a flat half-cylinder."""
    if moduli is None:
        A, B = stretched_moduli(target_trace)
    else:
        A, B = _check_moduli(moduli)
    C = hb.commutator(A, B)
    tr = hb.trace(C)
    if not tr < -2.0 - 1e-12:
        raise InvalidSurface(f"boundary element has trace {tr}: not hyperbolic (cusp, not a funnel)")
    length = hb.translation_length(C)
    h_exact = length / TWO_PI
    if h is not None and abs(h - h_exact) > 1e-9 * max(1.0, h_exact):
        raise InvalidParameter(f"h must equal length(C)/2pi = {h_exact}")
    warp = WarpFunction(0.0, math.inf, h_exact, flank_scale=1.0)
    chart = HyperbolicChart(A, B, "C", warp.collar, core_side=True)
    return SurfaceModel("FlatEndedTorus", warp, math.inf, h_exact, chart, (A, B),
                        {"cut_length": length, "commutator_trace": tr})


# -- gluing checks and chart transitions -----------------------------------

def _fermi_metric_defect(chart: HyperbolicChart, h: float, rho: float, phi: float,
                         step: float = 1e-4) -> float:
    """Pulled-back metric of ``(rho', phi) -> H^2`` against ``d rho^2 + h^2 cosh^2 rho d phi^2``."""
    scale = chart.cut_length / TWO_PI

    def X(r, p):
        return chart.reference.vectors(r, p * scale, 0.0)[0]

    # fourth-order central differences
    def d(fun, e):
        return (-fun(2 * e) + 8 * fun(e) - 8 * fun(-e) + fun(-2 * e)) / (12 * step)

    Xr = d(lambda e: X(rho + e, phi), step)
    Xp = d(lambda e: X(rho, phi + e), step)
    g = np.array([[hb.mdot(Xr, Xr), hb.mdot(Xr, Xp)], [hb.mdot(Xp, Xr), hb.mdot(Xp, Xp)]])
    target = np.array([[1.0, 0.0], [0.0, (h * math.cosh(rho)) ** 2]])
    return float(np.max(np.abs(g - target)))


def validate_gluing(m: SurfaceModel, n_samples: int = 100, seed: int = 0,
                    threshold: float = 1e-9) -> dict:
    """C^1 defects at the band edges and isometry defects of the chart transitions."""
    w = m.warp
    edges = [e for e in (w.lo, w.hi) if math.isfinite(e)]
    f_defect = 0.0
    df_defect = 0.0
    for e in edges:
        lim = w.edge_limits(e)
        f_defect = max(f_defect, abs(lim["band"]["f"] - lim["flank"]["f"]))
        df_defect = max(df_defect, abs(lim["band"]["df"] - lim["flank"]["df"]))
    report = {
        "preset": m.preset,
        "samples": n_samples,
        "f_defect": f_defect,
        "df_defect": df_defect,
        "pairing_defect": 0.0,
        "metric_defect": 0.0,
        "roundtrip_defect": 0.0,
        "determinant_defect": 0.0,
    }
    rng = np.random.default_rng(seed)
    if m.hyperbolic is not None:
        ch = m.hyperbolic
        report["determinant_defect"] = max(
            abs(g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0] - 1.0) for g in ch.generators.values())
        pd = 0.0
        for s in ch.sides:
            partner = ch.sides[s.partner]
            lo_end, hi_end = s.endpoints
            fr = hb.FermiFrame.from_endpoints(lo_end, hi_end)
            for t in rng.uniform(-3.0, 3.0, size=max(1, n_samples // 4)):
                X, V = fr.vectors(0.0, float(t), 0.0)
                Y = s.pairing_so @ X
                pd = max(pd, abs(hb.mdot(Y, partner.normal)), abs(hb.mdot(Y, Y) + 1.0))
        report["pairing_defect"] = pd
        md = 0.0
        rt = 0.0
        wc = w.collar
        for _ in range(n_samples):
            r = float(rng.uniform(-wc, wc)) if m.preset == "FlatCylinderTorus" else float(rng.uniform(-wc, 0.0))
            phi = float(rng.uniform(0.0, TWO_PI))
            md = max(md, _fermi_metric_defect(ch, m.h, r, phi))
            a = float(rng.uniform(-math.pi, math.pi))
            edge_rho = (w.hi + wc) if (m.preset == "FlatCylinderTorus" and r > 0) else (w.lo - wc)
            v = UnitTangent("flank", edge_rho, phi, a)
            back = chart_transition(m, chart_transition(m, v))
            rt = max(rt, abs(back.c1 - v.c1), circle_gap(back.c2, v.c2),
                     abs(hb.wrap_angle(back.alpha - v.alpha)))
        report["metric_defect"] = md
        report["roundtrip_defect"] = rt
    keys = ("f_defect", "df_defect", "pairing_defect", "metric_defect", "roundtrip_defect",
            "determinant_defect")
    report["max_defect"] = max(report[k] for k in keys)
    report["threshold"] = threshold
    report["flagged"] = [k for k in keys if report[k] > threshold]
    report["ok"] = not report["flagged"]
    return report


def warped_to_vectors(m: SurfaceModel, rho: float, phi: float, alpha: float):
    """Hyperboloid vectors (reduced into Q) of a collar-chart state."""
    ch = m.hyperbolic
    w = m.warp
    rp = rho - w.hi if rho >= w.hi else rho - w.lo
    s = phi * ch.cut_length / TWO_PI
    return ch.from_fermi(rp, s, alpha)


def vectors_to_warped(m: SurfaceModel, X, V, k: int):
    """Collar-chart state ``(rho, phi, alpha)`` of hyperboloid vectors near lift ``k``."""
    ch = m.hyperbolic
    w = m.warp
    rp, s, alpha = ch.to_fermi(X, V, k)
    rho = w.hi + rp if rp > 0 else w.lo + rp
    return rho, wrap_phi(s * TWO_PI / ch.cut_length), alpha


def chart_transition(m: SurfaceModel, v: UnitTangent, tol: float = 1e-9) -> UnitTangent:
    """Re-express a state lying on a gluing circle in the neighbouring chart."""
    w = m.warp
    lo, hi = m.collar_bounds
    if v.chart == "hyperbolic":
        ch = m.hyperbolic
        X, V = vectors_from_halfplane(v.c1, v.c2, v.alpha)
        depth, k = ch.collar_depth(X)
        if abs(abs(depth) - ch.collar) > tol:
            raise NotApplicable("hyperbolic state is not on a collar boundary")
        rho, phi, alpha = vectors_to_warped(m, X, V, k)
        rho = hi if rho > 0 and m.preset == "FlatCylinderTorus" else lo
        return UnitTangent("flank", rho, phi, alpha, v.t)
    rho = v.c1
    if v.chart == m.band_chart or (v.chart == "flank" and
                                   (abs(rho - w.hi) <= tol or abs(rho - w.lo) <= tol)):
        for e in (w.lo, w.hi):
            if math.isfinite(e) and abs(rho - e) <= tol:
                target = "flank" if v.chart == m.band_chart else m.band_chart
                return UnitTangent(target, e, v.c2, v.alpha, v.t)
        raise NotApplicable("band state is not on a band edge")
    on_outer = [b for b in (lo, hi) if math.isfinite(b) and abs(rho - b) <= tol]
    if v.chart == "funnel":
        if on_outer:
            return UnitTangent("flank", on_outer[0], v.c2, v.alpha, v.t)
        raise NotApplicable("funnel state is not on the collar boundary")
    if not on_outer:
        raise NotApplicable("flank state is not on a gluing circle")
    if m.preset == "CylinderWithFunnels":
        return UnitTangent("funnel", on_outer[0], v.c2, v.alpha, v.t)
    X, V = warped_to_vectors(m, on_outer[0], v.c2, v.alpha)
    x, y, a = halfplane_from_vectors(X, V)
    return UnitTangent("hyperbolic", x, y, a, v.t)


# -- configuration files ---------------------------------------------------

def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    parts = text.replace(",", " ").split()
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        return text
    return nums[0] if len(nums) == 1 else nums


def parse_config_text(text: str) -> dict:
    """Parse JSON, or ``key = value`` / ``key: value`` lines (``#`` comments)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("configuration must be an object")
        return data
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                k, v = line.split(sep, 1)
                break
        else:
            raise ConfigError(f"line {lineno}: expected key = value")
        out[k.strip()] = _parse_value(v)
    return out


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config_text(text)


def _matrix_from(value, name):
    try:
        arr = np.asarray(value, dtype=float).reshape(2, 2)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be 4 numbers") from None
    return arr


def build_from_config(cfg: dict) -> SurfaceModel:
    """Build a surface from a parsed configuration (``preset``, ``l``, ``h``, ``A``, ``B``, ...)."""
    surf = cfg.get("surface", cfg)
    preset = surf.get("preset")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    moduli = None
    if "A" in surf or "B" in surf:
        if not ("A" in surf and "B" in surf):
            raise ConfigError("both A and B are required")
        moduli = (_matrix_from(surf["A"], "A"), _matrix_from(surf["B"], "B"))
    try:
        if preset == "CylinderWithFunnels":
            return build_cylinder_with_funnels(float(surf.get("l", 2.0)), float(surf.get("h", 1.0)))
        if preset == "FlatCylinderTorus":
            return build_flat_cylinder_torus(moduli, float(surf.get("l", 4.0)), str(surf.get("cut", "A")))
        h = surf.get("h")
        return build_flat_ended_torus(moduli, None if h is None else float(h),
                                      float(surf.get("target_trace", -2.5)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (InvalidParameter, InvalidSurface)):
            raise
        raise ConfigError(str(exc)) from None
