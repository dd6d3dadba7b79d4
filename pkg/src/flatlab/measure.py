"""Atomic measures on the unit tangent bundle, exact occupancy times and Prohorov distances.

Distances follow the Sasaki metric.  Inside the flat band it is the
Euclidean product metric, so values there are exact.  Elsewhere only a
certified lower bound is returned (the base projection is 1-Lipschitz and
the band is reached through its edges).  Feeding lower bounds into the
Prohorov computation can only add coupling edges, so the computed distance
is then a lower bound for the true one.

The Prohorov distance uses closed neighbourhoods ``{d <= eps}``; the
infimum is the same as for open ones.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from . import hyperbolic as hb
from .errors import InvalidParameter, NotApplicable, SizeLimit
from .flow import FlatArc, iter_arcs
from .surface import TWO_PI, CylinderSpec, SurfaceModel, UnitTangent, circle_gap

__all__ = [
    "RegionSpec", "AtomicMeasure", "OccupancyStats", "ProhorovResult", "Distance",
    "sasaki_distance", "distance_to_band", "dist_to_orbit_A", "occupancy", "occupancy_ladder",
    "transit_window_time", "empirical_from_trajectory", "empirical_from_orbit",
    "dirac_on_closed_geodesic", "prohorov_bruteforce", "prohorov_flow", "prohorov_to_orbit",
    "cylinder_prohorov_bound", "distance_matrix",
]

BRUTE_FORCE_LIMIT = 12
INT32_MAX = 2**31 - 1


class Distance(NamedTuple):
    """A Sasaki distance, or a certified lower bound for it when ``exact`` is false."""

    value: float
    exact: bool

    @property
    def lower_bound(self) -> bool:
        return not self.exact

    @property
    def far(self) -> bool:
        return not self.exact


# -- regions ---------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """``U`` (strip times angle window) or ``V`` (Sasaki ball about the orbit ``A``).

    ``rho_A`` and ``alpha_A`` locate the designated vertical geodesic; angles
    are measured from its oriented direction.
    """

    kind: str
    eps: float
    theta: float | None = None
    rho_A: float = 0.0
    alpha_A: float = 0.0

    def __post_init__(self):
        if self.kind not in ("U", "V"):
            raise InvalidParameter(f"region kind must be 'U' or 'V', got {self.kind!r}")
        if not self.eps > 0:
            raise InvalidParameter("eps must be positive")
        if self.kind == "U" and not (self.theta is not None and 0 < self.theta < math.pi / 2):
            raise InvalidParameter("U needs 0 < theta < pi/2")

    @classmethod
    def U(cls, eps: float, theta: float, rho_A: float = 0.0, alpha_A: float = 0.0) -> "RegionSpec":
        return cls("U", eps, theta, rho_A, alpha_A)

    @classmethod
    def V(cls, eps: float, rho_A: float = 0.0, alpha_A: float = 0.0) -> "RegionSpec":
        return cls("V", eps, None, rho_A, alpha_A)

    def check(self, m: SurfaceModel) -> None:
        """The region must sit inside the band (``3 eps`` collar for U, ``eps < d`` for V)."""
        w = m.warp
        d = min(self.rho_A - w.lo, w.hi - self.rho_A)
        if not d > 0:
            raise InvalidParameter("rho_A must lie in the open band")
        if self.kind == "U" and 3 * self.eps > d + 1e-12:
            raise InvalidParameter(f"U needs 3 eps <= d = {d}")
        if self.kind == "V" and not self.eps < d:
            raise InvalidParameter(f"V needs eps < d = {d}")

    def contains(self, m: SurfaceModel, v: UnitTangent) -> bool:
        if v.chart != m.band_chart:
            return False
        th = abs(hb.wrap_angle(v.alpha - self.alpha_A))
        r = abs(v.c1 - self.rho_A)
        if self.kind == "U":
            return r < self.eps and th < self.theta
        return r * r + th * th < self.eps * self.eps

    def window(self, rho0: float, alpha: float, duration: float) -> tuple[float, float]:
        """Membership interval of the straight line ``rho0 + tau sin(alpha)`` over ``[0, duration]``."""
        th = abs(hb.wrap_angle(alpha - self.alpha_A))
        if self.kind == "U":
            if th >= self.theta:
                return 0.0, 0.0
            half = self.eps
        else:
            if th >= self.eps:
                return 0.0, 0.0
            half = math.sqrt((self.eps - th) * (self.eps + th))
        s = math.sin(alpha)
        if s == 0.0:
            return (0.0, duration) if abs(rho0 - self.rho_A) < half else (0.0, 0.0)
        t1 = (self.rho_A - half - rho0) / s
        t2 = (self.rho_A + half - rho0) / s
        a, b = (t1, t2) if t1 < t2 else (t2, t1)
        a, b = max(a, 0.0), min(b, duration)
        return (a, b) if b > a else (0.0, 0.0)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "eps": self.eps, "theta": self.theta, "rho_A": self.rho_A,
                "alpha_A": self.alpha_A}


def transit_window_time(eps: float, theta: float) -> float:
    """Time a straight transit at angle ``theta`` spends in ``V_eps(A)``."""
    if not 0 < theta < math.pi / 2:
        raise InvalidParameter("theta must lie in (0, pi/2)")
    if theta >= eps:
        return 0.0
    return 2.0 * math.sqrt((eps - theta) * (eps + theta)) / math.sin(theta)


# -- distances -----------------------------------------------------------------

def _crossing_length(m: SurfaceModel) -> float:
    """Lower bound for a path that leaves the band through one edge and re-enters."""
    if m.hyperbolic is None:
        return math.inf
    return m.hyperbolic.min_lift_separation


def distance_to_band(m: SurfaceModel, v: UnitTangent) -> Distance:
    """Base distance from ``v`` to the flat band (exact in warped charts of the funnel preset)."""
    if v.chart == m.band_chart:
        return Distance(0.0, True)
    w = m.warp
    if v.chart == "hyperbolic":
        return Distance(w.collar, False)
    rho = v.c1
    if m.preset == "CylinderWithFunnels":
        return Distance(max(rho - w.hi, w.lo - rho, 0.0), True)
    lo_c, hi_c = m.collar_bounds
    if rho > w.hi:
        return Distance(min(rho - w.hi, hi_c - rho + w.collar), False)
    return Distance(min(w.lo - rho, rho - lo_c + w.collar), False)


def _band_base(m: SurfaceModel, rho1, phi1, rho2, phi2):
    """Flat distance between band points, and a lower bound for routes leaving the band."""
    w = m.warp
    flat = np.hypot(rho1 - rho2, m.h * circle_gap(phi1, phi2))
    S = _crossing_length(m)
    if not math.isfinite(S):
        return flat, np.full_like(np.asarray(flat, dtype=float), math.inf)
    lo, hi = w.lo, w.hi
    if math.isfinite(hi):
        alt = np.minimum((hi - rho1) + (rho2 - lo), (rho1 - lo) + (hi - rho2)) + S
    else:
        alt = (rho1 - lo) + (rho2 - lo) + S
    return flat, alt


def sasaki_distance(m: SurfaceModel, v1: UnitTangent, v2: UnitTangent) -> Distance:
    """Sasaki distance, exact for two band vectors, otherwise a certified lower bound."""
    if v1.chart == m.band_chart and v2.chart == m.band_chart:
        flat, alt = _band_base(m, v1.c1, v1.c2, v2.c1, v2.c2)
        da = abs(hb.wrap_angle(v1.alpha - v2.alpha))
        val = math.hypot(float(flat), da)
        if flat <= alt:
            return Distance(val, True)
        return Distance(min(val, float(alt)), False)
    d1, d2 = distance_to_band(m, v1), distance_to_band(m, v2)
    return Distance(abs(d1.value - d2.value), False)


def _orbit_ref(A) -> tuple[float, float]:
    v = A.initial if hasattr(A, "initial") else A
    return v.c1, v.alpha


def dist_to_orbit_A(m: SurfaceModel, v: UnitTangent, A) -> Distance:
    """``sqrt(r^2 + theta^2)`` to the vertical band geodesic ``A``; a lower bound above ``d`` elsewhere."""
    rho_A, alpha_A = _orbit_ref(A)
    w = m.warp
    d = min(rho_A - w.lo, w.hi - rho_A)
    if v.chart != m.band_chart:
        return Distance(distance_to_band(m, v).value + d, False)
    r = abs(v.c1 - rho_A)
    th = abs(hb.wrap_angle(v.alpha - alpha_A))
    S = _crossing_length(m)
    alt = min(w.hi - v.c1, v.c1 - w.lo) + S + d
    if r <= alt:
        return Distance(math.hypot(r, th), True)
    return Distance(math.hypot(alt, th), False)


def _band_lb_array(m: SurfaceModel, charts, rho) -> np.ndarray:
    """Vectorised :func:`distance_to_band` lower bounds (0 in the band)."""
    w = m.warp
    out = np.zeros(len(rho))
    hyp = charts == "hyperbolic"
    out[hyp] = w.collar
    warped = (charts != m.band_chart) & ~hyp
    r = rho[warped]
    if m.preset == "CylinderWithFunnels":
        out[warped] = np.maximum(np.maximum(r - w.hi, w.lo - r), 0.0)
    else:
        lo_c, hi_c = m.collar_bounds
        up = np.minimum(r - w.hi, hi_c - r + w.collar)
        dn = np.minimum(w.lo - r, r - lo_c + w.collar)
        out[warped] = np.where(r > w.hi, up, dn)
    return out


def distance_matrix(m: SurfaceModel, mu: "AtomicMeasure", nu: "AtomicMeasure"):
    """Pairwise Sasaki distances (lower bounds off the band) and an exactness mask."""
    D = np.empty((len(mu), len(nu)))
    E = np.zeros((len(mu), len(nu)), dtype=bool)
    for i, a in enumerate(mu.atoms()):
        for j, b in enumerate(nu.atoms()):
            r = sasaki_distance(m, a[0], b[0])
            D[i, j], E[i, j] = r.value, r.exact
    return D, E


# -- measures --------------------------------------------------------------------

@dataclass
class AtomicMeasure:
    """Finitely supported probability measure on the unit tangent bundle."""

    charts: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    alpha: np.ndarray
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.charts = np.asarray(self.charts, dtype=str)
        self.c1 = np.asarray(self.c1, dtype=float)
        self.c2 = np.asarray(self.c2, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.weights)
        if n == 0:
            raise InvalidParameter("a measure needs at least one atom")
        if not (len(self.charts) == len(self.c1) == len(self.c2) == len(self.alpha) == n):
            raise InvalidParameter("atom arrays have different lengths")
        if np.any(self.weights <= 0):
            raise InvalidParameter("weights must be positive")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise InvalidParameter(f"weights sum to {np.sum(self.weights)!r}, not 1")

    @classmethod
    def from_atoms(cls, atoms, label: str = "") -> "AtomicMeasure":
        """Build from ``[(UnitTangent, weight), ...]``."""
        vs = [a[0] for a in atoms]
        return cls([v.chart for v in vs], [v.c1 for v in vs], [v.c2 for v in vs],
                   [v.alpha for v in vs], [a[1] for a in atoms], label)

    @classmethod
    def uniform(cls, vectors, label: str = "") -> "AtomicMeasure":
        n = len(vectors)
        return cls.from_atoms([(v, 1.0 / n) for v in vectors], label)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def equal_weights(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def atom(self, i: int) -> UnitTangent:
        return UnitTangent(str(self.charts[i]), float(self.c1[i]), float(self.c2[i]),
                           float(self.alpha[i]))

    def atoms(self):
        return [(self.atom(i), float(self.weights[i])) for i in range(len(self))]

    def mass(self, mask) -> float:
        return float(np.sum(self.weights[np.asarray(mask, dtype=bool)]))

    def to_csv(self, path) -> int:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["chart", "coord1", "coord2", "alpha", "weight"])
            for i in range(len(self)):
                wr.writerow([self.charts[i], repr(float(self.c1[i])), repr(float(self.c2[i])),
                             repr(float(self.alpha[i])), repr(float(self.weights[i]))])
        return len(self)

    @classmethod
    def from_csv(cls, path, label: str = "") -> "AtomicMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["chart"] for r in rows], [float(r["coord1"]) for r in rows],
                   [float(r["coord2"]) for r in rows], [float(r["alpha"]) for r in rows],
                   [float(r["weight"]) for r in rows], label)


def _sample_arcs(arcs, t_start: float, n: int, dt: float):
    charts, c1, c2, al = [], [], [], []
    k = 0
    for a in arcs:
        if k >= n:
            break
        t_hi = a.t0 + a.duration
        k_hi = min(n, int(math.ceil((t_hi - t_start) / dt - 1e-12)))
        if k_hi <= k:
            continue
        taus = t_start + np.arange(k, k_hi) * dt - a.t0
        taus = np.clip(taus, 0.0, a.duration)
        r, p, q = a.sample(taus)
        charts.append(np.full(len(taus), a.chart))
        c1.append(r)
        c2.append(p)
        al.append(q)
        k = k_hi
    return charts, c1, c2, al, k


def _from_samples(charts, c1, c2, al, label):
    n = sum(len(x) for x in c1)
    w = np.full(n, 1.0 / n)
    return AtomicMeasure(np.concatenate(charts), np.concatenate(c1), np.concatenate(c2),
                         np.mod(np.concatenate(al) + math.pi, TWO_PI) - math.pi, w, label)


def _atom_count(duration: float, dt: float) -> int:
    if not dt > 0:
        raise InvalidParameter("dt must be positive")
    n = int(math.floor(duration / dt + 1e-9))
    if n < 10:
        raise InvalidParameter("need duration / dt >= 10")
    return n


def empirical_from_trajectory(seg, dt: float) -> AtomicMeasure:
    """Equal-weight atoms at ``g_{k dt}(v)``, ``k = 0 .. floor(T/dt) - 1``."""
    if seg.reversed:
        raise NotApplicable("sample a forward segment")
    n = _atom_count(seg.duration, dt)
    charts, c1, c2, al, k = _sample_arcs(seg.arcs, seg.initial.t, n, dt)
    if k < n:
        raise NotApplicable("segment has no recorded arcs for the requested samples")
    return _from_samples(charts, c1, c2, al, "empirical")


def empirical_from_orbit(m: SurfaceModel, v: UnitTangent, T: float, dt: float) -> AtomicMeasure:
    """Streaming version of :func:`empirical_from_trajectory` (arcs are not kept)."""
    n = _atom_count(T, dt)
    charts, c1, c2, al, k = _sample_arcs(iter_arcs(m, v, T), v.t, n, dt)
    return _from_samples(charts, c1, c2, al, "empirical")


def dirac_on_closed_geodesic(c, N: int = 1024, m: SurfaceModel | None = None) -> AtomicMeasure:
    """``N`` atoms evenly spaced in time along one period of the closed geodesic ``c``."""
    if N < 1:
        raise InvalidParameter("N must be >= 1")
    m = m if m is not None else getattr(c, "model", None)
    v, period = c.initial, c.period
    step = period / N
    if m is not None and v.chart == m.band_chart and math.sin(v.alpha) == 0.0:
        k = np.arange(N)
        phi = np.mod(v.c2 + k * step * math.cos(v.alpha) / m.h, TWO_PI)
        return AtomicMeasure(np.full(N, v.chart), np.full(N, v.c1), phi, np.full(N, v.alpha),
                             np.full(N, 1.0 / N), "dirac")
    if m is None:
        raise InvalidParameter("a surface model is needed to sample a non-vertical orbit")
    start = UnitTangent(v.chart, v.c1, v.c2, v.alpha, 0.0)
    charts, c1, c2, al, k = _sample_arcs(iter_arcs(m, start, period), 0.0, N, step)
    return _from_samples(charts, c1, c2, al, "dirac")


# -- occupancy -----------------------------------------------------------------

@dataclass(frozen=True)
class OccupancyStats:
    T: float
    occupied: float
    fraction: float
    visits: int = 0

    def as_dict(self) -> dict:
        return {"T": self.T, "occupied": self.occupied, "fraction": self.fraction,
                "visits": self.visits}


def occupancy_ladder(m: SurfaceModel, v: UnitTangent, Ts, region: RegionSpec,
                     rtol: float | None = None, ctol: float | None = None) -> list:
    """Exact occupancy statistics at each horizon in ``Ts`` from one forward run."""
    Ts = sorted(float(t) for t in Ts)
    if not Ts or Ts[0] <= 0:
        raise InvalidParameter("horizons must be positive")
    region.check(m)
    out = []
    occ = 0.0
    visits = 0
    k = 0
    kw = {}
    if rtol is not None:
        kw["rtol"] = rtol
    if ctol is not None:
        kw["ctol"] = ctol
    t0 = v.t
    for a in iter_arcs(m, v, Ts[-1], **kw):
        if not isinstance(a, FlatArc):
            continue
        lo, hi = region.window(a.rho, a.alpha, a.duration)
        if hi <= lo:
            continue
        visits += 1
        s, e = a.t0 - t0 + lo, a.t0 - t0 + hi
        while k < len(Ts) and Ts[k] <= s:
            out.append(OccupancyStats(Ts[k], occ, occ / Ts[k], visits - 1))
            k += 1
        while k < len(Ts) and Ts[k] < e:
            part = occ + (Ts[k] - s)
            out.append(OccupancyStats(Ts[k], part, part / Ts[k], visits))
            k += 1
        occ += e - s
    while k < len(Ts):
        out.append(OccupancyStats(Ts[k], occ, occ / Ts[k], visits))
        k += 1
    return out


def occupancy(m: SurfaceModel, v: UnitTangent, T: float, region: RegionSpec, **kw) -> OccupancyStats:
    """Exact ``lambda({t in [0, T] : g_t(v) in region}) / T`` from straight-line windows."""
    if not T > 0:
        raise InvalidParameter("T must be positive")
    return occupancy_ladder(m, v, [T], region, **kw)[0]


# -- Prohorov ----------------------------------------------------------------

@dataclass
class ProhorovResult:
    """Prohorov distance with its bracket and witnesses.

    ``coupling`` is a list of ``(i, j, mass)`` moving ``mu`` onto ``nu`` with
    every used pair at distance ``<= hi`` and unmatched mass ``<= hi``.
    ``violating`` lists indices of a set ``A`` of ``mu`` atoms with
    ``mu(A) > nu(N_lo(A)) + lo``.
    """

    distance: float
    lo: float
    hi: float
    forward: float | None = None
    backward: float | None = None
    coupling: list = field(default_factory=list)
    violating: list | None = None
    method: str = ""
    lower_bound: bool = False

    def as_dict(self) -> dict:
        return {
            "distance": self.distance, "bracket": [self.lo, self.hi], "forward": self.forward,
            "backward": self.backward, "method": self.method, "lower_bound": self.lower_bound,
            "coupling": [[int(i), int(j), float(w)] for i, j, w in self.coupling],
            "violating_set": None if self.violating is None else [int(i) for i in self.violating],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _weights(x):
    w = np.asarray(x.weights if isinstance(x, AtomicMeasure) else x, dtype=float)
    if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
        raise InvalidParameter("weights must be non-negative and sum to 1")
    return w


def _scan(levels, deficit):
    """``inf{eps : g(eps) <= eps}`` for a step function given by breakpoints.

    ``levels`` are sorted breakpoints starting at 0 and ``deficit(k)`` is the
    constant value of ``g`` on ``[levels[k], levels[k+1])``.  ``g`` is
    non-increasing, so the first admissible interval is found by bisection.
    Returns ``(eps, k)``.
    """
    K = len(levels)

    def ok(k):
        nxt = levels[k + 1] if k + 1 < K else math.inf
        return deficit(k) < nxt

    lo, hi = 0, K - 1
    if not ok(hi):  # cannot happen: g <= 1 and the last interval is unbounded
        raise RuntimeError("deficit scan found no admissible interval")
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return max(levels[lo], deficit(lo)), lo


def _levels(D):
    vals = np.unique(D[np.isfinite(D)])
    vals = vals[(vals > 0) & (vals <= 1.0)]
    return np.concatenate([[0.0], vals])


def _subset_deficit(wa, wb, D, eps):
    """``max_A mu(A) - nu(N_eps(A))`` over all subsets of the first support, and a maximiser."""
    n = len(wa)
    adj = D <= eps
    best, arg = 0.0, ()
    for r in range(1, n + 1):
        for A in itertools.combinations(range(n), r):
            nb = np.any(adj[list(A)], axis=0)
            val = float(wa[list(A)].sum() - wb[nb].sum())
            if val > best:
                best, arg = val, A
    return best, arg


def _one_sided_bruteforce(wa, wb, D):
    levels = _levels(D)
    cache = {}

    def deficit(k):
        if k not in cache:
            cache[k] = _subset_deficit(wa, wb, D, levels[k])
        return cache[k][0]

    eps, k = _scan(levels, deficit)
    return eps, k, levels, cache


def prohorov_bruteforce(mu, nu, D, tol: float = 1e-12) -> ProhorovResult:
    """Prohorov distance by enumerating every subset of each support.

    ``D[i, j]`` is the distance between atom ``i`` of ``mu`` and atom ``j`` of
    ``nu``.  Both one-sided values ``inf{eps : mu(A) <= nu(V_eps(A)) + eps}``
    (and the same with the roles swapped) are computed exactly at the
    distance breakpoints.
    """
    wa, wb = _weights(mu), _weights(nu)
    D = np.asarray(D, dtype=float)
    if len(wa) > BRUTE_FORCE_LIMIT or len(wb) > BRUTE_FORCE_LIMIT:
        raise SizeLimit(f"brute force is limited to {BRUTE_FORCE_LIMIT} atoms per support")
    if D.shape != (len(wa), len(wb)):
        raise InvalidParameter("distance matrix shape does not match the supports")
    fwd, k, levels, cache = _one_sided_bruteforce(wa, wb, D)
    bwd, _, _, _ = _one_sided_bruteforce(wb, wa, D.T)
    eps = max(fwd, bwd)
    violating = None
    if fwd > 0:
        lo = max(fwd - tol, 0.0)
        val, A = _subset_deficit(wa, wb, D, lo)
        violating = list(A) if val > lo else None
    return ProhorovResult(eps, max(eps - tol, 0.0), eps, fwd, bwd, [], violating, "subset-enumeration")


def _flow_small(wa, wb, adj):
    """Float max-flow on the bipartite graph; returns value, coupling and the source side of a min cut."""
    G = nx.DiGraph()
    n, k = len(wa), len(wb)
    for i in range(n):
        G.add_edge("s", ("a", i), capacity=float(wa[i]))
    for j in range(k):
        G.add_edge(("b", j), "t", capacity=float(wb[j]))
    for i, j in zip(*np.nonzero(adj)):
        G.add_edge(("a", int(i)), ("b", int(j)))  # no capacity attribute = unbounded
    value, flows = nx.maximum_flow(G, "s", "t")
    coupling = [(i, j, f) for i in range(n) for (_, j), f in flows[("a", i)].items() if f > 0]
    _, (S, _) = nx.minimum_cut(G, "s", "t")
    cut = [i for i in range(n) if ("a", i) in S]
    return float(value), coupling, cut


def _rational_scale(wa, wb):
    """Common integer scale when both weight vectors are multiples of ``1/n`` and ``1/k``."""
    for w in (wa, wb):
        n = len(w)
        if not np.allclose(w * n, np.round(w * n), rtol=0, atol=1e-9):
            return None
    s = len(wa) * len(wb)
    return s if s * 2 < INT32_MAX else None


def _flow_large(wa, wb, adj):
    """Integer max-flow (scipy) with capacities scaled to a common denominator."""
    n, k = len(wa), len(wb)
    s = _rational_scale(wa, wb)
    scale = s if s is not None else 2**30
    ca = np.round(wa * scale).astype(np.int64)
    cb = np.round(wb * scale).astype(np.int64)
    src, snk = 0, n + k + 1
    ii, jj = np.nonzero(adj)
    rows = np.concatenate([np.zeros(n, int), 1 + ii, 1 + n + np.arange(k)])
    cols = np.concatenate([1 + np.arange(n), 1 + n + jj, np.full(k, snk)])
    caps = np.concatenate([ca, np.full(len(ii), INT32_MAX), cb]).astype(np.int32)
    g = sp.csr_array((caps, (rows, cols)), shape=(n + k + 2, n + k + 2))
    res = maximum_flow(g, src, snk)
    F = res.flow.tocsr()
    sub = F[1:n + 1, n + 1:n + k + 1].tocoo()
    coupling = [(int(i), int(j), float(f) / scale) for i, j, f in zip(sub.row, sub.col, sub.data)
                if f > 0]
    # residual reachability from the source gives the min cut
    resid = (g - F).tocsr()
    resid.data[resid.data < 0] = 0
    resid.eliminate_zeros()
    order = breadth_first_order(resid, src, directed=True, return_predecessors=False)
    reach = set(int(x) for x in order)
    cut = [i for i in range(n) if 1 + i in reach]
    return res.flow_value / scale, coupling, cut


def prohorov_flow(mu, nu, D, tol: float = 1e-9) -> ProhorovResult:
    """Prohorov distance from max-flow feasibility tests at the distance breakpoints.

    At a given ``eps`` the largest mass that can be moved along pairs with
    ``D <= eps`` is ``F(eps)``; by max-flow/min-cut
    ``1 - F(eps) = max_A mu(A) - nu(N_eps(A))``, so ``eps`` is admissible iff
    ``F(eps) >= 1 - eps``.  That deficit is constant between consecutive
    distance values, which gives the exact infimum.
    """
    wa, wb = _weights(mu), _weights(nu)
    D = np.asarray(D, dtype=float)
    if D.shape != (len(wa), len(wb)):
        raise InvalidParameter("distance matrix shape does not match the supports")
    levels = _levels(D)
    small = len(wa) * len(wb) <= 400
    solve = _flow_small if small else _flow_large
    cache = {}

    def run(eps):
        key = float(eps)
        if key not in cache:
            cache[key] = solve(wa, wb, D <= eps)
        return cache[key]

    def deficit(k):
        return max(0.0, 1.0 - run(levels[k])[0])

    eps, k = _scan(levels, deficit)
    eps = min(eps, 1.0)
    _, coupling, _ = run(levels[k])
    violating = None
    lo = max(eps - tol, 0.0)
    if eps > 0:
        val, _, cut = run(lo)
        if 1.0 - val > lo:
            violating = cut
    return ProhorovResult(eps, lo, eps, eps, eps, coupling, violating,
                          "max-flow" if small else "max-flow-int")


def cylinder_prohorov_bound(spec: CylinderSpec) -> float:
    """``min(d, l / (l + 2))``: lower bound for the distance between the Dirac
    measure of a closed band geodesic at distance ``d`` from the nearer edge and
    any invariant measure giving full weight to orbits that leave the band."""
    return min(spec.d, spec.l / (spec.l + 2.0))


# -- Prohorov distance to a vertical orbit, for very large empirical measures ------

def _tree_graph(B: int):
    """Heap-indexed segment tree over ``B`` leaves (``B`` a power of two)."""
    rows, cols = [], []
    for node in range(1, B):
        rows += [node, node]
        cols += [2 * node, 2 * node + 1]
    return np.array(rows), np.array(cols)


def _cover(lo: int, hi: int, B: int) -> list:
    """Tree nodes covering leaves ``lo..hi`` (inclusive)."""
    out = []
    lo += B
    hi += B + 1
    while lo < hi:
        if lo & 1:
            out.append(lo)
            lo += 1
        if hi & 1:
            hi -= 1
            out.append(hi)
        lo >>= 1
        hi >>= 1
    return out


def prohorov_to_orbit(m: SurfaceModel, mu: AtomicMeasure, A, N: int = 1024, block: int = 4,
                      tol: float = 1e-6) -> ProhorovResult:
    """Lower bound for the Prohorov distance between ``mu`` and the ``N``-atom Dirac measure on ``A``.

    ``A`` is a vertical band geodesic.  Each atom of ``mu`` is joined to the
    arc of orbit atoms within ``eps``; arcs are widened to whole blocks of
    ``block`` atoms and off-band atoms use distance lower bounds, so every
    true coupling edge is kept and the result never exceeds the exact value.
    Identical arcs are merged and the arcs are attached to a segment tree,
    which keeps the flow network small for millions of atoms.
    """
    if not mu.equal_weights:
        raise NotApplicable("the orbit algorithm expects an equal-weight empirical measure")
    v = A.initial if hasattr(A, "initial") else A
    if v.chart != m.band_chart or math.sin(v.alpha) != 0.0:
        raise NotApplicable("A must be a vertical band geodesic")
    if N % block:
        raise InvalidParameter("block must divide N")
    B = N // block
    if B & (B - 1):
        raise InvalidParameter("N / block must be a power of two")
    n = len(mu)
    if n * B >= INT32_MAX // 2:
        raise SizeLimit("measure too large for 32-bit flow capacities")
    rho_A, alpha_A = v.c1, v.alpha
    w = m.warp
    d = min(rho_A - w.lo, w.hi - rho_A)
    dphi = TWO_PI / N
    phi0 = v.c2

    inband = mu.charts == m.band_chart
    q = np.full(n, math.inf)
    rb = mu.c1[inband]
    r = np.abs(rb - rho_A)
    S = _crossing_length(m)
    alt = np.minimum(w.hi - rb, rb - w.lo) + S + d
    r = np.minimum(r, alt)
    th = np.abs(np.mod(mu.alpha[inband] - alpha_A + math.pi, TWO_PI) - math.pi)
    q[inband] = np.hypot(r, th)
    off = _band_lb_array(m, mu.charts, mu.c1) + d
    # position along the orbit in units of atom spacing
    pos = np.mod((mu.c2 - phi0) / dphi, N)

    t_rows, t_cols = _tree_graph(B)
    src = 0
    node0 = 1  # tree nodes occupy 1 .. 2B-1 (heap index), source 0, sink 2B
    sink = 2 * B
    # units of 1 / (n B): a mu atom carries B units, a block carries n units
    leaf_rows = node0 - 1 + np.arange(B, 2 * B)

    def feasible(eps):
        near = q <= eps
        full = (~inband) & (off <= eps)
        a = np.zeros(n)
        a[near] = np.sqrt(np.maximum(eps * eps - q[near] ** 2, 0.0)) / (m.h * dphi)
        whole = full | (near & (a >= N / 2))
        part = near & ~whole
        lo = np.floor((pos[part] - a[part]) / block).astype(np.int64)
        hi = np.floor((pos[part] + a[part]) / block).astype(np.int64)
        keys = np.stack([lo, hi], axis=1)
        uniq, counts = (np.unique(keys, axis=0, return_counts=True) if len(keys)
                        else (np.zeros((0, 2), np.int64), np.zeros(0, np.int64)))
        n_whole = int(np.count_nonzero(whole))
        n_groups = len(uniq)
        first = sink + 1
        r_list = [t_rows, leaf_rows]
        c_list = [t_cols, np.full(B, sink)]
        cap_list = [np.full(len(t_rows), INT32_MAX), np.full(B, n)]
        if n_whole:
            r_list.append(np.array([src]))
            c_list.append(np.array([1]))
            cap_list.append(np.array([n_whole * B]))
        er, ec = [], []
        for g, (l0, h0) in enumerate(uniq):
            nodeg = first + g
            if h0 - l0 + 1 >= B:
                segs = [(0, B - 1)]
            else:
                l1, h1 = l0 % B, h0 % B
                segs = [(l1, h1)] if l1 <= h1 else [(l1, B - 1), (0, h1)]
            for s0, s1 in segs:
                for t in _cover(s0, s1, B):
                    er.append(nodeg)
                    ec.append(t)
        if n_groups:
            r_list += [np.full(n_groups, src), np.array(er)]
            c_list += [first + np.arange(n_groups), np.array(ec)]
            cap_list += [counts * B, np.full(len(er), INT32_MAX)]
        size = first + n_groups
        g = sp.csr_array((np.concatenate(cap_list).astype(np.int32),
                          (np.concatenate(r_list), np.concatenate(c_list))), shape=(size, size))
        g.sum_duplicates()
        flow = maximum_flow(g, src, sink).flow_value
        return flow >= (1.0 - eps) * n * B - 1e-9 * n * B

    lo_e, hi_e = 0.0, 1.0
    if feasible(0.0):
        hi_e = 0.0
    while hi_e - lo_e > tol:
        mid = 0.5 * (lo_e + hi_e)
        if feasible(mid):
            hi_e = mid
        else:
            lo_e = mid
    return ProhorovResult(lo_e, lo_e, hi_e, None, None, [], None, "orbit-interval-flow", True)
