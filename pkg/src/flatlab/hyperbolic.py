"""Hyperbolic plane primitives.

Three coordinate systems are used side by side:

* the upper half-plane, for user-facing coordinates ``(x, y)`` and a
  direction angle ``alpha`` measured counter-clockwise from the upward
  vertical;
* unit tangent frames ``g`` in SL(2, R), with ``g . i`` the base point and
  the flow acting by right multiplication with ``diag(e^{t/2}, e^{-t/2})``;
* the hyperboloid model with Minkowski form ``-x0 y0 + x1 y1 + x2 y2``,
  where geodesics are planes ``<X, n> = 0`` and ``sinh`` of the signed
  distance to a geodesic is linear in ``(cosh t, sinh t)`` along any other
  geodesic.  Every boundary event therefore has a closed-form time.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NotHyperbolic

INF = float("inf")


def mdot(u, v) -> float:
    return -u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def as_matrix(m) -> np.ndarray:
    g = np.asarray(m, dtype=float).reshape(2, 2)
    return g


def sl2_inverse(g: np.ndarray) -> np.ndarray:
    a, b, c, d = g[0, 0], g[0, 1], g[1, 0], g[1, 1]
    return np.array([[d, -b], [-c, a]])


def normalize_sl2(g: np.ndarray) -> np.ndarray:
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    return g / math.sqrt(det)


def so21(g) -> np.ndarray:
    """Matrix of the isometry ``g`` acting on the hyperboloid (columns = images of the basis)."""
    a, b, c, d = float(g[0][0]), float(g[0][1]), float(g[1][0]), float(g[1][1])
    return np.array(
        [
            [(a * a + b * b + c * c + d * d) / 2, (a * a - b * b + c * c - d * d) / 2, a * b + c * d],
            [(a * a + b * b - c * c - d * d) / 2, (a * a - b * b - c * c + d * d) / 2, a * b - c * d],
            [a * c + b * d, a * c - b * d, a * d + b * c],
        ]
    )


def mobius(g, z):
    a, b, c, d = g[0][0], g[0][1], g[1][0], g[1][1]
    if z == INF:
        return INF if c == 0 else a / c
    den = c * z + d
    if den == 0:
        return INF
    return (a * z + b) / den


def to_hyperboloid(x: float, y: float) -> np.ndarray:
    r2 = x * x + y * y
    return np.array([(r2 + 1) / (2 * y), (r2 - 1) / (2 * y), x / y])


def from_hyperboloid(X) -> tuple[float, float]:
    y = 1.0 / (X[0] - X[1])
    return X[2] * y, y


def null_vector(p: float) -> np.ndarray:
    """Future light-like vector representing the ideal point ``p`` (``inf`` allowed)."""
    if p == INF or p == -INF:
        return np.array([1.0, 1.0, 0.0])
    s = 1.0 + p * p
    return np.array([1.0, (p * p - 1) / s, 2 * p / s])


def geodesic_normal(p: float, q: float) -> np.ndarray:
    """Unit spacelike normal of the geodesic with ideal endpoints ``p`` and ``q``."""
    lp, lq = null_vector(p), null_vector(q)
    cr = np.cross(lp, lq)
    n = np.array([-cr[0], cr[1], cr[2]])
    return n / math.sqrt(mdot(n, n))


def frame_from_tangent(x: float, y: float, alpha: float) -> np.ndarray:
    sy = math.sqrt(y)
    th = -alpha / 2
    ct, st = math.cos(th), math.sin(th)
    p = np.array([[sy, x / sy], [0.0, 1.0 / sy]])
    k = np.array([[ct, -st], [st, ct]])
    return p @ k


def tangent_from_frame(g) -> tuple[float, float, float]:
    a, b, c, d = g[0][0], g[0][1], g[1][0], g[1][1]
    s = c * c + d * d
    x = (a * c + b * d) / s
    y = 1.0 / s
    alpha = wrap_angle(-2.0 * math.atan2(c, d))
    return x, y, alpha


def frame_from_vectors(X, V) -> np.ndarray:
    """SL(2, R) frame of the unit tangent vector ``(X, V)`` on the hyperboloid."""
    d0 = X[0] - X[1]
    y = 1.0 / d0
    x = X[2] * y
    ydot = -(V[0] - V[1]) * y * y
    xdot = V[2] * y + X[2] * ydot
    alpha = math.atan2(-xdot, ydot)
    return frame_from_tangent(x, y, alpha)


def frame_vectors(g) -> tuple[np.ndarray, np.ndarray]:
    """Base point and unit velocity of the frame ``g`` on the hyperboloid."""
    M = so21(g)
    return M[:, 0].copy(), M[:, 1].copy()


def geodesic_flow_matrix(t: float) -> np.ndarray:
    return np.array([[math.exp(t / 2), 0.0], [0.0, math.exp(-t / 2)]])


def flip_frame(g: np.ndarray) -> np.ndarray:
    """Frame of the opposite unit vector (rotation by pi in the fibre)."""
    return g @ np.array([[0.0, 1.0], [-1.0, 0.0]])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; angles already in range are returned unchanged."""
    if -math.pi < a <= math.pi:
        return a
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w <= 0:
        w += 2 * math.pi
    return w - math.pi


def trace(g) -> float:
    return float(g[0][0] + g[1][1])


def translation_length(g) -> float:
    t = abs(trace(g))
    if t <= 2.0:
        raise NotHyperbolic(f"|trace| = {t:.15g} is not > 2")
    return 2.0 * math.acosh(t / 2.0)


def fixed_points(g) -> tuple[float, float]:
    """Repelling and attracting fixed points of a hyperbolic (or parabolic) element."""
    a, b, c, d = (float(v) for v in (g[0][0], g[0][1], g[1][0], g[1][1]))
    tr = a + d
    if abs(c) < 1e-300:
        # fixes infinity; the other fixed point is b / (d - a)
        if abs(d - a) < 1e-14:
            return INF, INF
        other = b / (d - a)
        # infinity attracts iff |a| > |d|
        return (other, INF) if abs(a) > abs(d) else (INF, other)
    disc = (a - d) ** 2 + 4 * b * c
    disc = max(disc, 0.0)
    r = math.sqrt(disc)
    z1 = (a - d + r) / (2 * c)
    z2 = (a - d - r) / (2 * c)
    # |g'(z)| = 1/|cz+d|^2 < 1 at the attracting point
    if abs(c * z1 + d) > abs(c * z2 + d):
        return z2, z1
    if abs(tr) <= 2.0:
        return z1, z1
    return z1, z2


def commutator(A, B) -> np.ndarray:
    return A @ B @ sl2_inverse(A) @ sl2_inverse(B)


def solve_cosh_sinh(a: float, b: float, c: float) -> list[float]:
    """Real roots of ``a cosh t + b sinh t = c``."""
    A = a + b
    C = a - b
    Bq = -2.0 * c
    roots = []
    disc = Bq * Bq - 4 * A * C
    if disc < 0:
        return roots
    sq = math.sqrt(disc)
    if A == 0.0:
        if Bq != 0.0:
            u = -C / Bq
            if u > 0:
                roots.append(math.log(u))
        return roots
    q = -0.5 * (Bq + math.copysign(sq, Bq)) if Bq != 0 else 0.5 * sq
    cands = [q / A] if q == 0 else [q / A, C / q]
    for u in cands:
        if u > 0 and math.isfinite(u):
            roots.append(math.log(u))
    return roots


class FermiFrame:
    """Fermi coordinates ``(rho, s)`` about an oriented geodesic of the hyperboloid.

    ``X = cosh(rho) (cosh(s) e0 + sinh(s) e1) + sinh(rho) n``.
    """

    def __init__(self, e0: np.ndarray, e1: np.ndarray, n: np.ndarray):
        self.e0, self.e1, self.n = e0, e1, n

    @classmethod
    def from_endpoints(cls, start: float, end: float, side=None) -> "FermiFrame":
        lu, lv = null_vector(start), null_vector(end)
        k = 1.0 / math.sqrt(-2.0 * mdot(lu, lv))
        lu, lv = lu * k, lv * k
        e0 = lu + lv
        e1 = lv - lu
        cr = np.cross(e0, e1)
        n = np.array([-cr[0], cr[1], cr[2]])
        n = n / math.sqrt(mdot(n, n))
        if side is not None and mdot(side, n) > 0:
            n = -n
        return cls(e0, e1, n)

    def coords(self, X, V) -> tuple[float, float, float]:
        """Return ``(rho, s, alpha)`` with ``alpha`` measured from the ``+s`` direction."""
        sr = mdot(X, self.n)
        rho = math.asinh(sr)
        cr = math.cosh(rho)
        s = math.asinh(mdot(X, self.e1) / cr)
        cs, ss = math.cosh(s), math.sinh(s)
        e_rho = math.sinh(rho) * (cs * self.e0 + ss * self.e1) + cr * self.n
        e_s = ss * self.e0 + cs * self.e1
        alpha = math.atan2(mdot(V, e_rho), mdot(V, e_s))
        return rho, s, alpha

    def vectors(self, rho: float, s: float, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        cr, sr = math.cosh(rho), math.sinh(rho)
        cs, ss = math.cosh(s), math.sinh(s)
        base = cs * self.e0 + ss * self.e1
        X = cr * base + sr * self.n
        e_rho = sr * base + cr * self.n
        e_s = ss * self.e0 + cs * self.e1
        V = math.sin(alpha) * e_rho + math.cos(alpha) * e_s
        return X, V

    def transformed(self, M: np.ndarray) -> "FermiFrame":
        return FermiFrame(M @ self.e0, M @ self.e1, M @ self.n)

    def shifted(self, s: float) -> "FermiFrame":
        """Same geodesic and side, with the arclength origin moved to ``s``."""
        cs, ss = math.cosh(s), math.sinh(s)
        return FermiFrame(cs * self.e0 + ss * self.e1, ss * self.e0 + cs * self.e1, self.n.copy())

    def flipped(self) -> "FermiFrame":
        return FermiFrame(self.e0, self.e1, -self.n)
