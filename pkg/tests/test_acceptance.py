"""Acceptance criteria 1-9, each at its stated tolerance and time limit.

Every test prints one ``[PASS]``/``[FAIL]`` line (visible with ``pytest -v -s``
and in the captured output of ``pytest -v``).
"""

import math
import time

import numpy as np
import pytest

from flatlab import hyperbolic as hb
from flatlab.flow import BAND_ENTER, integrate, transit_report
from flatlab.lab.config import ScenarioConfig
from flatlab.lab.scenarios import run_scenario
from flatlab.measure import RegionSpec, occupancy, prohorov_bruteforce, prohorov_flow, transit_window_time
from flatlab.surface import (TWO_PI, build_cylinder_with_funnels, build_flat_cylinder_torus,
                             build_flat_ended_torus, circle_gap, curvature_at, vectors_from_halfplane)


def verdict(capsys, k, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail} ({elapsed:.1f} s, limit {limit:.0f} s)")
    assert ok, detail


def state_gap(a, b):
    # the warped charts share (rho, phi, alpha); a point on a band edge may carry either label
    if a.chart != b.chart and "hyperbolic" in (a.chart, b.chart):
        return math.inf
    if a.chart == "hyperbolic":
        X1, V1 = vectors_from_halfplane(a.c1, a.c2, a.alpha)
        X2, V2 = vectors_from_halfplane(b.c1, b.c2, b.alpha)
        return float(max(np.max(np.abs(X1 - X2)), np.max(np.abs(V1 - V2))))
    return max(abs(a.c1 - b.c1), circle_gap(a.c2, b.c2), abs(hb.wrap_angle(a.alpha - b.alpha)))


@pytest.fixture(scope="module")
def models():
    return [build_flat_cylinder_torus(), build_flat_ended_torus(), build_cylinder_with_funnels(2.0, 1.0)]


def test_criterion_1_transit_law(models, capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, same_side, completed = 0.0, 0, 0
    crossing = [m for m in models if math.isfinite(m.l)]
    per = 500 // len(crossing) + 1
    for m in crossing:
        w = m.warp
        for _ in range(per):
            th = rng.uniform(0.02, math.pi / 2)
            up = rng.random() < 0.5
            a = th if up else -th
            if rng.random() < 0.5:
                a = math.pi - a
            v = m.tangent(m.band_chart, w.lo if up else w.hi, rng.uniform(0, TWO_PI), a)
            v = integrate(m, v, -0.3).end  # start in the flank, heading for the band
            seg = integrate(m, v, m.l / math.sin(th) + 0.6)
            for tr in transit_report(seg):
                if tr.open:
                    continue
                completed += 1
                worst = max(worst, abs(tr.duration - m.l / math.sin(tr.theta)))
                r0 = seg.state_at(tr.enter.t).c1
                r1 = seg.state_at(tr.exit.t).c1
                same_side += not (abs(r1 - r0) > 0.99 * m.l and tr.enter.side == tr.exit.side)
    # the flat end has no far edge: every entry is open and never comes back
    ended = next(m for m in models if not math.isfinite(m.l))
    returns = 0
    for _ in range(20):
        v = ended.tangent("end", 0.0, rng.uniform(0, TWO_PI), rng.uniform(0.05, math.pi - 0.05))
        seg = integrate(ended, integrate(ended, v, -0.3).end, 30.0)
        returns += sum(e.kind == BAND_ENTER for e in seg.events) > 1
        returns += any(not tr.open for tr in transit_report(seg))
    ok = completed >= 500 and worst < 1e-9 and same_side == 0 and returns == 0
    verdict(capsys, 1, ok, f"{completed} transits, max |duration - l/sin(theta)| = {worst:.2e}, "
            f"same-side exits {same_side}, flat-end returns {returns}", time.perf_counter() - t0, 30)


def test_criterion_2_window_time(capsys):
    t0 = time.perf_counter()
    m = build_flat_cylinder_torus()
    d = 2.0
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        th = rng.uniform(1e-3, min(d, math.pi / 2) - 1e-3)
        eps = rng.uniform(th, d)
        v = m.tangent("band", m.warp.lo, rng.uniform(0, TWO_PI), th)
        s = occupancy(m, v, m.l / math.sin(th), RegionSpec.V(eps))
        worst = max(worst, abs(s.occupied - 2 * math.sqrt(eps * eps - th * th) / math.sin(th)),
                    abs(s.occupied - transit_window_time(eps, th)))
    verdict(capsys, 2, worst < 1e-9, f"200 windows, max error {worst:.2e}", time.perf_counter() - t0, 10)


def test_criterion_3_occupancy(capsys):
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig("ergodic-gap"), 1)
    worst = max(rep.results["max_fraction"].values())
    verdict(capsys, 3, rep.exit_code == 0 and worst <= 0.5,
            f"100 starts, T in 1e2..1e4, max occupancy fraction {worst:.4f} <= 1/2",
            time.perf_counter() - t0, 300)


def test_criterion_4_prohorov_bound(capsys):
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig("prohorov-bound"), 1)
    final = [a for a in rep.assertions if "T=100000" in a.name]
    ok = rep.exit_code == 0 and final and final[0].measured >= 2.0 / 3.0 - 0.02
    detail = f"distance at T=1e5 {final[0].measured:.4f} >= {2 / 3 - 0.02:.4f}" if final else "missing"
    verdict(capsys, 4, ok, detail, time.perf_counter() - t0, 300)


def test_criterion_5_prohorov_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n, k = rng.integers(1, 5, 2)
        a = rng.random(n) + 0.05
        b = rng.random(k) + 0.05
        D = rng.random((n, k)) * 1.5
        r1 = prohorov_bruteforce(a / a.sum(), b / b.sum(), D)
        r2 = prohorov_flow(a / a.sum(), b / b.sum(), D)
        worst = max(worst, abs(r1.distance - r2.distance))
    cases = [
        prohorov_flow([1.0], [1.0], [[0.0]]).distance - 0.0,
        prohorov_flow([1.0], [1.0], [[0.4]]).distance - 0.4,
        prohorov_flow([1.0], [1.0], [[3.0]]).distance - 1.0,
        prohorov_flow([0.5, 0.5], [1.0], [[0.0], [5.0]]).distance - 0.5,
    ]
    worst_case = max(abs(c) for c in cases)
    verdict(capsys, 5, worst < 1e-9 and worst_case < 1e-9,
            f"200 instances max gap {worst:.2e}, analytic cases max error {worst_case:.2e}",
            time.perf_counter() - t0, 30)


def test_criterion_6_closing_lemma(capsys):
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig("closing-lemma"), 1)
    by = {a.name: a for a in rep.assertions}
    floor = by["minimal closing defect over the search"].measured
    shadow = by["control shadowing distance"].measured
    verdict(capsys, 6, rep.exit_code == 0,
            f"certificate emitted, search floor {floor:.4f} >= 0.1, control shadowed within {shadow:.2e}",
            time.perf_counter() - t0, 600)


def test_criterion_7_conservation(models, capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    drift, speed, comp, rev = 0.0, 0.0, 0.0, 0.0
    for m in models:
        w = m.warp
        top = min(w.hi, w.lo + 2.0)
        for _ in range(2):
            v = m.tangent(m.band_chart, rng.uniform(w.lo, top), rng.uniform(0, TWO_PI), rng.uniform(-3, 3))
            seg = integrate(m, v, 1e3)
            for i, _, dr in seg.clairaut:
                drift = max(drift, dr / max(seg.arcs[i].duration, 1e-6))
            speed = max(speed, seg.speed_defect())
        for _ in range(20):
            v = m.tangent(m.band_chart, rng.uniform(w.lo, top), rng.uniform(0, TWO_PI), rng.uniform(-3, 3))
            T = 10.0
            end = integrate(m, v, T).end
            s = rng.uniform(0, T)
            comp = max(comp, state_gap(integrate(m, integrate(m, v, s).end, T - s).end, end))
            rev = max(rev, state_gap(integrate(m, end, -T).end, v))
    ok = drift < 1e-9 and speed < 1e-10 and comp < 1e-8 and rev < 1e-8
    verdict(capsys, 7, ok, f"Clairaut drift/time {drift:.1e}, speed defect {speed:.1e}, "
            f"composition {comp:.1e}, reversibility {rev:.1e}", time.perf_counter() - t0, 60)


def _warped_second_difference(w, rho, delta=1e-4):
    f0 = w.f(rho)
    return -(w.f(rho + delta) - 2.0 * f0 + w.f(rho - delta)) / (delta * delta) / f0


def _hyperbolic_second_difference(x, y):
    # metric e^{2u}(dx^2 + dy^2) with u = -log y; K = -e^{-2u} (u_xx + u_yy)
    d = 1e-4 * y

    def u(a, b):
        return -math.log(b)

    lap = (u(x + d, y) + u(x - d, y) + u(x, y + d) + u(x, y - d) - 4.0 * u(x, y)) / (d * d)
    return -y * y * lap


def test_criterion_8_curvature(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    funnels = build_cylinder_with_funnels(2.0, 0.5)
    torus = build_flat_cylinder_torus()
    worst = {"band": 0.0, "flank": 0.0, "hyperbolic": 0.0}
    target_ok = True
    w = funnels.warp
    for _ in range(1000):
        rho = rng.uniform(w.lo + 1e-3, w.hi - 1e-3)
        k = curvature_at(funnels, ("band", rho, 0.0))
        target_ok &= k == 0.0
        worst["band"] = max(worst["band"], abs(k - _warped_second_difference(w, rho)))
    for _ in range(1000):
        x = rng.uniform(1e-3, 3.0)
        rho = w.hi + x if rng.random() < 0.5 else w.lo - x
        chart = funnels.warped_chart_of(rho)
        k = curvature_at(funnels, (chart, rho, 0.0))
        target_ok &= abs(k + 1.0 / funnels.h ** 2) < 1e-12
        worst["flank"] = max(worst["flank"], abs(k - _warped_second_difference(w, rho)))
    for _ in range(1000):
        x, y = rng.uniform(-2.0, 2.0), math.exp(rng.uniform(-3.0, 3.0))
        k = curvature_at(torus, ("hyperbolic", x, y))
        target_ok &= k == -1.0
        worst["hyperbolic"] = max(worst["hyperbolic"], abs(k - _hyperbolic_second_difference(x, y)))
    ok = target_ok and max(worst.values()) < 1e-6
    verdict(capsys, 8, ok, "K = 0 / -1/h^2 / -1, max second-difference error "
            + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), time.perf_counter() - t0, 10)


def test_criterion_9_flat_end(capsys):
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig("nonwandering"), 1)
    ratio = [a for a in rep.assertions if a.name.startswith("final distance")][0].measured
    verdict(capsys, 9, rep.exit_code == 0,
            f"all end vectors certified, W_n distances strictly decreasing, final/initial {ratio:.2e}",
            time.perf_counter() - t0, 300)
