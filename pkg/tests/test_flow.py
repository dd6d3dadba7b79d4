import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatlab import _fastflow as ff
from flatlab import hyperbolic as hb
from flatlab.errors import InvalidParameter
from flatlab.flow import (BAND_ENTER, BAND_EXIT, RANK_ONE, RANK_TWO, flip, integrate, is_rank_one,
                          iter_arcs, transit_report)
from flatlab.surface import (TWO_PI, UnitTangent, build_cylinder_with_funnels, build_flat_cylinder_torus,
                             circle_gap, vectors_from_halfplane)

TORUS = build_flat_cylinder_torus()
FUNNELS = build_cylinder_with_funnels(2.0, 1.0)


def state_gap(a, b):
    # the warped charts share (rho, phi, alpha); a point on a band edge may carry either label
    if a.chart != b.chart and "hyperbolic" in (a.chart, b.chart):
        return math.inf
    if a.chart == "hyperbolic":
        X1, V1 = vectors_from_halfplane(a.c1, a.c2, a.alpha)
        X2, V2 = vectors_from_halfplane(b.c1, b.c2, b.alpha)
        return float(max(np.max(np.abs(X1 - X2)), np.max(np.abs(V1 - V2))))
    return max(abs(a.c1 - b.c1), circle_gap(a.c2, b.c2), abs(hb.wrap_angle(a.alpha - b.alpha)))


def test_vertical_band_orbit_is_periodic(torus):
    v = UnitTangent("band", 0.7, 1.0, 0.0)
    seg = integrate(torus, v, TWO_PI * torus.h)
    assert seg.events == []
    assert state_gap(seg.end, v) < 1e-12


def test_flat_leg_is_a_straight_line(torus):
    v = UnitTangent("band", -1.0, 0.5, 0.3)
    end = integrate(torus, v, 2.0).end
    assert end.c1 == pytest.approx(-1.0 + 2.0 * math.sin(0.3), abs=1e-14)
    assert end.alpha == pytest.approx(0.3, abs=1e-14)


def test_events_alternate_and_sides_match(torus):
    v = torus.tangent("hyperbolic", 0.1, 1.3, 0.7)
    seg = integrate(torus, v, 200.0)
    kinds = [e.kind for e in seg.events if e.kind in (BAND_ENTER, BAND_EXIT)]
    assert kinds, "the orbit should visit the band"
    for a, b in zip(kinds, kinds[1:]):
        assert a != b
    for tr in transit_report(seg):
        if not tr.open:
            assert tr.duration == pytest.approx(torus.l / math.sin(tr.theta), abs=1e-9)
            # a completed transit never turns back inside the flat band
            assert tr.enter.side == tr.exit.side


def test_reverse_flow_flips_events(torus):
    v = UnitTangent("band", 0.0, 0.0, math.pi / 6)
    fwd = integrate(torus, v, 12.0)
    back = integrate(torus, fwd.end, -12.0)
    assert state_gap(back.end, v) < 1e-9
    assert [e.kind for e in back.events].count(BAND_EXIT) == [e.kind for e in fwd.events].count(BAND_ENTER)


def test_flip_is_an_involution():
    v = UnitTangent("band", 0.2, 1.0, 0.4)
    assert state_gap(flip(flip(v)), v) < 1e-15


def test_nonfinite_time_rejected(torus):
    with pytest.raises(InvalidParameter):
        integrate(torus, UnitTangent("band", 0.0, 0.0, 0.1), math.inf)
    with pytest.raises(InvalidParameter):
        is_rank_one(torus, UnitTangent("band", 0.0, 0.0, 0.1), 0.0)


def test_rank_tags(torus):
    assert is_rank_one(torus, UnitTangent("band", 0.0, 0.0, 0.0), 5.0) == RANK_TWO
    assert is_rank_one(torus, UnitTangent("band", 0.0, 0.0, 0.5), 5.0) == RANK_ONE


def test_funnel_orbits_escape(funnels):
    v = UnitTangent("band", 0.0, 0.0, 0.8)
    seg = integrate(funnels, v, 30.0)
    assert seg.end.chart == "funnel"
    assert abs(seg.end.c1) > 5.0


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.0, TWO_PI), st.floats(-math.pi, math.pi), st.floats(0.5, 8.0),
       st.floats(0.1, 0.9))
def test_composition_and_reversal(rho, phi, alpha, T, frac):
    v = TORUS.tangent("band", rho, phi, alpha)
    end = integrate(TORUS, v, T).end
    s = frac * T
    mid = integrate(TORUS, v, s).end
    assert state_gap(integrate(TORUS, mid, T - s).end, end) < 1e-8
    assert state_gap(integrate(TORUS, end, -T).end, v) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.0, TWO_PI), st.floats(-math.pi, math.pi), st.floats(0.5, 8.0))
def test_speed_and_clairaut_conserved(rho, phi, alpha, T):
    seg = integrate(FUNNELS, FUNNELS.tangent("band", rho, phi, alpha), T)
    assert seg.speed_defect() < 1e-10
    for i, p, drift in seg.clairaut:
        assert drift <= 1e-9 * max(seg.arcs[i].duration, 1.0)
    assert seg.junction_gap() < 1e-9


@pytest.mark.parametrize("which", ["torus", "ended"])
def test_compiled_kernel_matches_reference(which, request):
    m = request.getfixturevalue(which)
    P = ff.pack(m)
    rng = np.random.default_rng(5)
    for _ in range(8):
        rho = rng.uniform(0.0, 2.0) if m.preset == "FlatEndedTorus" else rng.uniform(-2.0, 2.0)
        v = m.tangent(m.band_chart, rho, rng.uniform(0, TWO_PI), rng.uniform(-3, 3))
        T = 15.0
        ref = integrate(m, v, T, record=False).final
        out = ff.run(ff.BAND, v.c1, v.c2, v.alpha, np.zeros(3), np.zeros(3), T,
                     np.array([v.c1, v.c2, v.alpha]), T - 1.0, T + 1.0, *P)
        assert out[8] == 0
        if out[0] == ff.HYP:
            X, V = vectors_from_halfplane(ref.c1, ref.c2, ref.alpha)
            assert np.max(np.abs(out[4] - X)) < 1e-6
            assert np.max(np.abs(out[5] - V)) < 1e-6
        else:
            assert ref.chart != "hyperbolic"
            assert abs(out[1] - ref.c1) < 1e-6
            assert circle_gap(out[2], ref.c2) < 1e-6
            assert abs(hb.wrap_angle(out[3] - ref.alpha)) < 1e-6


def test_arc_iterator_covers_the_time(torus):
    v = torus.tangent("hyperbolic", 0.1, 1.3, 0.7)
    arcs = list(iter_arcs(torus, v, 50.0))
    assert sum(a.duration for a in arcs) == pytest.approx(50.0, abs=1e-9)
    for a, b in zip(arcs, arcs[1:]):
        assert b.t0 == pytest.approx(a.t0 + a.duration, abs=1e-9)
