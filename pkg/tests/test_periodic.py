import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from flatlab import hyperbolic as hb
from flatlab.errors import ContractViolation, NotApplicable, NotHyperbolic
from flatlab.flow import RANK_ONE, RANK_TWO, integrate
from flatlab.periodic import (ClosedGeodesic, ObstructionCertificate, ShadowingQuery, _cut_power,
                              _cyclic_reduce, axis_distance_to_cut, axis_from_word, catalog_json,
                              chart_distance, closure_residual, control_pseudo_orbit, endpoint_transit,
                              refine_periodic, shadowing_search, transit_sign_certificate,
                              vertical_family)
from flatlab.surface import TWO_PI, UnitTangent, build_flat_cylinder_torus

TORUS = build_flat_cylinder_torus()
INV = str.maketrans("ABab", "abAB")


def inverse(word):
    return word[::-1].translate(INV)


words = st.text(alphabet="ABab", min_size=1, max_size=6)


@settings(max_examples=50, deadline=None)
@given(words, words)
def test_axis_length_is_a_conjugacy_invariant(w, g):
    W = TORUS.hyperbolic.word_matrix(w)
    assume(abs(hb.trace(W)) > 2.0 + 1e-6)
    L = hb.translation_length(W)
    for other in (g + w + inverse(g), inverse(w)):
        L2 = hb.translation_length(TORUS.hyperbolic.word_matrix(other))
        assert L2 == pytest.approx(L, rel=1e-9, abs=1e-9)


def test_cut_axis_is_the_band_geodesic():
    c = axis_from_word(TORUS, "A")
    assert c.period == pytest.approx(2 * math.acosh(1.5), abs=1e-14)
    assert c.meta["coincides_with_cut"] and c.guess
    r = refine_periodic(TORUS, c)
    assert r.rank == RANK_TWO
    assert r.period == pytest.approx(TWO_PI * TORUS.h, abs=1e-14)
    r2 = refine_periodic(TORUS, axis_from_word(TORUS, "AA"))
    assert r2.period == pytest.approx(2 * r.period, abs=1e-13)


def test_parabolic_word_is_rejected():
    with pytest.raises(NotHyperbolic):
        axis_from_word(TORUS, "ABab")


@pytest.mark.parametrize("word", ["ABAb", "BAbA", "AABAb"])
def test_unmodified_axes_close(word):
    c = axis_from_word(TORUS, word)
    assert not c.guess and c.rank == RANK_ONE
    assert c.residual < 1e-12
    assert closure_residual(TORUS, c.initial, c.period) < 1e-8
    assert refine_periodic(TORUS, c) is c


def test_vertical_family_is_exact(torus, ended):
    for m in (torus, ended):
        fam = vertical_family(m, n=5)
        for c in fam.members:
            assert c.period == TWO_PI * m.h and c.residual == 0.0
            end = integrate(m, c.initial, c.period).end
            assert end.c1 == c.initial.c1 and end.alpha == c.initial.alpha
            assert math.cos(end.c2 - c.initial.c2) == pytest.approx(1.0, abs=1e-15)
    fam = vertical_family(torus, torus.cylinder_spec(0.0))
    assert fam.designated_orbit.initial.c1 == 0.0
    assert json.loads(catalog_json(fam.members))


def test_closed_geodesic_contract():
    v = UnitTangent("band", 0.0, 0.0, 0.0)
    with pytest.raises(ContractViolation):
        ClosedGeodesic(v, -1.0, 0.0, RANK_TWO)
    with pytest.raises(ContractViolation):
        ClosedGeodesic(v, 1.0, 1e-3, RANK_TWO)
    ClosedGeodesic(v, 1.0, 1e-3, RANK_TWO, guess=True)


@given(st.floats(0.05, 3.0), st.floats(-3.0, -0.05), st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
def test_sign_certificate(a1, a2, r1, r2):
    up = endpoint_transit(TORUS, UnitTangent("band", r1, 0.0, a1))
    down = endpoint_transit(TORUS, UnitTangent("band", r2, 0.0, a2))
    assert up.sign == 1 and down.sign == -1
    assert up.duration == pytest.approx(TORUS.l / math.sin(up.theta), abs=1e-9)
    cert = transit_sign_certificate(up, down, 0.3, 0.6)
    assert isinstance(cert, ObstructionCertificate) and cert.verdict == "closure-obstructed"
    assert transit_sign_certificate(up, up) is None
    assert transit_sign_certificate(down, down) is None


def test_certificate_contract(ended):
    with pytest.raises(ContractViolation):
        ObstructionCertificate(1, 1, 0.1, 0.1)
    with pytest.raises(NotApplicable):
        endpoint_transit(TORUS, UnitTangent("band", 0.0, 0.0, 0.0))
    with pytest.raises(NotApplicable):
        endpoint_transit(ended, UnitTangent("end", 1.0, 0.0, 0.5))
    with pytest.raises(NotApplicable):
        transit_sign_certificate(None, None)


def test_chart_distance_is_a_metric_on_samples():
    a = TORUS.tangent("hyperbolic", 0.1, 1.3, 0.7)
    b = TORUS.tangent("hyperbolic", 0.12, 1.25, 0.6)
    assert chart_distance(TORUS, a, a) < 1e-12
    assert chart_distance(TORUS, a, b) == pytest.approx(chart_distance(TORUS, b, a), abs=1e-12)


def test_control_pseudo_orbit_is_shadowed():
    seg, axis = control_pseudo_orbit(TORUS, "BAbA", 1e-3)
    q = ShadowingQuery(seg, 1e-2, 1.0)
    assert q.gap(TORUS) == pytest.approx(1e-3, rel=0.05)
    res = shadowing_search(TORUS, q)
    assert res.kind == "closed"
    assert res.shadow_distance < 1e-2
    assert res.closed.period == pytest.approx(axis.period, abs=1e-6)


def test_control_rejects_modified_axis():
    with pytest.raises(NotApplicable):
        control_pseudo_orbit(TORUS, "AB")


def test_cyclic_words():
    assert _cyclic_reduce("aABab") == "a"
    assert _cyclic_reduce("CAc") == "A"
    assert _cut_power("C", "ABab") == 1
    assert _cut_power("bABa", "ABab") == 1
    assert _cut_power("cc", "ABab") == -2
    assert _cut_power("CAC", "ABab") == 0


def test_nested_axes_approach_the_boundary(ended):
    d = [axis_distance_to_cut(ended, "C" * n + "A" + "C" * n) for n in range(1, 9)]
    assert all(b < a for a, b in zip(d, d[1:]))
    assert d[-1] < 0.05 * d[0]
    for n in (1, 5, 8):
        c = axis_from_word(ended, "C" * n + "A" + "C" * n)
        assert c.rank == RANK_ONE and not c.guess
    c = axis_from_word(ended, "C")
    assert c.meta["coincides_with_cut"]
    assert refine_periodic(ended, c).period == pytest.approx(TWO_PI * ended.h, abs=1e-12)
    assert np.isfinite(c.period)
