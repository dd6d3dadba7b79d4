import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatlab import hyperbolic as hb
from flatlab.errors import ConfigError, InvalidParameter, InvalidSurface, OutOfDomain
from flatlab.surface import (TWO_PI, CylinderSpec, UnitTangent, WarpFunction, build_flat_cylinder_torus,
                             build_from_config, chart_transition, circle_gap, curvature_at,
                             halfplane_from_vectors, parse_config_text, validate_gluing,
                             vectors_from_halfplane, wrap_phi)


def test_preset_constants(torus, ended):
    assert torus.l == 4.0
    assert (torus.warp.lo, torus.warp.hi) == (-2.0, 2.0)
    assert torus.hyperbolic.cut_length == pytest.approx(2 * math.acosh(1.5), abs=1e-14)
    # the band circumference matches the cut geodesic
    assert TWO_PI * torus.h == pytest.approx(torus.hyperbolic.cut_length, abs=1e-12)
    assert ended.warp.lo == 0.0 and math.isinf(ended.warp.hi)
    assert TWO_PI * ended.h == pytest.approx(ended.hyperbolic.cut_length, abs=1e-12)


@pytest.mark.parametrize("which", ["torus", "ended", "funnels"])
def test_gluing_is_clean(which, request):
    rep = validate_gluing(request.getfixturevalue(which))
    assert rep["ok"], rep["flagged"]
    assert rep["f_defect"] == 0.0 and rep["df_defect"] == 0.0


def test_gluing_flags_a_kink():
    w = WarpFunction(-1.0, 1.0, 1.0, flank_slope=0.3)
    from flatlab.surface import SurfaceModel
    m = SurfaceModel("CylinderWithFunnels", w, 2.0, 1.0)
    rep = validate_gluing(m)
    assert not rep["ok"]
    assert "df_defect" in rep["flagged"]


def test_warp_profile_is_c1():
    w = WarpFunction(-1.0, 1.0, 0.5)
    for e in (-1.0, 1.0):
        assert w.f(e - 1e-9) == pytest.approx(w.f(e + 1e-9), abs=1e-12)
        assert w.df(e - 1e-9) == pytest.approx(w.df(e + 1e-9), abs=1e-8)
    assert w.flank_curvature == pytest.approx(-1 / 0.25)


def test_curvature_values(torus, funnels):
    assert curvature_at(torus, ("band", 0.3, 1.0)) == 0.0
    assert curvature_at(torus, ("flank", 2.1, 1.0)) == pytest.approx(-1.0)
    assert curvature_at(torus, ("hyperbolic", 0.1, 1.0)) == -1.0
    assert curvature_at(funnels, ("funnel", 3.0, 1.0)) == pytest.approx(-1.0 / funnels.h ** 2)
    edge = curvature_at(torus, ("band", 2.0, 0.0))
    assert edge.band == 0.0 and edge.flank == -1.0
    assert curvature_at(torus, ("band", 2.0, 0.0), side=1) == -1.0


def test_domain_checks(torus):
    with pytest.raises(OutOfDomain):
        torus.tangent("band", 2.5, 0.0, 0.0)
    with pytest.raises(OutOfDomain):
        torus.tangent("hyperbolic", 0.0, -1.0, 0.0)
    with pytest.raises(OutOfDomain):
        torus.tangent("funnel", 3.0, 0.0, 0.0)


def test_cylinder_spec_contract(torus):
    assert torus.cylinder_spec(0.0) == CylinderSpec(4.0, torus.h, 2.0)
    with pytest.raises(InvalidParameter):
        CylinderSpec(4.0, 1.0, 2.5)
    with pytest.raises(InvalidParameter):
        torus.cylinder_spec(2.0)


def test_bad_surfaces():
    with pytest.raises(InvalidParameter):
        build_flat_cylinder_torus(l=-1.0)
    with pytest.raises(InvalidParameter):
        build_flat_cylinder_torus((np.eye(2) * 2, np.eye(2)))
    with pytest.raises(InvalidSurface):
        # commutator trace -2: a cusp, not a flat end
        from flatlab.surface import build_flat_ended_torus
        build_flat_ended_torus((np.array([[1.0, 1.0], [1.0, 2.0]]), np.array([[1.0, -1.0], [-1.0, 2.0]])))


def test_config_parsing():
    cfg = parse_config_text("# comment\npreset = FlatCylinderTorus\nl: 4\n")
    assert cfg == {"preset": "FlatCylinderTorus", "l": 4.0}
    m = build_from_config(cfg)
    assert m.preset == "FlatCylinderTorus"
    assert build_from_config(json.loads('{"surface": {"preset": "CylinderWithFunnels", "h": 0.5}}')).h == 0.5
    with pytest.raises(ConfigError):
        build_from_config({"preset": "Sphere"})
    with pytest.raises(ConfigError):
        parse_config_text("{not json")


def test_describe_is_json(presets):
    for m in presets:
        json.dumps(m.describe(), allow_nan=False)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_circle_gap_metric(a, b):
    g = circle_gap(a, b)
    assert 0.0 <= g <= math.pi + 1e-12
    assert g == pytest.approx(circle_gap(b, a), abs=1e-12)
    assert 0.0 <= wrap_phi(a) < TWO_PI


@given(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-3.1, 3.1))
def test_halfplane_roundtrip(x, y, a):
    X, V = vectors_from_halfplane(x, y, a)
    assert hb.mdot(X, X) == pytest.approx(-1.0, abs=1e-9)
    assert hb.mdot(V, V) == pytest.approx(1.0, abs=1e-9)
    assert hb.mdot(X, V) == pytest.approx(0.0, abs=1e-9)
    x2, y2, a2 = halfplane_from_vectors(X, V)
    assert (x2, y2) == pytest.approx((x, y), rel=1e-9, abs=1e-9)
    assert abs(hb.wrap_angle(a2 - a)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, TWO_PI), st.floats(-math.pi, math.pi), st.booleans())
def test_collar_chart_roundtrip(phi, alpha, upper):
    m = build_flat_cylinder_torus()
    lo, hi = m.collar_bounds
    v = UnitTangent("flank", hi if upper else lo, phi, alpha)
    back = chart_transition(m, chart_transition(m, v))
    assert back.chart == "flank"
    assert back.c1 == pytest.approx(v.c1, abs=1e-9)
    assert circle_gap(back.c2, v.c2) < 1e-9
    assert abs(hb.wrap_angle(back.alpha - v.alpha)) < 1e-9


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_so21_is_a_homomorphism(s, t):
    A = np.array([[math.cosh(s), math.sinh(s)], [math.sinh(s), math.cosh(s)]])
    B = np.array([[math.exp(t / 2), 0.0], [0.0, math.exp(-t / 2)]])
    lhs = hb.so21(A @ B)
    rhs = hb.so21(A) @ hb.so21(B)
    assert np.allclose(lhs, rhs, atol=1e-9 * max(1.0, np.max(np.abs(lhs))))
