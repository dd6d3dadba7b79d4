import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatlab.errors import InvalidParameter, NotApplicable
from flatlab.measure import (AtomicMeasure, RegionSpec, cylinder_prohorov_bound, dirac_on_closed_geodesic,
                             distance_matrix, distance_to_band, empirical_from_orbit, occupancy,
                             occupancy_ladder, prohorov_bruteforce, prohorov_flow, prohorov_to_orbit,
                             sasaki_distance, transit_window_time)
from flatlab.periodic import vertical_orbit
from flatlab.surface import TWO_PI, CylinderSpec, UnitTangent, build_flat_cylinder_torus

TORUS = build_flat_cylinder_torus()


def _instance(draw_n, draw_m, rng):
    a = rng.random(draw_n) + 0.05
    b = rng.random(draw_m) + 0.05
    return a / a.sum(), b / b.sum(), rng.random((draw_n, draw_m)) * 1.2


def test_prohorov_analytic_cases():
    assert prohorov_flow([1.0], [1.0], [[0.0]]).distance == pytest.approx(0.0, abs=1e-12)
    for d in (0.3, 0.8, 2.0):
        assert prohorov_flow([1.0], [1.0], [[d]]).distance == pytest.approx(min(d, 1.0), abs=1e-9)
        assert prohorov_bruteforce([1.0], [1.0], [[d]]).distance == pytest.approx(min(d, 1.0), abs=1e-9)
    D = np.array([[0.0], [5.0]])
    assert prohorov_flow([0.5, 0.5], [1.0], D).distance == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_flow_matches_bruteforce(n, k, seed):
    a, b, D = _instance(n, k, np.random.default_rng(seed))
    r1 = prohorov_bruteforce(a, b, D)
    r2 = prohorov_flow(a, b, D)
    assert abs(r1.distance - r2.distance) < 1e-9
    assert r2.lo <= r2.distance <= r2.hi


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_prohorov_is_symmetric(n, k, seed):
    a, b, D = _instance(n, k, np.random.default_rng(seed))
    assert prohorov_flow(a, b, D).distance == pytest.approx(prohorov_flow(b, a, D.T).distance, abs=1e-9)


def test_coupling_witness_is_valid():
    rng = np.random.default_rng(3)
    a, b, D = _instance(4, 3, rng)
    r = prohorov_flow(a, b, D)
    moved = np.zeros(4)
    for i, j, mass in r.coupling:
        assert D[i, j] <= r.hi + 1e-12
        moved[i] += mass
    assert 1.0 - moved.sum() <= r.hi + 1e-9


def test_bound_formula():
    assert cylinder_prohorov_bound(CylinderSpec(4.0, 1.0, 2.0)) == pytest.approx(2.0 / 3.0)
    assert cylinder_prohorov_bound(CylinderSpec(4.0, 1.0, 0.1)) == pytest.approx(0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.5), st.floats(0.0, 1.0))
def test_window_time_matches_straight_line(theta, frac):
    eps = theta + frac * (1.999 - theta)
    if not theta < eps < 2.0:
        return
    v = TORUS.tangent("band", -2.0, 0.3, theta)
    s = occupancy(TORUS, v, 4.0 / math.sin(theta), RegionSpec.V(eps))
    assert s.occupied == pytest.approx(transit_window_time(eps, theta), abs=1e-9)


def test_window_time_formula():
    assert transit_window_time(0.5, 0.3) == pytest.approx(2 * math.sqrt(0.25 - 0.09) / math.sin(0.3))
    assert transit_window_time(0.2, 0.3) == 0.0
    with pytest.raises(InvalidParameter):
        transit_window_time(0.5, 2.0)


def test_region_contract():
    with pytest.raises(InvalidParameter):
        RegionSpec.U(0.5, 2.0)
    with pytest.raises(InvalidParameter):
        RegionSpec.U(1.0, 0.3).check(TORUS)
    with pytest.raises(InvalidParameter):
        RegionSpec("W", 0.1)
    RegionSpec.U(0.6, 0.3).check(TORUS)


def test_occupancy_ladder_is_monotone_in_time():
    v = TORUS.tangent("hyperbolic", 0.1, 1.3, 0.7)
    stats = occupancy_ladder(TORUS, v, [50.0, 200.0], RegionSpec.U(0.6, 0.3))
    assert stats[0].occupied <= stats[1].occupied + 1e-12
    for s in stats:
        assert 0.0 <= s.fraction <= 0.5


def test_sasaki_distance_in_band():
    a = UnitTangent("band", 0.0, 0.0, 0.0)
    b = UnitTangent("band", 0.3, 0.0, 0.4)
    r = sasaki_distance(TORUS, a, b)
    assert r.exact
    assert r.value == pytest.approx(0.5, abs=1e-12)
    assert sasaki_distance(TORUS, a, a).value == 0.0
    assert distance_to_band(TORUS, a).value == 0.0


def test_dirac_is_uniform_on_the_orbit():
    A = vertical_orbit(TORUS, 0.5)
    mu = dirac_on_closed_geodesic(A, 16, TORUS)
    assert len(mu) == 16 and mu.equal_weights
    assert np.all(mu.c1 == 0.5)
    gaps = np.diff(np.sort(mu.c2))
    assert np.allclose(gaps, TWO_PI / 16)


def test_measure_validation():
    with pytest.raises(InvalidParameter):
        AtomicMeasure(["band"], [0.0], [0.0], [0.0], [0.5])
    with pytest.raises(InvalidParameter):
        AtomicMeasure([], [], [], [], [])


@pytest.mark.parametrize("seed", range(4))
def test_orbit_algorithm_is_a_tight_lower_bound(seed):
    A = vertical_orbit(TORUS, 0.0)
    N = 64
    nu = dirac_on_closed_geodesic(A, N, TORUS)
    rng = np.random.default_rng(seed)
    vs = [TORUS.tangent("band", rng.uniform(-0.5, 0.5), rng.uniform(0, TWO_PI), rng.normal(0, 0.2))
          for _ in range(30)]
    vs.append(TORUS.tangent("hyperbolic", 0.1, 1.3, 0.7))
    mu = AtomicMeasure.uniform(vs)
    D, _ = distance_matrix(TORUS, mu, nu)
    exact = prohorov_flow(mu.weights, nu.weights, D).distance
    for block in (1, 4):
        r = prohorov_to_orbit(TORUS, mu, A, N=N, block=block, tol=1e-9)
        assert r.distance <= exact + 1e-6
        assert exact - r.distance <= block * TWO_PI * TORUS.h / N + 1e-6


def test_orbit_algorithm_contract():
    A = vertical_orbit(TORUS, 0.0)
    mu = empirical_from_orbit(TORUS, TORUS.tangent("hyperbolic", 0.1, 1.3, 0.7), 20.0, 0.1)
    with pytest.raises(InvalidParameter):
        prohorov_to_orbit(TORUS, mu, A, N=96, block=4)
    with pytest.raises(NotApplicable):
        prohorov_to_orbit(TORUS, mu, UnitTangent("band", 0.0, 0.0, 0.3))
