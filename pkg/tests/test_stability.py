import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obstaclelab.grid_domain import DomainSpec, build_domain, eroded_mask
from obstaclelab.obstacle import ObstacleData, lower_data, solve_obstacle, upper_data
from obstaclelab.stability import (
    Scenario,
    build_auxiliaries,
    decomposition_check,
    identity_checks,
    identity_residual,
    l1_boundary,
    l1_interior,
    sweep,
    verify_nondegeneracy,
    verify_stability,
)

TOL = 1e-10


@pytest.fixture(scope="module")
def square():
    return build_domain(DomainSpec.unit_square(1 / 64))


@pytest.fixture(scope="module")
def interval():
    return build_domain(DomainSpec.interval(-1, 1, 1 / 256))


def scenario(dom, g1, p1, g2, p2, **kw):
    return Scenario(dom, ObstacleData.on(dom, g1, p1), ObstacleData.on(dom, g2, p2), **kw)


def test_l1_boundary(square):
    eps, h = 0.01, square.spacing
    assert l1_boundary(square, 0.2, 0.2) == 0
    assert l1_boundary(square, 0.2, 0.2 + eps) == pytest.approx(4 * eps, abs=4 * h * eps)
    # the closed edge holds both corners, so the sum is eps * (1 + h)
    edge = square.evaluate(lambda x, y: eps * (y == 0))[1]
    assert l1_boundary(square, edge, 0.0) == pytest.approx(eps, abs=h * eps * (1 + 1e-9))


def test_l1_interior(square):
    eps = 0.3
    m = eroded_mask(square, 0.25)
    assert l1_interior(square, 1.0, 1.0, m) == 0
    assert l1_interior(square, 1.0, 1 + eps, m) == pytest.approx(eps * m.measure)
    patch = square.evaluate(lambda x, y: (x < 0.5) * 1.0)[0]
    expected = eps * (m.members & (patch > 0)).sum() * square.cell_volume
    assert l1_interior(square, 1.0, 1 + eps * patch, m) == pytest.approx(expected)


def test_scenario_defaults(square):
    sc = scenario(square, 1.0, 0.02, lambda x, y: 1 + x, 0.03)
    assert sc.eta == pytest.approx(4 * square.spacing)
    assert sc.data1.lam == sc.data2.lam == 1.0
    assert sc.data1.mu == sc.data2.mu == pytest.approx(square.interior_coords[:, 0].max() + 1)
    assert not sc.monotone
    with pytest.raises(ValueError):
        scenario(square, 1.0, 0.02, 1.0, 0.03, eta=0.0)


def test_identical_data_is_trivial(square):
    sc = scenario(square, 1.0, 0.03, 1.0, 0.03)
    for check in (verify_stability, verify_nondegeneracy):
        r = check(sc)
        assert r.status == "ok" and r.lhs == 0 and r.rhs == 0 and r.holds
    up = solve_obstacle(square, upper_data(sc.data1, sc.data2))
    lo = solve_obstacle(square, lower_data(sc.data1, sc.data2))
    b = build_auxiliaries(square, sc.data1, sc.data2, up, lo)
    assert not b.upsilon.interior.any() and not b.Phi.interior.any()
    assert not b.h_boundary.interior.any() and not b.h_rhs.interior.any()
    assert len(b.L_mask) == 0
    assert identity_residual(b) == (0.0, 0.0)


def test_auxiliary_invariants(square):
    sc = scenario(square, 1.0, lambda x, y: 0.02 + 0.02 * x, lambda x, y: 1 + (y < 0.5), 0.03)
    up = solve_obstacle(square, upper_data(sc.data1, sc.data2))
    lo = solve_obstacle(square, lower_data(sc.data1, sc.data2))
    b = build_auxiliaries(square, sc.data1, sc.data2, up, lo)
    assert b.upsilon.interior.min() >= 0
    assert b.Phi.interior.max() <= 0
    np.testing.assert_allclose(b.h_boundary.boundary, 0.0, atol=1e-15)
    np.testing.assert_array_equal(b.h_rhs.boundary, up.u.boundary - lo.u.boundary)
    assert b.L_mask == (lo.contact ^ up.contact)
    assert math.isnan(identity_residual(b)[0]) and math.isnan(identity_residual(b)[1])


def test_1d_identity(interval):
    sc = scenario(interval, 2.0, 0.25, 2.0, 0.16)
    out = identity_checks(sc)
    assert out["boundary_residual"] <= 10 * TOL
    assert out["boundary_pole_gap"] <= 10 * TOL


def test_rhs_identity_on_square(square):
    sc = scenario(square, 1.0, 0.02, lambda x, y: 1 + 0.5 * (y <= 0.5), 0.02)
    out = identity_checks(sc)
    assert out["rhs_residual"] <= 10 * TOL
    assert out["rhs_pole_gap"] <= 10 * TOL


def test_1d_nondegeneracy_closed_form(interval):
    sc = scenario(interval, 2.0, 0.25, 2.0, 0.16)
    r = verify_nondegeneracy(sc)
    assert r.status == "ok" and r.holds
    # contact half-widths 1 - sqrt(psi): 0.5 and 0.6
    assert r.lhs == pytest.approx(0.2, abs=2 * interval.spacing)
    # pole 0, ball radius 0.5: K = 1/2 at both ends, max -G outside the ball = 1/4
    assert r.k_lower == pytest.approx(0.5) and r.g_upper == pytest.approx(0.25)
    assert r.c3 == pytest.approx(1.0)
    assert r.rhs == pytest.approx(0.18)


def test_square_stability_example():
    dom = build_domain(DomainSpec.unit_square(1 / 128))
    r = verify_stability(scenario(dom, 1.0, 0.02, 1.0, 0.03, eta=0.1))
    assert r.status == "ok" and r.holds
    assert r.c1 > 0 and r.c2 > 0
    assert r.boundary_term == pytest.approx(0.04)
    centre = lambda x, y: 1 + 0.5 * ((np.abs(x - 0.5) <= 0.1) & (np.abs(y - 0.5) <= 0.1))
    r = verify_stability(scenario(dom, 1.0, 0.02, centre, 0.02))
    assert r.status == "ok" and r.holds and r.boundary_term == 0


def test_nonmonotone_nondegeneracy_is_flagged(square):
    r = verify_nondegeneracy(scenario(square, 1.0, 0.02, 1.0, 0.03))
    assert r.status == "monotonicity-violated" and r.holds is None


def test_empty_contact_is_inapplicable(square):
    r = verify_stability(scenario(square, 1.0, 0.2, 1.0, 0.3))
    assert r.status == "inapplicable" and r.holds is None


def test_tiny_contact_is_under_resolved(square):
    r = verify_stability(scenario(square, 1.0, 0.072, 1.0, 0.073))
    assert r.status == "under-resolved"


def test_pole_override(square):
    r = verify_stability(scenario(square, 1.0, 0.02, 1.0, 0.03, pole=square.nearest_node((0.5, 0.5)), delta=0.1))
    assert r.ybar == pytest.approx([0.5, 0.5]) and r.delta == 0.1
    r = verify_stability(scenario(square, 1.0, 0.02, 1.0, 0.03, pole=0))
    assert r.status in ("inapplicable", "under-resolved")


def test_decomposition_parts(square):
    mixed = scenario(square, 1.0, lambda x, y: 0.02 + 0.02 * x, lambda x, y: 1 + (y < 0.5), 0.03)
    a = decomposition_check(mixed, part="a")
    assert a.triangle_holds and a.contained and a.holds
    assert decomposition_check(mixed, part="b").status == "monotonicity-violated"
    mono = scenario(square, 1.0, 0.03, lambda x, y: 1 + 0.5 * (x < 0.5), 0.02)
    b = decomposition_check(mono, part="b")
    assert b.disjoint and b.union_exact and b.lhs > 0
    with pytest.raises(ValueError):
        decomposition_check(mono, part="c")


def test_sweep_needs_four_points(square):
    with pytest.raises(ValueError, match="sweep requires >= 4 points"):
        sweep(lambda e: scenario(square, 1.0, 0.04, 1.0, 0.04 - e), [0.01])


def test_sweep_excludes_zero_and_reports_rows(square):
    rep = sweep(lambda e: scenario(square, 1.0, 0.04, 1.0, 0.04 - e), [0.0, 0.01, 0.02, 0.03])
    assert rep.rows[0]["lhs"] == 0 and not rep.rows[0]["resolved"]
    assert rep.n_fitted == 3 and rep.slope is not None and rep.slope_band is not None
    assert rep.all_hold


def test_sweep_with_nothing_resolved(square):
    rep = sweep(lambda e: scenario(square, 1.0, 0.04, 1.0, 0.04 - e), [1e-7, 2e-7, 3e-7, 4e-7])
    assert rep.status == "insufficient resolution" and rep.slope is None


def test_sweep_threads_match_serial(square):
    fam = lambda e: scenario(square, 1.0, 0.04, 1.0, 0.04 - e)
    eps = [0.005, 0.01, 0.02, 0.03]
    assert sweep(fam, eps).rows == sweep(fam, eps, threads=3).rows


@pytest.fixture(scope="module")
def coarse():
    return build_domain(DomainSpec.unit_square(1 / 32))


@settings(max_examples=20, deadline=None)
@given(
    psi=st.floats(0.01, 0.04),
    dpsi=st.floats(-0.01, 0.01),
    amp=st.floats(0.0, 1.0),
    corner=st.tuples(st.integers(0, 24), st.integers(0, 24)),
)
def test_stability_holds_on_random_data(coarse, psi, dpsi, amp, corner):
    x0, y0 = corner[0] / 32, corner[1] / 32
    g2 = lambda x, y: 1 + amp * ((x >= x0) & (x <= x0 + 0.25) & (y >= y0) & (y <= y0 + 0.25))
    sc = scenario(coarse, 1.0, psi, g2, lambda x, y: psi + dpsi * (x < 0.5) + 0 * y)
    r = verify_stability(sc)
    assert r.holds is not False
    d = decomposition_check(sc, part="a")
    assert d.triangle_holds and d.contained
