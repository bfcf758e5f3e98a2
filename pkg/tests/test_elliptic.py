import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from obstaclelab.elliptic import (
    ScalarField,
    SolverError,
    SolverSettings,
    laplacian,
    maximum_principle_check,
    solve_dirichlet,
    system_matrices,
)
from obstaclelab.grid_domain import DomainSpec, build_domain

from .oracles import dense_laplacian_1d


def test_1d_matrices_match_three_point_stencil():
    dom = build_domain(DomainSpec.interval(0, 1, 0.125))
    A, B = system_matrices(dom)
    A0, B0 = dense_laplacian_1d(7, 0.125)
    np.testing.assert_allclose(A.toarray(), A0)
    np.testing.assert_allclose(B.toarray(), B0)


@pytest.mark.parametrize("spec", [
    DomainSpec.unit_square(1 / 16),
    DomainSpec.l_shape(1 / 16),
    DomainSpec.disk((0.2, 0.1), 0.9, 1 / 16),
])
def test_system_matrix_is_symmetric_m_matrix(spec):
    dom = build_domain(spec)
    A, B = system_matrices(dom)
    assert abs(A - A.T).max() == 0
    off = A - np.diag(A.diagonal())
    assert off.max() <= 0 and B.min() >= 0
    # constants are harmonic: row sums of A equal row sums of B
    np.testing.assert_allclose(A @ np.ones(dom.n_interior), B @ np.ones(dom.n_boundary), rtol=1e-12)


def test_quadratic_is_reproduced_on_square():
    dom = build_domain(DomainSpec.unit_square(1 / 16))
    u = ScalarField.from_function(dom, lambda x, y: x**2 + 3 * y**2 - x * y)
    np.testing.assert_allclose(laplacian(u), 8.0, rtol=1e-10)


def test_quadratic_is_reproduced_on_disk_at_uncut_nodes():
    # the symmetric cut-arm stencil is first order at cut nodes
    dom = build_domain(DomainSpec.disk((0, 0), 1.0, 1 / 32))
    u = ScalarField.from_function(dom, lambda x, y: x**2 + y**2)
    lap = laplacian(u)
    full = np.all(dom.neighbors >= 0, axis=1)
    np.testing.assert_allclose(lap[full], 4.0, rtol=1e-10)


def test_square_manufactured_solution_is_second_order():
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(2 * np.pi * y)
    f = lambda x, y: -5 * np.pi**2 * exact(x, y)
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        dom = build_domain(DomainSpec.unit_square(h))
        u = solve_dirichlet(dom, dom.evaluate(f)[0], 0.0)
        errs.append(np.abs(u.interior - dom.evaluate(exact)[0]).max())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    np.testing.assert_allclose(rates, 2.0, atol=0.05)


def test_disk_poisson_converges():
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        dom = build_domain(DomainSpec.disk((0, 0), 1.0, h))
        u = solve_dirichlet(dom, 1.0, 0.0)
        exact = (np.sum(dom.interior_coords**2, axis=1) - 1) / 4
        errs.append(np.abs(u.interior - exact).max())
    assert errs[2] < 1e-4
    assert errs[2] < errs[0]


def test_direct_and_cg_agree():
    dom = build_domain(DomainSpec.l_shape(1 / 32))
    f = dom.evaluate(lambda x, y: 1 + x * y)[0]
    a = solve_dirichlet(dom, f, 0.3, SolverSettings(method="direct-sparse"))
    b = solve_dirichlet(dom, f, 0.3, SolverSettings(method="conjugate-gradient"))
    np.testing.assert_allclose(a.interior, b.interior, atol=1e-8)


def test_cg_failure_raises_with_residual():
    dom = build_domain(DomainSpec.unit_square(1 / 32))
    with pytest.raises(SolverError) as info:
        solve_dirichlet(dom, 1.0, 0.0, SolverSettings(method="conjugate-gradient", max_iterations=2))
    assert info.value.residual > 0


def test_zero_data_gives_zero():
    dom = build_domain(DomainSpec.unit_square(1 / 8))
    u = solve_dirichlet(dom, 0.0, 0.0)
    assert not u.interior.any()


@pytest.mark.parametrize("kw", [
    {"tolerance": 1e-3}, {"tolerance": 0.0}, {"max_iterations": 0}, {"method": "lu"},
    {"obstacle_method": "newton"}, {"relaxation": 2.0},
])
def test_settings_validation(kw):
    with pytest.raises(ValueError):
        SolverSettings(**kw)


def test_field_shape_checked():
    dom = build_domain(DomainSpec.unit_square(0.25))
    with pytest.raises(ValueError):
        ScalarField(dom, np.zeros(3), np.zeros(dom.n_boundary))


@pytest.fixture(scope="module")
def lshape():
    return build_domain(DomainSpec.l_shape(1 / 8))


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_maximum_principle(lshape, data):
    f = data.draw(arrays(float, lshape.n_interior, elements=st.floats(0, 10)))
    phi = data.draw(arrays(float, lshape.n_boundary, elements=st.floats(-1, 1)))
    u = solve_dirichlet(lshape, f, phi)
    assert maximum_principle_check(u, f)
    assert u.interior.max() <= phi.max() + 1e-9
    assert maximum_principle_check(-u, -f)


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_solve_then_laplacian_round_trips(lshape, data):
    f = data.draw(arrays(float, lshape.n_interior, elements=st.floats(-5, 5)))
    phi = data.draw(arrays(float, lshape.n_boundary, elements=st.floats(-1, 1)))
    u = solve_dirichlet(lshape, f, phi)
    np.testing.assert_allclose(laplacian(u), f, atol=1e-6)
    np.testing.assert_array_equal(u.boundary, phi)
