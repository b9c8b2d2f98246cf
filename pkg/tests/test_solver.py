import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carleman_verify.discretization import MaskSpec, ScalarField, laplacian_matrix, make_grid
from carleman_verify.errors import InvalidInput, NonConvergence
from carleman_verify.fields import identity_metric
from carleman_verify.solver import (
    assemble,
    coefficients_from_expressions,
    constant_coefficients,
    manufactured_check,
    operator_matrix,
    random_coefficients,
    solve,
    solve_dirichlet,
    zero_coefficients,
)

EYE = identity_metric(2)


def ball(N):
    return make_grid(2, 1.0, N, MaskSpec.ball(1.0))


def test_pure_laplacian_is_five_point():
    grid = ball(33)
    sys_ = assemble(EYE, zero_coefficients(2), grid, 0.0)
    assert sys_.symmetric
    A = sys_.A.toarray()
    # interior rows: -4 on the diagonal and four unit neighbours (after the h^2 scaling)
    full = laplacian_matrix(EYE, grid) * grid.h**2
    centre = np.ravel_multi_index((16, 16), grid.shape)
    row = full[centre].toarray().ravel()
    assert row[centre] == pytest.approx(-4)
    assert sorted(np.round(row[row != 0], 12).tolist()) == [-4, 1, 1, 1, 1]
    assert abs(row.sum()) < 1e-12
    assert np.allclose(A, A.T)


def test_shift_by_minus_one():
    grid = ball(33)
    base = assemble(EYE, zero_coefficients(2), grid, 0.0).A
    shifted = assemble(EYE, constant_coefficients(2, a=-1.0), grid, 0.0).A
    assert np.allclose((shifted - base).diagonal(), grid.h**2)


def test_annulus_mask_rejected(annulus129):
    with pytest.raises(InvalidInput):
        assemble(EYE, zero_coefficients(2), annulus129, 0.0)


def test_zero_data_gives_zero():
    rep = solve_dirichlet(EYE, zero_coefficients(2), ball(65), 0.0)
    assert np.all(rep.solution.values == 0) and rep.iterations == 0


@pytest.mark.parametrize("u", [lambda x: x[..., 0], lambda x: x[..., 0] ** 2 - x[..., 1] ** 2])
def test_polynomials_reproduced(u):
    # the 5-point stencil is exact on quadratics, so only the solver tolerance remains
    grid = ball(65)
    rep = solve_dirichlet(EYE, zero_coefficients(2), grid, u, tol=1e-12)
    err = np.abs(rep.solution.values - u(grid.x))[grid.mask]
    assert err.max() < 1e-9
    assert rep.residual_norm <= 1e-12 and rep.method == "cg"


def test_constants_reproduced():
    for coeffs in (zero_coefficients(2), constant_coefficients(2, b=[0.5, -0.3])):
        grid = ball(65)
        rep = solve_dirichlet(EYE, coeffs, grid, 2.5, tol=1e-12)
        assert np.abs(rep.solution.values - 2.5)[grid.mask].max() <= 1e-10


@pytest.mark.parametrize("exact", ["exp(x1)*cos(x2)", "sin(x1)*sin(x2)"])
def test_manufactured_order(exact, wavy):
    table = manufactured_check(EYE, zero_coefficients(2), exact, [65, 129, 257])
    assert all(abs(o - 2) <= 0.3 for o in table.orders), table.orders
    assert table.to_csv().startswith("N,h,l2_error")


def test_manufactured_order_with_coefficients(wavy):
    coeffs = coefficients_from_expressions("0.5*cos(x2), 0.3*sin(x1)", "-0.5 + 0.2*x1", 2)
    table = manufactured_check(wavy, coeffs, "sin(x1)*cos(2*x2) + x1", [65, 129, 257])
    assert min(table.orders) >= 1.8, table.orders


def test_maximum_principle():
    grid = ball(65)
    coeffs = coefficients_from_expressions("0", "-(1 + x1^2)", 2)
    data = lambda x: np.sin(3 * x[..., 0]) + np.cos(2 * x[..., 1])
    rep = solve_dirichlet(EYE, coeffs, grid, data, tol=1e-12)
    boundary = data(grid.x)[~grid.mask & (grid.r < 1 + 2 * grid.h)]
    inside = rep.solution.values[grid.mask]
    assert inside.max() <= max(boundary.max(), 0) + 1e-10
    assert inside.min() >= min(boundary.min(), 0) - 1e-10


def test_nonsymmetric_uses_bicgstab():
    grid = ball(65)
    rep = solve_dirichlet(EYE, random_coefficients(2, 3), grid, lambda x: x[..., 0], tol=1e-10)
    assert rep.method == "bicgstab" and rep.residual_norm <= 1e-10


def test_non_convergence_carries_trace():
    grid = ball(65)
    with pytest.raises(NonConvergence) as info:
        solve(assemble(EYE, zero_coefficients(2), grid, lambda x: x[..., 0] ** 3), tol=1e-12, max_iter=3)
    assert len(info.value.residual_trace) == 3


def test_true_residual_restarts():
    grid = ball(257)
    rep = solve_dirichlet(EYE, constant_coefficients(2, b=[0.5, -0.3]), grid, 1.75, tol=1e-14)
    assert "restart" in rep.method and rep.residual_norm <= 1e-14
    assert np.abs(rep.solution.values - 1.75)[grid.mask].max() <= 1e-10


def test_solver_is_deterministic():
    grid = ball(65)
    coeffs = random_coefficients(2, 5)
    a = solve_dirichlet(EYE, coeffs, grid, lambda x: x[..., 1])
    b = solve_dirichlet(EYE, coeffs, grid, lambda x: x[..., 1])
    assert np.array_equal(a.solution.values, b.solution.values) and a.iterations == b.iterations


def test_peclet_warning():
    grid = ball(17)
    rep = solve_dirichlet(EYE, constant_coefficients(2, b=[40.0, 0.0]), grid, lambda x: x[..., 0])
    assert any("Peclet" in w for w in rep.warnings)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
def test_random_coefficients_respect_bound(seed, M1):
    c = random_coefficients(2, seed, M1)
    pts = np.random.default_rng(seed).uniform(-1, 1, (500, 2))
    bmax, amax = c.check(pts)
    assert bmax <= M1 and amax <= M1


def test_coefficient_bound_violation():
    c = constant_coefficients(2, b=[1.0, 0.0])
    c.M1_bound = 0.5
    with pytest.raises(InvalidInput):
        c.check(np.zeros((1, 2)))


def test_expression_coefficients():
    c = coefficients_from_expressions("x1, 0", "2", 2)
    assert c.M1_bound == pytest.approx(2.0)
    assert np.allclose(c.b(np.array([[0.5, 0.1]])), [[0.5, 0.0]])
    assert coefficients_from_expressions("0", "0", 2).b_zero
    with pytest.raises(InvalidInput):
        coefficients_from_expressions("x1, x2, x1", "0", 2)


def test_operator_matrix_flags_symmetry():
    grid = ball(33)
    assert operator_matrix(EYE, constant_coefficients(2, a=2.0), grid)[1]
    assert not operator_matrix(EYE, constant_coefficients(2, b=[1.0, 0.0]), grid)[1]
