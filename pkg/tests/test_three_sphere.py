import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carleman_verify.discretization import ScalarField, field_from_function
from carleman_verify.errors import DegenerateSolution, InvalidInput
from carleman_verify.fields import identity_metric
from carleman_verify.three_sphere import (
    balance_terms,
    ball_grid,
    ball_norm,
    caccioppoli_ratio,
    certified_mu0,
    harmonic_family_experiment,
    harmonic_monomial,
    harmonic_norm,
    perturbed_experiment,
    tau_tilde,
    theta,
    three_sphere_check,
)

EYE = identity_metric(2)
THETA_HAND = (math.exp(-1.28) - math.exp(-2)) / (math.exp(-0.03125) - math.exp(-2))


@pytest.fixture(scope="module")
def grid257():
    return ball_grid(257)


def test_theta_hand_value():
    assert theta(0.25, 0.4, 8.0) == pytest.approx(THETA_HAND, rel=1e-14)
    assert abs(theta(0.25, 0.4, 8.0) - 0.17112) < 1e-5


def test_theta_limits():
    assert theta(0.25, 0.5 - 1e-9, 8.0) < 1e-8
    for rho in (0.1, 0.125, 0.5, 0.6):
        with pytest.raises(InvalidInput):
            theta(0.25, rho, 8.0)
    with pytest.raises(InvalidInput):
        theta(0.25, 0.3, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.01, 0.99), st.floats(0.1, 200))
def test_theta_in_unit_interval_and_decreasing(r0, frac, mu0):
    lo, hi = r0 / 2, 0.5
    if not lo < hi:
        return
    rho = lo + frac * (hi - lo)
    t = theta(r0, rho, mu0)
    assert 0 <= t <= 1
    step = 1e-4 * (hi - lo)
    if rho + step < hi and t > 1e-300:
        assert theta(r0, rho + step, mu0) <= t


def test_tau_tilde_examples():
    assert tau_tilde(2.0, 2.0, 0.25, 8.0) == 0.0
    t = tau_tilde(1.0, math.exp(0.5), 0.25, 8.0)
    assert t == pytest.approx(1 / (2 * (math.exp(-0.03125) - math.exp(-2))), rel=1e-12)
    assert round(t, 5) == 0.59959
    assert tau_tilde(1.0, math.exp(1.0), 0.25, 8.0) == pytest.approx(2 * t, rel=1e-12)
    with pytest.raises(DegenerateSolution):
        tau_tilde(0.0, 1.0, 0.25, 8.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1.0, 1e3), st.floats(0.5, 50))
def test_terms_balance_at_tau_tilde(n0, ratio, mu0):
    r0, rho = 0.25, 0.4
    t = tau_tilde(n0, n0 * ratio, r0, mu0)
    a, b = balance_terms(n0, n0 * ratio, r0, rho, mu0, t)
    assert a == pytest.approx(b, rel=1e-9)
    # at the balance point each term equals the interpolation bound squared
    th = theta(r0, rho, mu0)
    assert a == pytest.approx((n0**th * (n0 * ratio) ** (1 - th)) ** 2, rel=1e-9)


def test_ball_norm_examples():
    half = ball_grid(129)
    one = ScalarField(half, np.ones(half.shape))
    assert ball_norm(one, 0.5) == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-2)
    u = field_from_function(half, harmonic_monomial(1))
    assert ball_norm(u, 1.0) == pytest.approx(math.sqrt(math.pi / 4), rel=1e-2)
    assert harmonic_norm(1, 1.0) == pytest.approx(0.886227, rel=1e-6)
    radii = [0.1, 0.3, 0.5, 0.9]
    norms = [ball_norm(u, r) for r in radii]
    assert norms == sorted(norms)
    with pytest.raises(InvalidInput):
        ball_norm(u, 1.5)


def test_harmonic_oracle(grid257):
    table = harmonic_family_experiment(6, 0.25, 0.4, 8.0, grid257)
    assert table.max_norm_error <= 0.01
    for row in table.rows:
        assert row.C_emp_numeric == pytest.approx(row.C_emp_analytic, rel=0.02)
    C = [r.C_emp_numeric for r in table.rows]
    assert all(a > b for a, b in zip(C, C[1:]))
    assert 0.4 / 0.25 ** THETA_HAND == pytest.approx(0.50710, abs=1e-5)
    assert table.to_csv().splitlines()[0].startswith("k,norm_r0,norm_rho,norm_1,theta,C_emp_numeric,C_emp_analytic")


def test_harmonic_family_guards(grid257):
    with pytest.raises(InvalidInput):
        harmonic_family_experiment(11, 0.25, 0.4, 8.0, grid257)
    with pytest.raises(InvalidInput):
        harmonic_family_experiment(3, 0.25, 0.4, 8.0, grid257, source="guess")
    coarse = harmonic_family_experiment(10, 0.25, 0.4, 8.0, ball_grid(17))
    assert coarse.rows[-1].under_resolved and not coarse.rows[0].under_resolved


def test_check_invariances(grid257):
    u = field_from_function(grid257, lambda x: 1 + x[..., 0] + 0.5 * (x[..., 0] ** 2 - x[..., 1] ** 2))
    rep = three_sphere_check(u, 0.25, 0.4, 8.0)
    assert rep.C_emp == pytest.approx(rep.norms[1] / (rep.norms[0] ** rep.theta * rep.norms[2] ** (1 - rep.theta)),
                                      rel=1e-15)
    for k in (1e-3, -4.0, 1e5):
        assert three_sphere_check(u.scaled(k), 0.25, 0.4, 8.0).C_emp == pytest.approx(rep.C_emp, rel=1e-12)


def test_branches(grid257):
    u = field_from_function(grid257, harmonic_monomial(2))
    rep = three_sphere_check(u, 0.25, 0.4, 8.0, tau_bar1=0.0, C_declared=1.0)
    assert rep.branch == "balanced" and rep.holds
    rep = three_sphere_check(u, 0.25, 0.4, 8.0, tau_bar1=1e6)
    assert rep.branch == "small-tau" and rep.small_tau_bound == math.inf
    rep = three_sphere_check(u, 0.25, 0.4, 8.0, tau_bar1=10.0)
    assert rep.small_tau_bound == pytest.approx(math.exp(10 * (math.exp(-1.28) - math.exp(-2))))
    assert three_sphere_check(u, 0.25, 0.4, 8.0).branch == "undetermined"


def test_check_errors(grid257):
    with pytest.raises(InvalidInput):
        three_sphere_check(ScalarField(grid257, np.zeros(grid257.shape)), 0.25, 0.4, 8.0)
    u = field_from_function(grid257, harmonic_monomial(1))
    with pytest.raises(InvalidInput):
        three_sphere_check(u, 0.25, 0.6, 8.0)
    with pytest.raises(InvalidInput):
        three_sphere_check(u, 0.3, 0.2, 8.0)
    far = field_from_function(grid257, lambda x: np.where(np.linalg.norm(x, axis=-1) > 0.5, 1.0, 0.0))
    with pytest.raises(DegenerateSolution):
        three_sphere_check(far, 0.25, 0.4, 8.0)


def test_caccioppoli(grid257):
    const = ScalarField(grid257, np.full(grid257.shape, 2.0))
    assert caccioppoli_ratio(EYE, const, 0.25).ratio == 0.0
    u = field_from_function(grid257, harmonic_monomial(1))
    rep = caccioppoli_ratio(EYE, u, 0.5, (1 / 8, 1 / 4), (1 / 16, 1 / 2))
    assert rep.lhs == pytest.approx(math.pi * (1 / 16 - 1 / 64), rel=1e-2)
    # int x1^2 over the annulus = pi (R^4 - r^4) / 4
    assert rep.rhs_scaled == pytest.approx(math.pi * (1 / 16 - 1 / 16**4) / 4, rel=1e-2)
    assert caccioppoli_ratio(EYE, u.scaled(7.0), 0.5, (1 / 8, 1 / 4), (1 / 16, 1 / 2)).ratio == pytest.approx(
        rep.ratio, rel=1e-12)
    with pytest.raises(InvalidInput):
        caccioppoli_ratio(EYE, u, 0.5, (0.01, 0.3), (1 / 16, 1 / 2))


def test_certified_mu0():
    mu0, cert = certified_mu0(0.25, n_radial=21, n_angular=32)
    assert cert.passed
    assert mu0 == pytest.approx(1024, rel=1e-6)
    assert theta(0.25, 0.4, mu0) < 1e-60


def test_perturbed_experiment_small(grid257):
    grid = ball_grid(65)
    table = perturbed_experiment([0, 1, 2], 0.25, 0.4, 8.0, grid, M1=1.0)
    assert len(table.rows) == 3
    assert all(math.isfinite(r.C_emp) and r.C_emp > 0 for r in table.rows)
    assert all(r.b_sup <= 1 and r.a_sup <= 1 for r in table.rows)
    again = perturbed_experiment([0, 1, 2], 0.25, 0.4, 8.0, grid, M1=1.0, threads=3)
    assert [r.C_emp for r in again.rows] == [r.C_emp for r in table.rows]
    assert table.to_csv().splitlines()[0] == "seed,b_sup,a_sup,iterations,norm_r0,norm_rho,norm_1,C_emp"
