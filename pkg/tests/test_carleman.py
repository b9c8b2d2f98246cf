import math

import numpy as np
import pytest

from carleman_verify.carleman import (
    RellichTable,
    carleman_ratio,
    carleman_terms,
    conjugate,
    default_test_functions,
    detect_plateau,
    rellich_residual,
    rellich_study,
    tau_sweep,
    vector_field_from_name,
)
from carleman_verify.discretization import MaskSpec, ScalarField, inner, make_bump, make_cutoff, make_grid
from carleman_verify.errors import InvalidInput, PlateauNotFound, WeightOverflow
from carleman_verify.fields import (
    WeightRecipe,
    annulus_samples,
    as_weight,
    exp_weight,
    linear_function,
    neg_abs2,
)
from carleman_verify.pseudoconvexity import certify


def h_norm(u):
    return math.sqrt(inner(u, u))


def bumps(grid, n=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        c = rng.uniform(-0.2, 0.2, 2)
        out.append(make_bump(grid, c, 0.5, seed=seed * 100 + k))
    return out


def test_tau_zero_is_plain_laplacian(wavy, phi8, ball129):
    v = make_bump(ball129, (0.1, 0.0), 0.5, seed=4)
    app = conjugate(wavy, phi8, v, 0.0)
    assert np.array_equal(app.A_part.values, np.zeros(ball129.shape))
    assert np.allclose(app.direct.values, app.S_part.values, rtol=0, atol=1e-12 * np.abs(app.S_part.values).max())


def test_split_sums_exactly(wavy, phi8, ball129):
    v = make_bump(ball129, (0.0, 0.2), 0.5, seed=5)
    app = conjugate(wavy, phi8, v, 5.0)
    assert np.array_equal(app.S_part.values + app.A_part.values, app.expanded.values)
    P, S, A = app.expanded.values, app.S_part.values, app.A_part.values
    lhs = inner(app.expanded, app.expanded)
    rhs = inner(app.S_part, app.S_part) + inner(app.A_part, app.A_part) + 2 * inner(app.S_part, app.A_part)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("tau", [0.5, 2.0, 3.0])
def test_linear_weight_plateau(eye2, tau):
    grid = make_grid(2, 1.0, 129, MaskSpec.ball(1.0))
    eta = make_cutoff(0.25)
    v = ScalarField(grid, np.exp(grid.x[..., 0]) * eta(grid.r))
    app = conjugate(eye2, as_weight(linear_function([1.0, 0.0])), v, tau)
    plateau = (grid.r > 0.2) & (grid.r < 0.45)
    expected = (1 - tau) ** 2 * np.exp(grid.x[..., 0][plateau])
    for form in (app.direct, app.expanded):
        assert np.allclose(form.values[plateau], expected, rtol=0, atol=1e-3)


@pytest.mark.parametrize("tau", [1.0, 5.0, 25.0])
def test_conjugation_order(wavy, phi8, tau):
    errs = []
    for N in (65, 129, 257):
        grid = make_grid(2, 1.0, N, MaskSpec.ball(1.0))
        worst = 0.0
        for v in bumps(grid, n=10, seed=1):
            app = conjugate(wavy, phi8, v, tau)
            d = app.direct.with_values(app.direct.values - app.expanded.values)
            worst = max(worst, h_norm(d) / h_norm(app.expanded))
        errs.append(worst)
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.9, orders


def test_adjointness_defects_are_order_h(wavy, phi8):
    defects = []
    for N in (65, 129, 257):
        grid = make_grid(2, 1.0, N, MaskSpec.ball(1.0))
        v = make_bump(grid, (0.1, 0.0), 0.5, seed=11)
        w = make_bump(grid, (-0.1, 0.1), 0.5, seed=12)
        a, b = conjugate(wavy, phi8, v, 5.0), conjugate(wavy, phi8, w, 5.0)
        scale = h_norm(v) * h_norm(w)
        s_def = abs(inner(a.S_part, w) - inner(v, b.S_part)) / scale
        a_def = abs(inner(a.A_part, w) + inner(v, b.A_part)) / scale
        defects.append((grid.h, s_def, a_def))
    for h, s_def, a_def in defects:
        assert s_def <= 1e-10
        assert a_def <= 10 * h
    assert defects[-1][2] < defects[0][2]


def test_overflow_guard(eye2, ball129):
    v = make_bump(ball129, (0.0, 0.0), 0.5)
    phi = exp_weight(WeightRecipe(neg_abs2(2), 8.0))
    with pytest.raises(WeightOverflow):
        conjugate(eye2, as_weight(linear_function([1.0, 0.0])), v, 1000.0)
    with pytest.raises(WeightOverflow):
        carleman_ratio(eye2, as_weight(linear_function([1.0, 0.0])), v, 400.0)
    assert math.isfinite(carleman_ratio(eye2, phi, v, 100.0))


def test_rellich_zero_field(wavy, ball129):
    f = make_bump(ball129, (0.1, 0.1), 0.5, seed=2)
    zero = lambda x: np.zeros(np.shape(x))
    assert rellich_residual(wavy, zero, f, lambda x: np.zeros(np.shape(x) + (2,))) == 0.0


@pytest.mark.parametrize("metric_name, field", [("eye2", "x"), ("eye2", "const:1,0.5"), ("wavy", "x"),
                                                ("wavy", "const:1,0.5")])
def test_rellich_refinement(request, metric_name, field):
    table = rellich_study(request.getfixturevalue(metric_name), field, [65, 129, 257])
    assert isinstance(table, RellichTable) and len(table.rows) == 3
    assert table.decays(1.6), (table.factors(), [r.residual for r in table.rows])
    assert "residual" in table.to_csv().splitlines()[0]


def test_rellich_constant_field_is_exact_with_identity(eye2):
    table = rellich_study(eye2, "const:1,0.5", [65, 129])
    assert table.at_floor()


def test_vector_field_names():
    B, J = vector_field_from_name("const:1,2")
    assert np.allclose(B(np.zeros((3, 2))), [1, 2])
    for bad in ("y", "const:1", "const:a,b"):
        with pytest.raises(InvalidInput):
            vector_field_from_name(bad)


def test_ratio_invariances(wavy, phi8, annulus129):
    u = make_bump(annulus129, (0.75, 0.0), 0.2, seed=3)
    shifted = exp_weight(WeightRecipe(neg_abs2(2), 8.0))
    shifted_fn = lambda x: phi8(x) + 3.7
    shifted_fn.gradient = phi8.gradient
    for tau in (1.0, 50.0, 300.0):
        r = carleman_ratio(wavy, phi8, u, tau)
        assert carleman_ratio(wavy, phi8, u.scaled(-2.5), tau) == pytest.approx(r, rel=1e-12)
        assert carleman_ratio(wavy, shifted_fn, u, tau) == pytest.approx(r, rel=1e-12)
        assert carleman_ratio(wavy, shifted, u, tau) == r


def test_ratio_errors(eye2, phi8, ball129):
    with pytest.raises(InvalidInput):
        carleman_ratio(eye2, phi8, ScalarField(ball129, np.zeros(ball129.shape)), 1.0)
    u = make_bump(ball129, (0.0, 0.0), 0.5)
    with pytest.raises(InvalidInput):
        carleman_ratio(eye2, phi8, u, 0.0)
    # a constant is in the discrete kernel of the face-flux Laplacian
    assert carleman_ratio(eye2, phi8, ScalarField(ball129, np.ones(ball129.shape)), 1.0) == math.inf


def test_terms_are_positive(eye2, phi8, annulus129):
    u = make_bump(annulus129, (0.0, -0.75), 0.2)
    lhs, rhs = carleman_terms(eye2, phi8, u, 10.0)
    assert lhs > 0 and rhs > 0


def test_sweep_degenerate_cases(eye2, phi8, annulus129):
    u = make_bump(annulus129, (0.75, 0.0), 0.2)
    rep = tau_sweep(eye2, phi8, [u], 7.0, 7.0, 1)
    assert rep.tau_grid == [7.0] and rep.tau0_emp == 7.0
    assert rep.K_emp == carleman_ratio(eye2, phi8, u, 7.0)
    with pytest.raises(InvalidInput):
        tau_sweep(eye2, phi8, [], 1.0, 2.0, 3)
    bad = certify(eye2, exp_weight(WeightRecipe(neg_abs2(2), 2.0)), annulus_samples(2, 0.5, 1.0, 5, 8))
    with pytest.raises(InvalidInput):
        tau_sweep(eye2, phi8, [u], 1.0, 2.0, 3, certificate=bad)


def test_plateau_detection():
    taus = [1, 2, 4, 8, 16]
    assert detect_plateau(taus, [1.0, 2.0, 3.0, 3.1, 3.15]) == 2
    assert detect_plateau(taus, [5.0, 4.0, 3.0, 3.0, 3.0]) == 0
    # a dip and partial recovery past the peak does not restart the plateau
    assert detect_plateau(taus, [1.0, 2.0, 3.0, 1.0, 1.2]) == 2
    with pytest.raises(PlateauNotFound) as info:
        detect_plateau(taus, [1, 2, 4, 8, 16])
    assert info.value.max_ratios == [1, 2, 4, 8, 16]


def test_sweep_on_certified_annulus(eye2, phi8, annulus129):
    fns = default_test_functions(annulus129, 0.5, 1.0, seed=0)
    assert len(fns) == 20 and len({u.label for u in fns}) == 20
    cert = certify(eye2, phi8, annulus_samples(2, 0.5, 1.0))
    rep = tau_sweep(eye2, phi8, fns, 0.25, 1024, 25, certificate=cert, threads=2)
    assert np.all(np.isfinite(rep.ratios)) and np.all(rep.ratios > 0)
    assert math.isfinite(rep.K_emp)
    assert rep.window_max(rep.tau0_emp, 4 * rep.tau0_emp) <= rep.K_emp
    serial = tau_sweep(eye2, phi8, fns, 0.25, 1024, 25, certificate=cert)
    assert np.array_equal(serial.ratios, rep.ratios)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "function_id,tau,lhs,rhs,ratio" and len(lines) == 1 + 20 * 25
    summary = rep.summary()
    assert summary["K_emp"] == rep.K_emp and summary["config"]["n_tau"] == 25


def test_default_corpus_is_seeded(annulus129):
    a = default_test_functions(annulus129, 0.5, 1.0, seed=4, n_fixed=1, n_random=2)
    b = default_test_functions(annulus129, 0.5, 1.0, seed=4, n_fixed=1, n_random=2)
    assert [u.label for u in a] == ["bump0", "random4000", "random4001"]
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
