"""Dirichlet problems for ``Delta_g u - <b, grad_g u> - a u = f`` on masked balls."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .discretization import ScalarField, integrate, laplacian_matrix, make_grid, MaskSpec, node_metric
from .errors import InvalidInput, NonConvergence
from .expressions import Expression, parse_expression
from .fields import inverse_derivative, metric_eval

DEFAULT_TOL = 1e-10
MAX_RESTARTS = 5


@dataclass
class CoefficientField:
    """Lower-order coefficients: ``b`` maps points to vectors, ``a`` to scalars."""

    dim: int
    b: Callable
    a: Callable
    M1_bound: float
    name: str = ""
    b_zero: bool = False

    def sup_norms(self, samples):
        pts = np.asarray(samples, dtype=float)
        bn = np.linalg.norm(np.broadcast_to(self.b(pts), pts.shape), axis=-1)
        an = np.abs(np.broadcast_to(self.a(pts), pts.shape[:-1]))
        return float(bn.max()), float(an.max())

    def check(self, samples, rtol=1e-12):
        bmax, amax = self.sup_norms(samples)
        if max(bmax, amax) > self.M1_bound * (1 + rtol):
            raise InvalidInput(f"{self.name}: sampled sup norms ({bmax:.4g}, {amax:.4g}) exceed M1={self.M1_bound:g}")
        return bmax, amax


def zero_coefficients(dim):
    return CoefficientField(dim, lambda x: np.zeros(np.shape(x)), lambda x: np.zeros(np.shape(x)[:-1]), 0.0,
                            "zero", b_zero=True)


def constant_coefficients(dim, b=None, a=0.0):
    b = np.zeros(dim) if b is None else np.asarray(b, dtype=float)
    M1 = max(float(np.linalg.norm(b)), abs(float(a)))
    return CoefficientField(
        dim,
        lambda x: np.broadcast_to(b, np.shape(x)).copy(),
        lambda x: np.full(np.shape(x)[:-1], float(a)),
        M1,
        f"const(b={b.tolist()},a={a:g})",
        b_zero=not np.any(b),
    )


def random_coefficients(dim, seed, M1=1.0, n_modes=3):
    """Smooth trigonometric coefficients with ``|b(x)| <= M1`` and ``|a(x)| <= M1`` everywhere."""
    rng = np.random.default_rng(seed)

    def trig(shape_extra):
        freq = rng.uniform(-3, 3, shape_extra + (n_modes, dim))
        phase = rng.uniform(0, 2 * np.pi, shape_extra + (n_modes,))
        amp = rng.uniform(-1, 1, shape_extra + (n_modes,))
        amp = amp / np.sum(np.abs(amp), axis=-1, keepdims=True)
        return freq, phase, amp

    bf, bp, ba = trig((dim,))
    af, ap, aa = trig(())
    scale_b = M1 * rng.uniform(0.5, 1.0) / math.sqrt(dim)
    scale_a = M1 * rng.uniform(-1.0, 1.0)

    def b(x):
        x = np.asarray(x, dtype=float)
        arg = np.einsum("...d,kmd->...km", x, bf) + bp
        return scale_b * np.sum(ba * np.sin(arg), axis=-1)

    def a(x):
        x = np.asarray(x, dtype=float)
        arg = np.einsum("...d,md->...m", x, af) + ap
        return scale_a * np.sum(aa * np.cos(arg), axis=-1)

    return CoefficientField(dim, b, a, float(M1), f"random:{seed}")


@dataclass
class LinearSystem:
    A: sps.csr_matrix
    rhs: np.ndarray
    grid: object
    unknown: np.ndarray  # boolean mask of unknown nodes
    boundary_values: np.ndarray  # full-grid array; used outside ``unknown``
    symmetric: bool
    warnings: list = field(default_factory=list)


@dataclass
class SolveReport:
    iterations: int
    residual_norm: float
    h: float
    solution: ScalarField
    method: str = ""
    residual_trace: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)


def centered_gradient_matrices(grid):
    """Sparse centred first differences per axis (one-sided rows at the box edge)."""
    n, N, h = grid.dim, grid.points_per_axis, grid.h
    d = sps.diags([-0.5 * np.ones(N - 1), 0.5 * np.ones(N - 1)], [-1, 1], shape=(N, N), format="lil")
    d[0, :3] = [-1.5, 2.0, -0.5]
    d[N - 1, N - 3:] = [0.5, -2.0, 1.5]
    d = d.tocsr() / h
    eye = sps.identity(N, format="csr")
    mats = []
    for axis in range(n):
        m = None
        for a in range(n):
            f = d if a == axis else eye
            m = f if m is None else sps.kron(m, f, format="csr")
        mats.append(m)
    return mats


def _boundary_array(grid, dirichlet):
    if callable(dirichlet):
        vals = np.asarray(dirichlet(grid.x), dtype=float)
    else:
        vals = np.asarray(dirichlet, dtype=float)
    vals = np.broadcast_to(vals, grid.shape).copy()
    band = _band(grid)
    if not np.all(np.isfinite(vals[band])):
        raise InvalidInput("boundary data must be finite on the boundary band")
    return vals


def _band(grid):
    """Exterior nodes within one stencil step (including diagonals) of the mask."""
    m = grid.mask
    grown = m.copy()
    for axis in range(grid.dim):  # successive axis growth also reaches diagonal neighbours
        grown = grown | np.roll(grown, 1, axis) | np.roll(grown, -1, axis)
    return grown & ~m


def operator_matrix(metric, coeffs, grid):
    """``K = L - b . D - diag(a)`` on the full grid, plus a symmetry flag."""
    L = laplacian_matrix(metric, grid)
    pts = grid.x
    a = np.broadcast_to(np.asarray(coeffs.a(pts), dtype=float), grid.shape).ravel()
    K = L - sps.diags(a)
    symmetric = True
    if not coeffs.b_zero:
        b = np.broadcast_to(np.asarray(coeffs.b(pts), dtype=float), pts.shape).reshape(-1, grid.dim)
        if np.any(b):
            symmetric = False
            for k, Dk in enumerate(centered_gradient_matrices(grid)):
                K = K - sps.diags(b[:, k]) @ Dk
    return K.tocsr(), symmetric


def peclet_number(metric, coeffs, grid):
    """Largest cell Peclet number ``|b| h / lambda_min(g^{-1})`` over the mask."""
    if coeffs.b_zero:
        return 0.0
    _, g_inv = node_metric(metric, grid)
    lam = np.linalg.eigvalsh(g_inv[grid.mask])[:, 0]
    b = np.linalg.norm(np.broadcast_to(coeffs.b(grid.x), grid.x.shape)[grid.mask], axis=-1)
    return float(np.max(b * grid.h / lam))


def assemble(metric, coeffs, grid, dirichlet, source=None):
    """Eliminate Dirichlet data on the exterior band; rows scaled by ``h^n``."""
    if grid.mask_spec.kind != "ball":
        raise InvalidInput("the Dirichlet solver needs a simply connected (ball) mask")
    if coeffs.dim != grid.dim:
        raise InvalidInput("coefficient dimension does not match the grid")
    warnings = []
    pe = peclet_number(metric, coeffs, grid)
    if pe >= 2:
        warnings.append(f"cell Peclet number {pe:.3g} >= 2; centred convection may oscillate")
    K, symmetric = operator_matrix(metric, coeffs, grid)
    bvals = _boundary_array(grid, dirichlet)
    unknown = grid.mask
    idx = unknown.ravel()
    ub = np.where(idx, 0.0, bvals.ravel())
    f = np.zeros(grid.size) if source is None else np.asarray(
        source.values if isinstance(source, ScalarField) else source, dtype=float).ravel()
    scale = grid.h**grid.dim
    A = (K[idx][:, idx] * scale).tocsr()
    rhs = (f[idx] - (K @ ub)[idx]) * scale
    return LinearSystem(A, rhs, grid, unknown, bvals, symmetric, warnings)


def solve(system, tol=DEFAULT_TOL, max_iter=None):
    """Jacobi-preconditioned CG (symmetric) or BiCGSTAB; true relative residual <= tol."""
    A, rhs = system.A, system.rhs
    n = A.shape[0]
    max_iter = 20 * n if max_iter is None else int(max_iter)
    sign = -1.0 if system.symmetric else 1.0  # -Delta_g is positive definite
    A_s = sign * A
    b_s = sign * rhs
    diag = A_s.diagonal()
    if np.any(diag == 0):
        raise InvalidInput("zero diagonal entry in the assembled system")
    M = spla.LinearOperator((n, n), matvec=lambda v: v / diag, dtype=float)
    bnorm = float(np.linalg.norm(b_s))
    trace = []
    grid = system.grid
    full = system.boundary_values.copy()
    if bnorm == 0:
        full[system.unknown] = 0.0
        return SolveReport(0, 0.0, grid.h, ScalarField(grid, full), "trivial", [], list(system.warnings))

    base = np.zeros(n)

    def cb(xk):
        trace.append(float(np.linalg.norm(b_s - A_s @ (base + xk))) / bnorm)

    method = "cg" if system.symmetric else "bicgstab"
    krylov = spla.cg if system.symmetric else spla.bicgstab
    x = base
    passes = 0
    for _ in range(MAX_RESTARTS + 1):
        # restarts solve for a correction from the true residual, which the
        # recurrence residual drifts away from near roundoff
        r = b_s - A_s @ x
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol or len(trace) >= max_iter:
            break
        base = x
        d, info = krylov(A_s, r, rtol=min(tol / res, 0.5), atol=0.0, maxiter=max_iter - len(trace), M=M, callback=cb)
        if not np.all(np.isfinite(d)):
            break
        x = base + d
        passes += 1
    if passes > 1:
        method += f"+{passes - 1}restart"
    res = float(np.linalg.norm(b_s - A_s @ x)) / bnorm
    if res > tol or not np.all(np.isfinite(x)):
        raise NonConvergence(f"{method} stopped after {len(trace)} iterations at relative residual {res:.3g}",
                             trace)
    full[system.unknown] = x
    return SolveReport(len(trace), res, grid.h, ScalarField(grid, full), method, trace, list(system.warnings))


def solve_dirichlet(metric, coeffs, grid, dirichlet, source=None, tol=DEFAULT_TOL, max_iter=None):
    return solve(assemble(metric, coeffs, grid, dirichlet, source), tol, max_iter)


def continuous_operator(metric, coeffs, expr, x):
    """``Delta_g u - <b, grad u> - a u`` for an Expression ``u`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    _, g_inv, dg = metric_eval(metric, x)
    dginv = inverse_derivative(g_inv, dg)  # [..., k, i, j] = d_k g^{ij}
    du = expr.grad(x)
    H = expr.hess(x)
    lap = np.einsum("...iij,...j->...", dginv, du) + np.einsum("...ij,...ij->...", g_inv, H)
    b = np.broadcast_to(coeffs.b(x), x.shape)
    return lap - np.einsum("...i,...i->...", b, du) - coeffs.a(x) * expr(x)


@dataclass
class ConvergenceRow:
    N: int
    h: float
    l2_error: float
    max_error: float
    order: float
    iterations: int


@dataclass
class ConvergenceTable:
    exact: str
    rows: list
    solutions: list = field(default_factory=list, repr=False)

    @property
    def orders(self):
        return [r.order for r in self.rows[1:]]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "h", "l2_error", "max_error", "order", "iterations"])
        for r in self.rows:
            w.writerow([r.N, repr(r.h), repr(r.l2_error), repr(r.max_error), repr(r.order), r.iterations])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def coefficients_from_expressions(b_texts, a_text, dim, samples=None):
    """Coefficients from expression strings; ``M1_bound`` is the sampled sup on ``[-1, 1]^n``."""
    if isinstance(b_texts, str):
        b_texts = [t for t in b_texts.split(",")]
    if len(b_texts) == 1 and dim > 1:
        b_texts = list(b_texts) * dim
    if len(b_texts) != dim:
        raise InvalidInput(f"b needs {dim} components, got {len(b_texts)}")
    bs = [parse_expression(t, dim) for t in b_texts]
    a = parse_expression(a_text, dim)
    b_zero = all(e.sym == 0 for e in bs)
    coeffs = CoefficientField(dim, lambda x: np.stack([e(x) for e in bs], axis=-1), a, 0.0,
                              f"b=({','.join(b_texts)}),a={a_text}", b_zero=b_zero)
    if samples is None:
        axes = [np.linspace(-1, 1, 41)] * dim
        samples = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    coeffs.M1_bound = max(coeffs.sup_norms(samples))
    return coeffs


def manufactured_check(metric, coeffs, exact_u, grids, radius=1.0, tol=DEFAULT_TOL, keep_solutions=False):
    """Solve with the source of a known solution on each grid and measure errors.

    ``grids`` may hold GridDomain objects or point counts (balls of ``radius``
    on ``[-radius, radius]^n``).  Order is ``log2(e(h) / e(h/2))``.
    """
    if isinstance(exact_u, str):
        exact_u = parse_expression(exact_u, metric.dim)
    if not isinstance(exact_u, Expression):
        raise InvalidInput("exact_u must be an expression")
    rows, solutions = [], []
    prev = None
    for g in grids:
        grid = g if not isinstance(g, (int, np.integer)) else make_grid(metric.dim, radius, int(g), MaskSpec.ball(radius))
        f = continuous_operator(metric, coeffs, exact_u, grid.x)
        rep = solve_dirichlet(metric, coeffs, grid, exact_u, ScalarField(grid, np.where(grid.mask, f, 0.0)), tol)
        err = np.where(grid.mask, rep.solution.values - exact_u(grid.x), 0.0)
        l2 = math.sqrt(integrate(err**2, grid=grid))
        mx = float(np.max(np.abs(err)))
        order = math.nan
        if prev is not None and l2 > 0 and prev[1] > 0:
            order = math.log(prev[1] / l2) / math.log(prev[0] / grid.h)
        rows.append(ConvergenceRow(grid.points_per_axis, grid.h, l2, mx, order, rep.iterations))
        if keep_solutions:
            solutions.append(rep.solution)
        prev = (grid.h, l2)
    table = ConvergenceTable(exact_u.text, rows)
    table.solutions = solutions
    return table
