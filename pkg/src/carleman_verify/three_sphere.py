"""Three-sphere inequality experiments for solutions of the divergence-form equation.

The exponent comes from the radial profile ``t -> exp(-mu0 t^2)`` of the
weight: balancing the two exponentials of the interpolation step gives

    theta = (p(rho) - p(1/2)) / (p(r0/4) - p(1/2)),     p(t) = exp(-mu0 t^2),

and the balancing parameter

    tau~ = log(|u|_1^2 / |u|_r0^2) / (2 (p(r0/4) - p(1/2))).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .discretization import MaskSpec, ScalarField, grad_norm2_g, integrate, make_grid
from .errors import DegenerateSolution, InvalidInput
from .fields import annulus_samples, identity_metric, neg_abs2
from .pseudoconvexity import mu_search
from .solver import DEFAULT_TOL, random_coefficients, solve_dirichlet, zero_coefficients

CELLS_PER_OSCILLATION = 8


def _profile(t, mu0):
    return math.exp(-mu0 * t * t)


def _check_range(r0, rho):
    if not 0 < r0 < 1:
        raise InvalidInput(f"r0={r0} must lie in (0, 1)")
    if not (r0 / 2 < rho < 0.5 and r0 < rho):
        raise InvalidInput(f"rho={rho} outside the admissible range (max(r0, r0/2)={r0}, 1/2)")


def theta(r0, rho, mu0):
    """Interpolation exponent; refuses ``rho`` outside ``(r0/2, 1/2)``."""
    if not r0 / 2 < rho < 0.5:
        raise InvalidInput(f"rho={rho} outside the admissible range ({r0 / 2}, 1/2)")
    if not mu0 > 0:
        raise InvalidInput("mu0 must be positive")
    half = _profile(0.5, mu0)
    return (_profile(rho, mu0) - half) / (_profile(r0 / 4, mu0) - half)


def tau_tilde(norm_r0, norm_1, r0, mu0):
    """Parameter at which both terms of the interpolation bound coincide."""
    if norm_r0 <= 0:
        raise DegenerateSolution("u vanishes on B_r0; tau~ is +inf")
    if norm_1 <= 0:
        raise InvalidInput("norm on B_1 must be positive")
    return math.log(norm_1**2 / norm_r0**2) / (2 * (_profile(r0 / 4, mu0) - _profile(0.5, mu0)))


def balance_terms(norm_r0, norm_1, r0, rho, mu0, tau):
    """The two exponential terms of the interpolation bound at ``tau``."""
    p = lambda t: _profile(t, mu0)
    first = math.exp(2 * tau * (p(r0 / 4) - p(rho))) * norm_r0**2
    second = math.exp(2 * tau * (p(0.5) - p(rho))) * norm_1**2
    return first, second


def ball_norm(u, r):
    """``||u||_{L^2(B_r)}`` with cut-cell quadrature."""
    grid = u.grid
    if r > grid.half_extent * (1 + 1e-12) or not r > 0:
        raise InvalidInput(f"ball radius {r} not inside the grid")
    return math.sqrt(max(integrate(u.values**2, grid=grid, region=(0.0, r)), 0.0))


@dataclass
class ThreeSphereReport:
    r0: float
    rho: float
    mu0: float
    theta: float
    tau_tilde: float
    norms: tuple  # (B_r0, B_rho, B_1)
    C_emp: float
    branch: str
    tau_bar1: Optional[float] = None
    small_tau_bound: Optional[float] = None
    interpolation_bound: float = math.nan
    C_declared: Optional[float] = None
    holds: Optional[bool] = None

    def to_dict(self):
        d = asdict(self)
        d["norms"] = list(self.norms)
        return d


def three_sphere_check(u, r0, rho, mu0, tau_bar1=None, C_declared=None):
    """Norms, exponent, balancing parameter and the empirical constant for ``u``.

    Both cases of the interpolation argument are reported: when
    ``tau~ >= tau_bar1`` the bound comes from balancing at ``tau~``; otherwise
    ``C^2 <= exp(2 tau_bar1 (p(rho) - p(1/2)))``.  ``interpolation_bound`` is
    the elementary ``(|u|_1/|u|_r0)^theta`` implied by ``|u|_rho <= |u|_1``.
    """
    _check_range(r0, rho)
    if not np.any(u.values):
        raise InvalidInput("u vanishes identically")
    th = theta(r0, rho, mu0)
    n0, nr, n1 = ball_norm(u, r0), ball_norm(u, rho), ball_norm(u, 1.0)
    tt = tau_tilde(n0, n1, r0, mu0)
    C = nr / (n0**th * n1 ** (1 - th))
    small = None
    branch = "undetermined"
    if tau_bar1 is not None:
        branch = "balanced" if tt >= tau_bar1 else "small-tau"
        expo = tau_bar1 * (_profile(rho, mu0) - _profile(0.5, mu0))
        small = math.exp(expo) if expo < 700 else math.inf
    holds = None if C_declared is None else bool(C <= C_declared)
    return ThreeSphereReport(r0, rho, mu0, th, tt, (n0, nr, n1), C, branch, tau_bar1, small,
                             (n1 / n0) ** th, C_declared, holds)


@dataclass
class CaccioppoliReport:
    annulus_in: tuple
    annulus_out: tuple
    lhs: float
    rhs_scaled: float
    ratio: float


def caccioppoli_ratio(metric, u, r0, inner_annulus=None, outer_annulus=None):
    """``r0^2 int_inner |grad_g u|^2 / int_outer u^2``; annuli default to (r0/4, r0/2) and (r0/8, r0)."""
    inner_annulus = (r0 / 4, r0 / 2) if inner_annulus is None else tuple(inner_annulus)
    outer_annulus = (r0 / 8, r0) if outer_annulus is None else tuple(outer_annulus)
    if not (outer_annulus[0] <= inner_annulus[0] < inner_annulus[1] <= outer_annulus[1]):
        raise InvalidInput("inner annulus must lie inside the outer annulus")
    lhs = integrate(grad_norm2_g(metric, u), grid=u.grid, region=inner_annulus)
    rhs = integrate(u.values**2, grid=u.grid, region=outer_annulus)
    if rhs <= 0:
        raise DegenerateSolution("u vanishes on the outer annulus")
    return CaccioppoliReport(inner_annulus, outer_annulus, lhs, rhs, r0**2 * lhs / rhs)


def certified_mu0(r0, metric=None, mu_max=1e5, n_radial=81, n_angular=128):
    """Smallest ``mu`` certifying ``exp(-mu |x|^2)`` on ``r0/8 <= |x| <= 1``, with its certificate."""
    metric = identity_metric(2) if metric is None else metric
    samples = annulus_samples(metric.dim, r0 / 8, 1.0, n_radial, n_angular)
    return mu_search(metric, neg_abs2(metric.dim), samples, mu_max)


def harmonic_monomial(k):
    """``Re (x1 + i x2)^k = r^k cos(k angle)``."""

    def u(x):
        z = np.asarray(x[..., 0]) + 1j * np.asarray(x[..., 1])
        return np.real(z**k)

    return u


def harmonic_norm(k, R):
    return math.sqrt(math.pi * R ** (2 * k + 2) / (2 * k + 2))


def _csv(header, rows, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


@dataclass
class HarmonicRow:
    k: int
    norm_r0: float
    norm_rho: float
    norm_1: float
    theta: float
    C_emp_numeric: float
    C_emp_analytic: float
    norm_rel_error: float
    under_resolved: bool


@dataclass
class HarmonicTable:
    rows: list
    r0: float
    rho: float
    mu0: float
    source: str

    HEADER = ("k", "norm_r0", "norm_rho", "norm_1", "theta", "C_emp_numeric", "C_emp_analytic",
              "norm_rel_error", "under_resolved")

    @property
    def max_norm_error(self):
        return max(r.norm_rel_error for r in self.rows)

    @property
    def C_max(self):
        return max(r.C_emp_numeric for r in self.rows)

    def to_csv(self, path=None):
        return _csv(self.HEADER, [tuple(asdict(r).values()) for r in self.rows], path)


def harmonic_family_experiment(k_max, r0, rho, mu0, grid, source="analytic", threads=1, tol=DEFAULT_TOL):
    """``r^k cos(k angle)``, k = 1..k_max, sampled or solved on ``grid``; numeric vs closed-form norms."""
    if grid.dim != 2:
        raise InvalidInput("the harmonic family lives in 2D")
    if not 1 <= k_max <= 10:
        raise InvalidInput("k_max must lie in 1..10")
    if source not in ("analytic", "solve"):
        raise InvalidInput("source must be 'analytic' or 'solve'")
    _check_range(r0, rho)
    metric = identity_metric(2)
    zero = zero_coefficients(2)

    def run(k):
        u_fn = harmonic_monomial(k)
        if source == "analytic":
            u = ScalarField(grid, u_fn(grid.x), f"harmonic{k}")
        else:
            u = solve_dirichlet(metric, zero, grid, u_fn, tol=tol).solution
        rep = three_sphere_check(u, r0, rho, mu0)
        exact = [harmonic_norm(k, R) for R in (r0, rho, 1.0)]
        err = max(abs(a - b) / b for a, b in zip(rep.norms, exact))
        analytic = (rho * r0 ** (-rep.theta)) ** (k + 1)
        under = 2 * math.pi / k / grid.h < CELLS_PER_OSCILLATION
        return HarmonicRow(k, *rep.norms, rep.theta, rep.C_emp, analytic, err, under)

    ks = range(1, k_max + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, ks))
    else:
        rows = [run(k) for k in ks]
    return HarmonicTable(rows, r0, rho, mu0, source)


def random_harmonic_data(seed, k_max=3):
    """Random harmonic polynomial ``sum_k c_k r^k cos(k angle + a_k)``, k = 0..k_max."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, k_max + 1)
    ang = rng.uniform(0, 2 * np.pi, k_max + 1)

    def u(x):
        z = np.asarray(x[..., 0]) + 1j * np.asarray(x[..., 1])
        return sum(c[k] * np.real(np.exp(1j * ang[k]) * z**k) for k in range(k_max + 1))

    return u


@dataclass
class PerturbedRow:
    seed: int
    b_sup: float
    a_sup: float
    iterations: int
    norm_r0: float
    norm_rho: float
    norm_1: float
    C_emp: float


@dataclass
class PerturbedTable:
    rows: list
    M1: float

    HEADER = ("seed", "b_sup", "a_sup", "iterations", "norm_r0", "norm_rho", "norm_1", "C_emp")

    @property
    def C_max(self):
        return max(r.C_emp for r in self.rows)

    def to_csv(self, path=None):
        return _csv(self.HEADER, [tuple(asdict(r).values()) for r in self.rows], path)


def perturbed_experiment(seeds, r0, rho, mu0, grid, M1=1.0, threads=1, tol=DEFAULT_TOL, metric=None):
    """Solve with random bounded coefficients and random harmonic boundary data per seed."""
    _check_range(r0, rho)
    metric = identity_metric(grid.dim) if metric is None else metric
    inside = grid.x[grid.mask]

    def run(seed):
        coeffs = random_coefficients(grid.dim, seed, M1)
        bsup, asup = coeffs.check(inside)
        rep = solve_dirichlet(metric, coeffs, grid, random_harmonic_data(seed), tol=tol)
        ts = three_sphere_check(rep.solution, r0, rho, mu0)
        return PerturbedRow(int(seed), bsup, asup, rep.iterations, *ts.norms, ts.C_emp)

    seeds = list(seeds)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, seeds))
    else:
        rows = [run(s) for s in seeds]
    return PerturbedTable(rows, float(M1))


def ball_grid(N, dim=2):
    return make_grid(dim, 1.0, N, MaskSpec.ball(1.0))
