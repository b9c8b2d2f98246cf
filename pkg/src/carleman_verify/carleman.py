"""Conjugated operator, Rellich identity and empirical Carleman ratios.

All weighted integrals use shifted exponentials ``exp(2 tau (phi - c))``
with ``c`` the maximum of phi on the grid; ratios do not depend on ``c``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretization import (
    ScalarField,
    euclid_gradient,
    grad_norm2_g,
    integrate,
    laplace_beltrami,
    make_bump,
    node_metric,
)
from .errors import InvalidInput, PlateauNotFound, WeightOverflow
from .fields import laplace_beltrami_pointwise

EXP_LIMIT = 650.0
PLATEAU_RATE = 0.05
SWEEP_VERSION = "tau-sweep/1"


def _weight_shift(phi_nodes, tau, support=None):
    vals = phi_nodes if support is None else phi_nodes[support]
    c = float(np.max(vals))
    span = float(np.max(vals) - np.min(vals))
    if abs(tau) * span > EXP_LIMIT:
        raise WeightOverflow(f"|tau (phi - c)| reaches {abs(tau) * span:.1f} > {EXP_LIMIT}")
    return c


def _support(u, pad=2):
    """Nodes within ``pad`` cells of the support of ``u`` (where stencils reach)."""
    s = u.values != 0
    for axis in range(u.values.ndim):
        grown = s.copy()
        for k in range(1, pad + 1):
            grown |= np.roll(s, k, axis) | np.roll(s, -k, axis)
        s = grown
    return s


@dataclass
class ConjugatedApplication:
    tau: float
    direct: ScalarField
    expanded: ScalarField
    S_part: ScalarField
    A_part: ScalarField


def _phi_data(metric, phi, grid):
    pts = grid.x
    dphi = phi.gradient(pts)
    _, g_inv = node_metric(metric, grid)
    w = np.einsum("...ij,...j->...i", g_inv, dphi)
    wnorm2 = np.einsum("...i,...i->...", dphi, w)
    return np.asarray(phi(pts)), w, wnorm2, laplace_beltrami_pointwise(metric, phi, pts)


def conjugate(metric, phi, v, tau):
    """``P_tau v = e^{tau phi} Delta_g (e^{-tau phi} v)`` literally and expanded.

    The expanded form is ``S_tau v + A_tau v`` with
    ``S_tau v = Delta_g v + tau^2 |grad_g phi|^2 v`` and
    ``A_tau v = -2 tau <grad_g phi, grad_g v> - tau (Delta_g phi) v``.
    """
    grid = v.grid
    phin, w, wnorm2, lap_phi = _phi_data(metric, phi, grid)
    c = _weight_shift(phin, tau, _support(v))
    e = np.exp(tau * (phin - c))
    inner_v = v.with_values(v.values / e)
    direct = laplace_beltrami(metric, inner_v).values * e
    lap_v = laplace_beltrami(metric, v).values
    dv = euclid_gradient(v)
    cross = np.einsum("...i,...i->...", w, dv)
    S = lap_v + tau**2 * wnorm2 * v.values
    A = -2 * tau * cross - tau * lap_phi * v.values
    return ConjugatedApplication(
        float(tau), v.with_values(direct), v.with_values(S + A), v.with_values(S), v.with_values(A)
    )


def rellich_terms(metric, B, f, B_jacobian=None):
    """Integrated left and right sides of the Rellich identity for compactly supported f.

    ``B`` maps points to vectors; ``B_jacobian`` (optional) maps points to
    ``J[..., k, i] = d_i B^k``, otherwise it is differenced on the grid.
    The divergence term integrates to zero and is omitted.
    """
    grid = f.grid
    pts = grid.x
    Bv = np.broadcast_to(np.asarray(B(pts), dtype=float), pts.shape)
    if B_jacobian is not None:
        J = np.broadcast_to(np.asarray(B_jacobian(pts), dtype=float), pts.shape + (grid.dim,))
    else:
        J = np.stack([np.stack(np.gradient(Bv[..., k], grid.h, edge_order=2), axis=-1) for k in range(grid.dim)],
                     axis=-2)
    from .fields import inverse_derivative, metric_eval

    _, g_inv, dg = metric_eval(metric, pts)
    dginv = inverse_derivative(g_inv, dg)  # [..., k, i, j] = d_k g^{ij}
    df = euclid_gradient(f)
    lap = laplace_beltrami(metric, f).values
    lhs_int = 2 * np.einsum("...i,...i->...", Bv, df) * lap
    gn2 = np.einsum("...ij,...i,...j->...", g_inv, df, df)
    divB = np.einsum("...kk->...", J)
    rhs_int = (
        divB * gn2
        - 2 * np.einsum("...ki,...ij,...j,...k->...", J, g_inv, df, df)
        + np.einsum("...k,...kij,...i,...j->...", Bv, dginv, df, df)
    )
    return integrate(lhs_int, grid=grid), integrate(rhs_int, grid=grid)


def rellich_residual(metric, B, f, B_jacobian=None):
    """``|LHS - RHS|`` of the integrated Rellich identity."""
    lhs, rhs = rellich_terms(metric, B, f, B_jacobian)
    return abs(lhs - rhs)


@dataclass
class _Prepared:
    label: str
    support: np.ndarray
    gn2: np.ndarray
    u2: np.ndarray
    lap2: np.ndarray
    weights: np.ndarray


def _prepare(metric, u):
    if not np.any(u.values):
        raise InvalidInput("test function is identically zero")
    s = _support(u)
    lap = laplace_beltrami(metric, u).values
    gn2 = grad_norm2_g(metric, u)
    return _Prepared(u.label, s, gn2[s], (u.values**2)[s], (lap**2)[s], u.grid.weights[s])


def _ratio(prep, phin, tau):
    ph = phin[prep.support]
    c = _weight_shift(ph, 2 * tau)
    wt = np.exp(2 * tau * (ph - c)) * prep.weights
    lhs = tau * float(np.sum((prep.gn2 + tau**2 * prep.u2) * wt))
    rhs = float(np.sum(prep.lap2 * wt))
    return lhs, rhs


def carleman_terms(metric, phi, u, tau):
    """``(LHS, RHS)`` of the weighted inequality, both scaled by ``exp(-2 tau max phi)``."""
    if not tau > 0:
        raise InvalidInput("tau must be positive")
    prep = _prepare(metric, u)
    return _ratio(prep, np.asarray(phi(u.grid.x)), tau)


def carleman_ratio(metric, phi, u, tau):
    """Empirical constant LHS/RHS needed at this tau (``inf`` if RHS vanishes)."""
    lhs, rhs = carleman_terms(metric, phi, u, tau)
    if rhs == 0:
        return math.inf if lhs > 0 else 0.0
    return lhs / rhs


@dataclass
class TauSweepReport:
    tau_grid: list
    ratios: np.ndarray  # (n_functions, n_tau)
    lhs: np.ndarray
    rhs: np.ndarray
    K_emp: float
    tau0_emp: float
    test_function_ids: list
    tau_trusted_max: float
    max_ratio: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def window_max(self, lo, hi):
        cols = [k for k, t in enumerate(self.tau_grid) if lo <= t <= hi]
        return float(np.max(self.ratios[:, cols])) if cols else math.nan

    def rows(self):
        for i, fid in enumerate(self.test_function_ids):
            for k, t in enumerate(self.tau_grid):
                yield fid, t, float(self.lhs[i, k]), float(self.rhs[i, k]), float(self.ratios[i, k])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["function_id", "tau", "lhs", "rhs", "ratio"])
        for fid, t, l, r, q in self.rows():
            w.writerow([fid, repr(t), repr(l), repr(r), repr(q)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self):
        return {
            "version": SWEEP_VERSION,
            "K_emp": self.K_emp,
            "tau0_emp": self.tau0_emp,
            "tau_trusted_max": self.tau_trusted_max,
            "n_functions": len(self.test_function_ids),
            "n_tau": len(self.tau_grid),
            "max_ratio_per_tau": self.max_ratio,
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def detect_plateau(taus, max_ratio, rate=PLATEAU_RATE):
    """Index of the first tau after which the running max ratio grows < ``rate`` per doubling.

    Growth is measured against the running maximum, so a dip followed by a
    partial recovery (common once ``tau h > 1``) does not restart the plateau.
    """
    taus = np.asarray(taus, dtype=float)
    R = np.asarray(max_ratio, dtype=float)
    if len(R) == 1:
        return 0
    growth = np.empty(len(R) - 1)
    peak = R[0]
    for k in range(1, len(R)):
        octaves = math.log2(taus[k] / taus[k - 1])
        growth[k - 1] = (R[k] / peak) ** (1.0 / octaves) - 1.0 if peak > 0 else math.inf
        peak = max(peak, R[k])
    if growth[-1] >= rate:
        raise PlateauNotFound("Carleman ratios still growing at the largest tau", R.tolist())
    start = 0
    for k in range(len(growth) - 1, -1, -1):
        if growth[k] >= rate:
            start = k + 1
            break
    return start


def tau_sweep(metric, phi, test_functions, tau_min, tau_max, n_tau, certificate=None, threads=1):
    """Ratios of the weighted inequality for every (test function, tau) pair on a geometric grid."""
    test_functions = list(test_functions)
    if not test_functions:
        raise InvalidInput("tau_sweep needs at least one test function")
    if certificate is not None and not certificate.passed:
        raise InvalidInput("tau_sweep needs a passing pseudoconvexity certificate")
    if not 0 < tau_min <= tau_max or n_tau < 1:
        raise InvalidInput("need 0 < tau_min <= tau_max and n_tau >= 1")
    taus = [float(tau_min)] if n_tau == 1 else [float(t) for t in np.geomspace(tau_min, tau_max, n_tau)]
    grid = test_functions[0].grid
    phin = np.asarray(phi(grid.x))

    def run(u):
        prep = _prepare(metric, u)
        return [_ratio(prep, phin, t) for t in taus]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, test_functions))
    else:
        results = [run(u) for u in test_functions]
    lhs = np.array([[l for l, _ in row] for row in results])
    rhs = np.array([[r for _, r in row] for row in results])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.inf)
    max_ratio = ratios.max(axis=0)
    k0 = detect_plateau(taus, max_ratio)
    ids = [u.label or f"u{i}" for i, u in enumerate(test_functions)]
    config = {"tau_min": float(tau_min), "tau_max": float(tau_max), "n_tau": int(n_tau),
              "metric": metric.name, "phi": getattr(phi, "name", ""), "grid": grid.describe()}
    return TauSweepReport(
        taus, ratios, lhs, rhs, float(max_ratio[k0:].max()), taus[k0], ids, 1.0 / grid.h,
        [float(v) for v in max_ratio], config,
    )


def default_test_functions(grid, r_in, r_out, seed=0, n_fixed=5, n_random=15):
    """Deterministic bumps on the mid circle of an annulus plus seeded random superpositions."""
    collar = 2 * grid.h
    mid = 0.5 * (r_in + r_out)
    radius = 0.5 * (r_out - r_in) - collar - grid.h
    if radius <= 2 * grid.h:
        raise InvalidInput("annulus too thin for the test-function corpus at this resolution")
    out = []

    def centre(angle):
        c = np.zeros(grid.dim)
        c[0], c[1] = mid * math.cos(angle), mid * math.sin(angle)
        return c

    for k in range(n_fixed):
        u = make_bump(grid, centre(2 * math.pi * k / n_fixed), radius * (0.6 + 0.4 * k / max(n_fixed - 1, 1)))
        u.label = f"bump{k}"
        out.append(u)
    rng = np.random.default_rng(seed)
    for k in range(n_random):
        s = seed * 1000 + k
        u = make_bump(grid, centre(rng.uniform(0, 2 * math.pi)), radius, seed=s)
        u.label = f"random{s}"
        out.append(u)
    return out


def vector_field_from_name(name, dim=2):
    """``x`` (position field) or ``const:b1,b2,...``; returns ``(B, jacobian)``."""
    if name == "x":
        return (lambda x: np.asarray(x, dtype=float),
                lambda x: np.broadcast_to(np.eye(dim), np.shape(x) + (dim,)))
    if name.startswith("const:"):
        try:
            b = np.array([float(t) for t in name[6:].split(",")])
        except ValueError:
            raise InvalidInput(f"malformed constant field {name!r}") from None
        if b.shape != (dim,):
            raise InvalidInput(f"constant field needs {dim} components")
        return (lambda x: np.broadcast_to(b, np.shape(x)).copy(),
                lambda x: np.zeros(np.shape(x) + (dim,)))
    raise InvalidInput(f"unknown vector field {name!r}; use 'x' or 'const:b1,b2'")


@dataclass
class RellichRow:
    N: int
    h: float
    lhs: float
    rhs: float
    residual: float
    scale: float


@dataclass
class RellichTable:
    field: str
    rows: list
    floor: float = 1e-12

    def factors(self):
        r = [row.residual for row in self.rows]
        return [a / b if b > 0 else math.inf for a, b in zip(r, r[1:])]

    def at_floor(self):
        """Residuals indistinguishable from roundoff relative to the size of the integrands."""
        return all(row.residual <= self.floor * row.scale for row in self.rows)

    def decays(self, factor=1.6):
        return self.at_floor() or all(f >= factor for f in self.factors())

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "h", "lhs", "rhs", "residual", "scale"])
        for r in self.rows:
            w.writerow([r.N, repr(r.h), repr(r.lhs), repr(r.rhs), repr(r.residual), repr(r.scale)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def rellich_study(metric, field_name, grids, center=(0.2, 0.1), radius=0.5, seed=3, L=1.0):
    """Rellich residuals of a seeded smooth bump under refinement."""
    from .discretization import MaskSpec, make_grid

    B, J = vector_field_from_name(field_name, metric.dim)
    rows = []
    for N in grids:
        grid = make_grid(metric.dim, L, int(N), MaskSpec.ball(L))
        c = np.zeros(metric.dim)
        c[: len(center)] = center[: metric.dim]
        f = make_bump(grid, c, radius, seed=seed)
        lhs, rhs = rellich_terms(metric, B, f, J)
        df = euclid_gradient(f)
        Bn = np.linalg.norm(np.broadcast_to(B(grid.x), grid.x.shape), axis=-1)
        lap = laplace_beltrami(metric, f).values
        scale = integrate(2 * Bn * np.linalg.norm(df, axis=-1) * np.abs(lap), grid=grid) + integrate(
            (1 + Bn) * np.sum(df**2, axis=-1), grid=grid)
        rows.append(RellichRow(int(N), grid.h, lhs, rhs, abs(lhs - rhs), scale))
    return RellichTable(field_name, rows)
