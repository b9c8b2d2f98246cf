"""Metric fields, weight functions and their structural bounds.

Every callable here is vectorised: a point array of shape ``(..., n)`` maps to
values of shape ``(...)``, ``(..., n)`` or ``(..., n, n)``.  Metric
derivatives are stored as ``dg[..., s, i, j] = d g_ij / d x_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .errors import DegenerateMetric, InvalidInput, ZeroGradient
from .expressions import parse_expression

DEFAULT_FD_STEP = 1e-5


def _points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise InvalidInput(f"points must have trailing dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("points must be finite")
    return x


@dataclass(eq=False)
class MetricField:
    """Symmetric matrix field g(x) with declared ellipticity/Lipschitz bounds."""

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lambda_bound: Optional[float] = None
    Lambda_bound: Optional[float] = None
    name: str = "custom"
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        if self.dim < 2:
            raise InvalidInput("metric dimension must be at least 2")
        if self.lambda_bound is not None and self.lambda_bound < 1:
            raise InvalidInput("lambda_bound must be >= 1")
        if self.Lambda_bound is not None and self.Lambda_bound < 0:
            raise InvalidInput("Lambda_bound must be >= 0")

    def g(self, x):
        x = _points(x, self.dim)
        out = np.asarray(self.eval(x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.dim, self.dim))

    def dg(self, x):
        """Derivatives ``d_s g_ij``: analytic if supplied, else central differences."""
        x = _points(x, self.dim)
        if self.grad_eval is not None:
            out = np.asarray(self.grad_eval(x), dtype=float)
            return np.broadcast_to(out, x.shape[:-1] + (self.dim,) * 3)
        h = self.fd_step
        parts = []
        for s in range(self.dim):
            e = np.zeros(self.dim)
            e[s] = h
            parts.append((self.g(x + e) - self.g(x - e)) / (2 * h))
        return np.stack(parts, axis=-3)


@dataclass(eq=False)
class ScalarFunction:
    """A C^2 scalar field given by value, gradient and Hessian callables."""

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x):
        x = _points(x, self.dim)
        return np.broadcast_to(np.asarray(self.value(x), dtype=float), x.shape[:-1])

    def gradient(self, x):
        x = _points(x, self.dim)
        return np.broadcast_to(np.asarray(self.grad(x), dtype=float), x.shape)

    def hessian(self, x):
        x = _points(x, self.dim)
        return np.broadcast_to(np.asarray(self.hess(x), dtype=float), x.shape + (self.dim,))


@dataclass(eq=False)
class WeightFunction(ScalarFunction):
    """Carleman weight phi with sampled bounds m = min|grad phi|, M = ||phi||_C2."""

    m_bound: Optional[float] = None
    M_bound: Optional[float] = None
    # exponential weights: phi = exp(log_scale) * (value of ``scaled``) pointwise, for underflow-free forms
    log_scale: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    scaled: Optional[ScalarFunction] = field(default=None, repr=False)


@dataclass(eq=False)
class WeightRecipe:
    """Data for the exponential construction phi = exp(mu * psi)."""

    psi: ScalarFunction
    mu: float
    m0_bound: Optional[float] = None
    M0_bound: Optional[float] = None

    def psi_min(self, samples):
        return float(np.min(self.psi(samples)))


@dataclass
class EllipticityReport:
    lambda_emp: float
    Lambda_emp: float
    min_grad_phi: Optional[float]
    worst_points: dict
    passed: dict
    n_samples: int
    n_pairs: int

    def to_dict(self):
        return {
            "lambda_emp": self.lambda_emp,
            "Lambda_emp": self.Lambda_emp,
            "min_grad_phi": self.min_grad_phi,
            "worst_points": {k: list(map(float, v)) for k, v in self.worst_points.items()},
            "pass": dict(self.passed),
            "n_samples": self.n_samples,
            "n_pairs": self.n_pairs,
        }


# ---------------------------------------------------------------------------
# operations


def inverse_derivative(g_inv, dg):
    """``d_l g^{ik} = -g^{ij} (d_l g_jh) g^{hk}``, stacked along axis -3."""
    return -np.einsum("...ij,...ljh,...hk->...lik", g_inv, dg, g_inv)


def metric_eval(metric, x):
    """Return ``(g, g_inv, dg)`` at ``x``; raises DegenerateMetric if g is not SPD."""
    x = _points(x, metric.dim)
    g = np.array(metric.g(x))
    scale = np.max(np.abs(g), axis=(-2, -1), keepdims=True)
    asym = np.abs(g - np.swapaxes(g, -1, -2)) > 1e-12 * np.maximum(scale, 1e-300)
    if np.any(asym):
        idx = np.argwhere(np.any(asym, axis=(-2, -1)))[0] if x.ndim > 1 else ()
        raise DegenerateMetric("metric is not symmetric", x[tuple(idx)])
    eig = np.linalg.eigvalsh(g)
    bad = ~(eig[..., 0] > 0)
    if np.any(bad):
        idx = tuple(np.argwhere(bad)[0]) if x.ndim > 1 else ()
        raise DegenerateMetric(f"metric is not positive definite at {x[idx]}", x[idx])
    g_inv = np.linalg.inv(g)
    return g, g_inv, np.array(metric.dg(x))


def validate_bounds(metric, samples, pairs=(), phi=None):
    """Empirical ellipticity and Lipschitz constants over sample points.

    ``pairs`` is an iterable of ``(x, y)`` point pairs (or an array of shape
    ``(k, 2, n)``).  If ``phi`` is given, the minimum sampled gradient norm is
    reported as well.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InvalidInput("samples must be nonempty")
    samples = _points(samples.reshape(-1, metric.dim), metric.dim)
    g, _, _ = metric_eval(metric, samples)
    eig = np.linalg.eigvalsh(g)
    per_point = np.maximum(eig[:, -1], 1.0 / eig[:, 0])
    i_lam = int(np.argmax(per_point))
    lambda_emp = float(per_point[i_lam])
    worst = {"lambda": samples[i_lam]}

    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, metric.dim)
    Lambda_emp = 0.0
    if len(pairs):
        gx = metric.g(pairs[:, 0])
        gy = metric.g(pairs[:, 1])
        dist = np.linalg.norm(pairs[:, 0] - pairs[:, 1], axis=-1)
        keep = dist > 0
        if np.any(keep):
            quot = np.sum(np.abs(gx - gy), axis=(-2, -1))[keep] / dist[keep]
            j = int(np.argmax(quot))
            Lambda_emp = float(quot[j])
            worst["Lambda"] = pairs[keep][j, 0]

    passed = {}
    if metric.lambda_bound is not None:
        passed["lambda"] = bool(lambda_emp <= metric.lambda_bound * (1 + 1e-12))
    if metric.Lambda_bound is not None:
        passed["Lambda"] = bool(Lambda_emp <= metric.Lambda_bound * (1 + 1e-9) + 1e-12)

    min_grad = None
    if phi is not None:
        m_emp, _, where = _grad_min(phi, samples)
        min_grad = m_emp
        worst["m"] = where
        if isinstance(phi, WeightFunction) and phi.m_bound is not None:
            passed["m"] = bool(m_emp >= phi.m_bound * (1 - 1e-12))
        else:
            passed["m"] = bool(m_emp > 0)
    return EllipticityReport(lambda_emp, Lambda_emp, min_grad, worst, passed, len(samples), len(pairs))


def g_gradient(metric, x, euclid_grad):
    """Metric gradient ``g^{-1}(x) v``."""
    _, g_inv, _ = metric_eval(metric, x)
    return np.einsum("...ij,...j->...i", g_inv, np.asarray(euclid_grad, dtype=float))


def g_inner(metric_g, a, b):
    return np.einsum("...ij,...i,...j->...", metric_g, a, b)


def _grad_min(phi, samples):
    norms = np.linalg.norm(phi.gradient(samples), axis=-1)
    i = int(np.argmin(norms))
    return float(norms[i]), norms, samples[i]


def weight_bounds(phi, samples):
    """Sampled ``(m, M)``: min gradient norm and the max-entry C^2 norm.

    A vanishing gradient is not an error here; callers check ``m == 0``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InvalidInput("samples must be nonempty")
    samples = samples.reshape(-1, phi.dim)
    m_emp, _, _ = _grad_min(phi, samples)
    M_emp = max(
        float(np.max(np.abs(phi(samples)))),
        float(np.max(np.abs(phi.gradient(samples)))),
        float(np.max(np.abs(phi.hessian(samples)))),
    )
    return m_emp, M_emp


def exp_weight(recipe, samples=None):
    """Build ``phi = exp(mu * psi)`` with the chain-rule derivatives.

    With ``samples`` the bounds m, M are filled in and a vanishing gradient
    of psi raises ZeroGradient.
    """
    mu = float(recipe.mu)
    if not mu > 0:
        raise InvalidInput(f"mu must be positive, got {recipe.mu}")
    psi = recipe.psi

    def value(x):
        return np.exp(mu * psi(x))

    def grad(x):
        return mu * psi.gradient(x) * np.exp(mu * psi(x))[..., None]

    def hess(x):
        dpsi = psi.gradient(x)
        e = np.exp(mu * psi(x))[..., None, None]
        return (mu * psi.hessian(x) + mu**2 * dpsi[..., :, None] * dpsi[..., None, :]) * e

    def log_scale(x):
        return mu * psi(x)

    def grad_s(x):
        return mu * psi.gradient(x)

    def hess_s(x):
        dpsi = psi.gradient(x)
        return mu * psi.hessian(x) + mu**2 * dpsi[..., :, None] * dpsi[..., None, :]

    name = f"exp({mu:g}*{psi.name})"
    scaled = ScalarFunction(psi.dim, lambda x: np.ones(np.shape(x)[:-1]), grad_s, hess_s, name=f"scaled {name}")
    phi = WeightFunction(psi.dim, value, grad, hess, name=name, log_scale=log_scale, scaled=scaled)
    if samples is not None:
        samples = np.asarray(samples, dtype=float).reshape(-1, psi.dim)
        norms = np.linalg.norm(psi.gradient(samples), axis=-1)
        if np.any(norms == 0):
            where = samples[int(np.argmin(norms))]
            raise ZeroGradient(f"grad psi vanishes at {where}", where)
        phi.m_bound, phi.M_bound = weight_bounds(phi, samples)
    return phi


def laplace_beltrami_pointwise(metric, phi, x):
    """Analytic ``Delta_g phi = d_i(g^{ij} d_j phi)`` at points."""
    _, g_inv, dg = metric_eval(metric, x)
    dginv = inverse_derivative(g_inv, dg)
    div_ginv = np.einsum("...iij->...j", dginv)
    return np.einsum("...j,...j->...", div_ginv, phi.gradient(x)) + np.einsum(
        "...ij,...ij->...", g_inv, phi.hessian(x)
    )


# ---------------------------------------------------------------------------
# catalog


def identity_metric(dim=2):
    eye = np.eye(dim)
    return MetricField(
        dim,
        lambda x: np.broadcast_to(eye, x.shape[:-1] + (dim, dim)),
        lambda x: np.zeros(x.shape[:-1] + (dim,) * 3),
        lambda_bound=1.0,
        Lambda_bound=0.0,
        name="identity",
    )


def diagonal_metric(entries):
    d = np.asarray(entries, dtype=float)
    if np.any(d <= 0):
        raise InvalidInput("diagonal metric entries must be positive")
    dim = len(d)
    mat = np.diag(d)
    lam = float(max(d.max(), 1.0 / d.min(), 1.0))
    return MetricField(
        dim,
        lambda x: np.broadcast_to(mat, x.shape[:-1] + (dim, dim)),
        lambda x: np.zeros(x.shape[:-1] + (dim,) * 3),
        lambda_bound=lam,
        Lambda_bound=0.0,
        name="diag:" + ",".join(f"{v:g}" for v in d),
    )


def sin_perturbed_metric(eps, dim=2):
    """``g_11 = 1 + eps sin(x1)``, identity elsewhere."""
    eps = float(eps)
    if abs(eps) >= 1:
        raise InvalidInput("sin-perturbed metric needs |eps| < 1")

    def g(x):
        out = np.zeros(x.shape[:-1] + (dim, dim))
        out[...] = np.eye(dim)
        out[..., 0, 0] = 1 + eps * np.sin(x[..., 0])
        return out

    def dg(x):
        out = np.zeros(x.shape[:-1] + (dim,) * 3)
        out[..., 0, 0, 0] = eps * np.cos(x[..., 0])
        return out

    return MetricField(dim, g, dg, lambda_bound=1 / (1 - abs(eps)), Lambda_bound=abs(eps),
                       name=f"sin-perturbed:{eps:g}")


def expression_metric(rows, dim=None, lambda_bound=None, Lambda_bound=None):
    """Metric from expression strings; ``rows`` is a list of lists (upper part mirrored)."""
    dim = dim or len(rows)
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise InvalidInput(f"metric expression must be a {dim}x{dim} array")
    exprs = [[parse_expression(rows[min(i, j)][max(i, j)], dim) for j in range(dim)] for i in range(dim)]
    for i in range(dim):
        for j in range(i):
            if rows[i][j].strip() != rows[j][i].strip():
                lower = parse_expression(rows[i][j], dim)
                if sp.simplify(lower.sym - exprs[j][i].sym) != 0:
                    raise InvalidInput(f"metric expression not symmetric in entries ({i+1},{j+1})")

    def g(x):
        return np.stack([np.stack([e(x) for e in row], axis=-1) for row in exprs], axis=-2)

    def dg(x):
        return np.stack(
            [np.stack([np.stack([e.grad(x)[..., s] for e in row], axis=-1) for row in exprs], axis=-2)
             for s in range(dim)],
            axis=-3,
        )

    text = ";".join(",".join(r) for r in rows)
    return MetricField(dim, g, dg, lambda_bound, Lambda_bound, name=f"matrix:{text}")


def neg_abs2(dim=2):
    """psi(x) = -|x|^2."""
    return ScalarFunction(
        dim,
        lambda x: -np.sum(x * x, axis=-1),
        lambda x: -2.0 * x,
        lambda x: np.broadcast_to(-2.0 * np.eye(dim), x.shape + (dim,)),
        name="psi-neg-abs2",
    )


def linear_function(direction):
    d = np.asarray(direction, dtype=float)
    dim = len(d)
    return ScalarFunction(
        dim,
        lambda x: x @ d,
        lambda x: np.broadcast_to(d, x.shape),
        lambda x: np.zeros(x.shape + (dim,)),
        name="psi-linear:" + ",".join(f"{v:g}" for v in d),
    )


def expression_function(text, dim=2):
    e = parse_expression(text, dim)
    return ScalarFunction(dim, e, e.grad, e.hess, name=f"expr:{text}")


def as_weight(fn, samples=None):
    """Use a scalar function directly as the weight phi."""
    phi = WeightFunction(fn.dim, fn.value, fn.grad, fn.hess, name=fn.name)
    if samples is not None:
        phi.m_bound, phi.M_bound = weight_bounds(phi, samples)
    return phi


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise InvalidInput(f"malformed numbers in {what}: {text!r}") from None


def metric_from_name(name, dim=2):
    """Catalog lookup: identity, diag:a,b, sin-perturbed:eps, matrix:r1;r2."""
    name = name.strip()
    if name == "identity":
        return identity_metric(dim)
    kind, _, arg = name.partition(":")
    if kind == "diag":
        vals = _floats(arg, "diag metric")
        if len(vals) != dim:
            raise InvalidInput(f"diag metric needs {dim} entries")
        return diagonal_metric(vals)
    if kind == "sin-perturbed":
        return sin_perturbed_metric(_floats(arg, "sin-perturbed metric")[0], dim)
    if kind == "matrix":
        rows = [r.split(",") for r in arg.split(";")]
        return expression_metric(rows, dim)
    raise InvalidInput(f"unknown metric {name!r}; expected identity, diag:a,b, sin-perturbed:eps or matrix:...")


def scalar_from_name(name, dim=2):
    """Catalog lookup: psi-neg-abs2, psi-linear:d1,d2, expr:<expression>."""
    name = name.strip()
    if name in ("psi-neg-abs2", "neg-abs2"):
        return neg_abs2(dim)
    kind, _, arg = name.partition(":")
    if kind == "psi-linear":
        vals = _floats(arg, "linear function")
        if len(vals) != dim:
            raise InvalidInput(f"psi-linear needs {dim} components")
        return linear_function(vals)
    if kind == "expr":
        return expression_function(arg, dim)
    raise InvalidInput(f"unknown scalar field {name!r}; expected psi-neg-abs2, psi-linear:..., expr:...")


# ---------------------------------------------------------------------------
# sample sets


def annulus_samples(dim, r_in, r_out, n_radial=41, n_angular=64):
    """Polar (2D) or spherical (3D) tensor samples including both boundary radii."""
    if not 0 <= r_in < r_out:
        raise InvalidInput("need 0 <= r_in < r_out")
    radii = np.linspace(r_in, r_out, n_radial)
    radii = radii[radii > 0]
    if dim == 2:
        ang = np.linspace(0, 2 * math.pi, n_angular, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    elif dim == 3:
        k = np.arange(n_angular) + 0.5
        z = 1 - 2 * k / n_angular
        t = math.pi * (1 + 5**0.5) * k
        rr = np.sqrt(1 - z * z)
        dirs = np.stack([rr * np.cos(t), rr * np.sin(t), z], axis=-1)
    else:
        raise InvalidInput("annulus samples support dim 2 or 3")
    return (radii[:, None, None] * dirs[None]).reshape(-1, dim)


def box_samples(dim, lo, hi, n=21):
    axes = [np.linspace(lo, hi, n)] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)


def neighbour_pairs(samples, rng=None, n_pairs=2000, max_dist=None):
    """Random nearby pairs for Lipschitz quotients."""
    samples = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    i = rng.integers(0, len(samples), n_pairs)
    j = rng.integers(0, len(samples), n_pairs)
    pairs = np.stack([samples[i], samples[j]], axis=1)
    if max_dist is not None:
        d = np.linalg.norm(pairs[:, 0] - pairs[:, 1], axis=-1)
        pairs = pairs[(d > 0) & (d <= max_dist)]
    return pairs
