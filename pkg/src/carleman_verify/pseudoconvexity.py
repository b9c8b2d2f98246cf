"""Pseudoconvexity quadratic forms, certification and proof diagnostics.

The central object is the quadratic form

    q(x, t) = 4 phi_jk t_j t_k - 4 (d_s g_kh) w_k t_h t_s + 2 (d_s g_tw) w_s t_t t_w,

with ``w = g^{-1} grad phi``.  The weight is certified when
``c0 = min_x 1/2 [min_t q(x, t) + q(x, N)] > 0`` where ``N = w / |w|_g`` and
``t`` runs over g-unit vectors g-orthogonal to ``N``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInput, SearchExhausted, ZeroGradient
from .fields import (
    WeightRecipe,
    exp_weight,
    laplace_beltrami_pointwise,
    metric_eval,
)

CERTIFICATE_VERSION = "pseudoconvexity-certificate/1"


@dataclass
class _Geometry:
    g: np.ndarray
    g_inv: np.ndarray
    dg: np.ndarray
    dphi: np.ndarray
    hess: np.ndarray
    w: np.ndarray  # g^{-1} grad phi
    wnorm2: np.ndarray  # |w|_g^2


def _geometry(metric, phi, x, check_gradient=True):
    x = np.asarray(x, dtype=float)
    g, g_inv, dg = metric_eval(metric, x)
    dphi = np.array(phi.gradient(x))
    hess = np.array(phi.hessian(x))
    w = np.einsum("...ij,...j->...i", g_inv, dphi)
    wnorm2 = np.einsum("...i,...i->...", dphi, w)
    if check_gradient and np.any(~(wnorm2 > 0)):
        bad = np.argwhere(~(np.asarray(wnorm2) > 0))
        where = x[tuple(bad[0])] if x.ndim > 1 else x
        raise ZeroGradient(f"grad phi vanishes at {where}", where)
    return _Geometry(g, g_inv, dg, dphi, hess, w, wnorm2)


def normal_direction(metric, phi, x):
    """``N_g = grad_g phi / |grad_g phi|_g``."""
    geo = _geometry(metric, phi, x)
    return geo.w / np.sqrt(geo.wnorm2)[..., None]


def _q_literal(geo, theta):
    return (
        4 * np.einsum("...jk,...j,...k->...", geo.hess, theta, theta)
        - 4 * np.einsum("...skh,...k,...h,...s->...", geo.dg, geo.w, theta, theta)
        + 2 * np.einsum("...stv,...s,...t,...v->...", geo.dg, geo.w, theta, theta)
    )


def _q_matrix(geo):
    a = np.einsum("...skh,...k->...sh", geo.dg, geo.w)
    return 4 * geo.hess - 2 * (a + np.swapaxes(a, -1, -2)) + 2 * np.einsum("...s,...stv->...tv", geo.w, geo.dg)


def q_form(metric, phi, x, theta):
    """Evaluate q(x, theta); exactly quadratic in ``theta``."""
    geo = _geometry(metric, phi, x, check_gradient=False)
    return _q_literal(geo, np.asarray(theta, dtype=float))


def q_matrix(metric, phi, x):
    """Symmetric matrix of the form q(x, .)."""
    return _q_matrix(_geometry(metric, phi, x, check_gradient=False))


def Q_form(metric, phi, x, xi, tau):
    """The explicit polynomial form of Q(x, xi, tau), valid for all real tau."""
    geo = _geometry(metric, phi, x, check_gradient=False)
    xg = np.einsum("...ij,...j->...i", geo.g_inv, np.asarray(xi, dtype=float))
    tau = np.asarray(tau, dtype=float)
    w, dg, hess = geo.w, geo.dg, geo.hess
    return (
        4 * (np.einsum("...jk,...j,...k->...", hess, xg, xg) + tau**2 * np.einsum("...jk,...j,...k->...", hess, w, w))
        - 4 * np.einsum("...skh,...k,...h,...s->...", dg, w, xg, xg)
        + 2 * np.einsum("...stv,...t,...v,...s->...", dg, xg, xg, w)
        - 2 * tau**2 * np.einsum("...skh,...k,...h,...s->...", dg, w, w, w)
    )


def symbol(metric, phi, x, xi, tau):
    """Principal symbol P(x, xi + i tau grad phi) as a complex number."""
    geo = _geometry(metric, phi, x, check_gradient=False)
    xi = np.asarray(xi, dtype=float)
    xg = np.einsum("...ij,...j->...i", geo.g_inv, xi)
    xi2 = np.einsum("...i,...i->...", xi, xg)
    cross = np.einsum("...i,...i->...", xi, geo.w)
    return xi2 - tau**2 * geo.wnorm2 + 2j * tau * cross


def _tangent_basis(geo):
    """g-orthonormal basis of the g-orthogonal complement of N, shape (..., n, n-1).

    Householder reflection in Cholesky coordinates: with g = L L^T the map
    t -> L^T t is a g-isometry, so orthonormal complements carry over.
    """
    n = geo.g.shape[-1]
    chol = np.linalg.cholesky(geo.g)
    N = geo.w / np.sqrt(geo.wnorm2)[..., None]
    y = np.einsum("...ji,...j->...i", chol, N)  # L^T N, Euclidean unit vector
    e1 = np.zeros_like(y)
    e1[..., 0] = 1.0
    sign = np.where(y[..., :1] >= 0, 1.0, -1.0)
    v = y + sign * e1
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    house = np.eye(n) - 2 * v[..., :, None] * v[..., None, :]
    comp = house[..., :, 1:]  # columns orthonormal and orthogonal to y
    return np.linalg.solve(np.swapaxes(chol, -1, -2), comp)


def _tangent_min(geo):
    n = geo.g.shape[-1]
    if n < 2:
        raise InvalidInput("tangent space is empty for n = 1")
    basis = _tangent_basis(geo)
    qm = _q_matrix(geo)
    red = np.einsum("...ia,...ij,...jb->...ab", basis, qm, basis)
    red = 0.5 * (red + np.swapaxes(red, -1, -2))
    vals, vecs = np.linalg.eigh(red)
    argmin = np.einsum("...ia,...a->...i", basis, vecs[..., :, 0])
    return vals[..., 0], argmin


def tangent_min(metric, phi, x):
    """Minimum of q(x, t) over g-unit tangents t g-orthogonal to N_g, and a minimiser."""
    if metric.dim < 2:
        raise InvalidInput("tangent space is empty for n = 1")
    return _tangent_min(_geometry(metric, phi, x))


@dataclass
class PseudoconvexityCertificate:
    c0: float
    argmin_point: list
    argmin_tangent: list
    n_samples: int
    tangent_resolution: int
    margin: float = 0.0
    passed: bool = False
    diagnostic: str = ""
    metric_id: str = ""
    phi_id: str = ""
    log_c0: Optional[float] = None
    point_values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("point_values")
        d["version"] = CERTIFICATE_VERSION
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CERTIFICATE_VERSION:
            raise InvalidInput(f"unsupported certificate version {d.get('version')!r}")
        d = {k: v for k, v in d.items() if k != "version"}
        return cls(**d)


def pointwise_c0(metric, phi, samples):
    """Per-point values 1/2 (min_t q(t) + q(N)) with the tangent minimisers."""
    geo = _geometry(metric, phi, samples)
    tmin, targ = _tangent_min(geo)
    N = geo.w / np.sqrt(geo.wnorm2)[..., None]
    qn = _q_literal(geo, N)
    return 0.5 * (tmin + qn), targ


def certify(metric, phi, domain_samples, margin=0.0):
    """Certify the pseudoconvexity condition on ``domain_samples``.

    Passes iff the sampled constant ``c0`` exceeds ``margin``.  A vanishing
    gradient yields a failed certificate rather than an exception.
    """
    samples = np.asarray(domain_samples, dtype=float).reshape(-1, metric.dim)
    if len(samples) == 0:
        raise InvalidInput("domain_samples must be nonempty")
    if margin < 0:
        raise InvalidInput("margin must be >= 0")
    ids = dict(metric_id=metric.name, phi_id=getattr(phi, "name", ""))
    scaled = getattr(phi, "scaled", None)
    try:
        if scaled is None:
            values, tangents = pointwise_c0(metric, phi, samples)
            log_values = None
        else:
            # the pointwise constant is linear in (grad phi, Hess phi), so the
            # exponential factor is carried in log form and never underflows
            s_values, tangents = pointwise_c0(metric, scaled, samples)
            log_scale = np.asarray(phi.log_scale(samples), dtype=float)
            values = s_values * np.exp(log_scale)
            with np.errstate(divide="ignore", invalid="ignore"):
                log_values = np.where(s_values > 0, log_scale + np.log(np.where(s_values > 0, s_values, 1.0)), -np.inf)
    except ZeroGradient as exc:
        where = exc.location if exc.location is not None else samples[0]
        return PseudoconvexityCertificate(
            0.0, [float(v) for v in where], [0.0] * metric.dim, len(samples), metric.dim - 1,
            margin, False, f"zero gradient: {exc}", **ids,
        )
    if log_values is None:
        i = int(np.argmin(values))
        passed = bool(values[i] > margin)
        log_c0 = math.log(values[i]) if values[i] > 0 else None
    else:
        negative = s_values <= 0
        i = int(np.argmin(np.where(negative, s_values, np.inf))) if np.any(negative) else int(np.argmin(log_values))
        log_c0 = None if np.any(negative) else float(log_values[i])
        passed = log_c0 is not None and (margin == 0 or log_c0 > math.log(margin))
    c0 = float(values[i])
    diag = "" if passed else f"c0={c0:.6g} does not exceed margin {margin:g}"
    return PseudoconvexityCertificate(
        c0, [float(v) for v in samples[i]], [float(v) for v in tangents[i]], len(samples), metric.dim - 1,
        float(margin), passed, diag, log_c0=log_c0, point_values=values, **ids,
    )


@dataclass
class CrossCheckReport:
    n_draws: int
    n_violations: int
    min_slack: float
    worst_point: list
    slack_tolerance: float

    def to_dict(self):
        return asdict(self)


def characteristic_cross_check(metric, phi, certificate, samples, n_random=10_000, seed=0,
                               tau_range=(0.1, 10.0), slack_tol=1e-9):
    """Brute-force check of Q >= c0 (|xi_g|^2 + tau^2 |w|^2) on the characteristic set.

    Draws a sample point, a g-unit tangent direction and a nonzero ``tau``;
    sets ``xi_g = |tau| |w|_g t`` so that the principal symbol vanishes.
    """
    if not certificate.passed or certificate.c0 <= 0:
        raise InvalidInput("characteristic cross-check needs a passing certificate")
    rng = np.random.default_rng(seed)
    samples = np.asarray(samples, dtype=float).reshape(-1, metric.dim)
    x = samples[rng.integers(0, len(samples), n_random)]
    lo, hi = tau_range
    tau = np.exp(rng.uniform(math.log(lo), math.log(hi), n_random)) * rng.choice([-1.0, 1.0], n_random)
    geo = _geometry(metric, phi, x)
    basis = _tangent_basis(geo)
    coef = rng.standard_normal((n_random, metric.dim - 1))
    coef /= np.linalg.norm(coef, axis=-1, keepdims=True)
    t = np.einsum("kia,ka->ki", basis, coef)
    wnorm = np.sqrt(geo.wnorm2)
    xi_g = (np.abs(tau) * wnorm)[:, None] * t
    xi = np.einsum("kij,kj->ki", geo.g, xi_g)
    Q = Q_form(metric, phi, x, xi, tau)
    xi_g2 = np.einsum("kij,ki,kj->k", geo.g, xi_g, xi_g)
    rhs = certificate.c0 * (xi_g2 + tau**2 * geo.wnorm2)
    slack = Q - rhs
    j = int(np.argmin(slack))
    return CrossCheckReport(
        n_random, int(np.sum(slack < -slack_tol)), float(slack[j]), [float(v) for v in x[j]], slack_tol
    )


def mu_search(metric, psi, domain_samples, mu_max, mu_start=1.0, n_bisect=30, margin=0.0):
    """Smallest mu for which exp(mu psi) certifies, by doubling then bisection.

    Returns ``(mu_min, certificate)``; raises SearchExhausted with the
    ``(mu, c0)`` trace if no probe up to ``mu_max`` passes.
    """
    if not mu_max > 0:
        raise InvalidInput("mu_max must be positive")
    samples = np.asarray(domain_samples, dtype=float).reshape(-1, metric.dim)
    trace = []

    def probe(mu):
        cert = certify(metric, exp_weight(WeightRecipe(psi, mu)), samples, margin)
        trace.append((mu, cert.c0))
        return cert

    mu = min(mu_start, mu_max)
    cert = probe(mu)
    lo = None
    while not cert.passed:
        if mu >= mu_max:
            raise SearchExhausted(f"no mu <= {mu_max:g} certifies (best c0={max(c for _, c in trace):.4g})", trace)
        lo = mu
        mu = min(2 * mu, mu_max)
        cert = probe(mu)
    if lo is None:
        return mu, cert
    hi, hi_cert = mu, cert
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        c = probe(mid)
        if c.passed:
            hi, hi_cert = mid, c
        else:
            lo = mid
    return hi, hi_cert


@dataclass
class AlphaSelection:
    points: np.ndarray
    alpha_tilde: np.ndarray
    gamma: np.ndarray
    q_normal: np.ndarray
    C2_emp: float


def _lipschitz(points, values, max_pairs=250_000, rng=None):
    k = len(points)
    if k < 2:
        return 0.0
    if k * (k - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(k, 1)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        i = rng.integers(0, k, max_pairs)
        j = rng.integers(0, k, max_pairs)
    d = np.linalg.norm(points[i] - points[j], axis=-1)
    keep = d > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(values[i] - values[j])[keep] / d[keep]))


def alpha_select(certificate, metric, phi, x):
    """Pin ``alpha~`` so that ``q(N) + 2 alpha~ = 3 c0 / 8`` at each point."""
    if not certificate.passed:
        raise InvalidInput("alpha selection needs a passing certificate")
    pts = np.asarray(x, dtype=float).reshape(-1, metric.dim)
    geo = _geometry(metric, phi, pts)
    N = geo.w / np.sqrt(geo.wnorm2)[..., None]
    qn = _q_literal(geo, N)
    alpha = (3 * certificate.c0 / 8 - qn) / 2
    gamma = alpha - laplace_beltrami_pointwise(metric, phi, pts)
    return AlphaSelection(pts, alpha, gamma, qn, _lipschitz(pts, alpha))


def coupling_constant(metric, phi, samples):
    """Empirical C1: max over samples of the g-dual norm of (q-matrix) N."""
    geo = _geometry(metric, phi, np.asarray(samples, dtype=float).reshape(-1, metric.dim))
    N = geo.w / np.sqrt(geo.wnorm2)[..., None]
    v = np.einsum("...ij,...j->...i", _q_matrix(geo), N)
    return float(np.max(np.sqrt(np.einsum("...i,...ij,...j->...", v, geo.g_inv, v))))


@dataclass
class MinorReport:
    M_matrix: np.ndarray
    minors: np.ndarray
    C1_emp: float
    detM_lower: float
    tau1_emp: float
    tau: float


def _f_alpha_matrix(tau, wnorm2, qn, alpha, c0, C1):
    k = np.shape(qn)
    M = np.zeros(k + (3, 3))
    M[..., 0, 0] = 4 * tau * wnorm2 + qn - 2 * alpha
    M[..., 0, 1] = M[..., 1, 0] = -C1
    M[..., 1, 1] = c0 - qn - 2 * alpha
    M[..., 2, 2] = qn + 2 * alpha
    return M


def minor_report(certificate, metric, phi, x, tau, C1, m=None, lam=None,
                 tau_grid=np.geomspace(1e-3, 1e6, 271)):
    """Matrix of the quadratic form F_alpha, its minors, and the empirical tau_1.

    Minors are the trailing principal minors ``(q+2a, det M1, det M)``.
    ``tau1_emp`` is the smallest grid tau with ``det M >= c0^2 m^2 / (2 lam)``
    at every point of ``x``.
    """
    sel = alpha_select(certificate, metric, phi, x)
    geo = _geometry(metric, phi, sel.points)
    c0 = certificate.c0
    if m is None:
        m = phi.m_bound if getattr(phi, "m_bound", None) else float(np.min(np.linalg.norm(geo.dphi, axis=-1)))
    if lam is None:
        lam = metric.lambda_bound or 1.0
    lower = c0**2 * m**2 / (2 * lam)

    def minors_of(M):
        return np.stack([M[..., 2, 2], M[..., 1, 1] * M[..., 2, 2], np.linalg.det(M)], axis=-1)

    M = _f_alpha_matrix(tau, geo.wnorm2, sel.q_normal, sel.alpha_tilde, c0, C1)
    tau1 = math.inf
    for t in tau_grid:
        Mt = _f_alpha_matrix(t, geo.wnorm2, sel.q_normal, sel.alpha_tilde, c0, C1)
        if np.all(np.linalg.det(Mt) >= lower):
            tau1 = float(t)
            break
    single = np.asarray(x).ndim == 1
    return MinorReport(M[0] if single else M, minors_of(M)[0] if single else minors_of(M), float(C1),
                       float(lower), tau1, float(tau))


@dataclass
class ProofDiagnostics:
    X: float
    Y: float
    Z: float
    T_g: np.ndarray
    grad_norm2: float


def tangential_split(metric, phi, x, grad_v, tau, v_val):
    """Normal/tangential split of ``grad_g v`` and the scaled value Z = tau |w|_g v."""
    geo = _geometry(metric, phi, x)
    N = geo.w / np.sqrt(geo.wnorm2)[..., None]
    gv = np.einsum("...ij,...j->...i", geo.g_inv, np.asarray(grad_v, dtype=float))
    normal = np.einsum("...ij,...i,...j->...", geo.g, gv, N)
    T = gv - normal[..., None] * N
    Y = np.sqrt(np.maximum(np.einsum("...ij,...i,...j->...", geo.g, T, T), 0.0))
    Z = tau * np.sqrt(geo.wnorm2) * v_val
    grad2 = np.einsum("...i,...i->...", np.asarray(grad_v, dtype=float), gv)
    return ProofDiagnostics(np.abs(normal), Y, Z, T, grad2)
