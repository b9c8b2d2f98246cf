"""Masked Cartesian grids, the face-flux Laplace-Beltrami operator, quadrature,
cutoffs and compactly supported test functions.

Grids are vertex centred: ``N`` nodes per axis on ``[-L, L]`` with spacing
``h = 2L/(N-1)``.  Node arrays use ``indexing="ij"`` and are flattened in C
order when sparse operators act on them.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps

from .errors import InvalidInput
from .fields import metric_eval

MIN_POINTS = 16
COLLAR_CELLS = 2


@dataclass(frozen=True)
class MaskSpec:
    kind: str  # "ball" | "annulus"
    r_out: float
    r_in: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "annulus"):
            raise InvalidInput(f"unknown mask kind {self.kind!r}")
        if not self.r_out > 0:
            raise InvalidInput("mask radius must be positive")
        if self.kind == "annulus" and not 0 < self.r_in < self.r_out:
            raise InvalidInput("annulus needs 0 < r_in < r_out")
        if self.kind == "ball" and self.r_in != 0:
            raise InvalidInput("ball mask has no inner radius")

    @classmethod
    def ball(cls, R):
        return cls("ball", float(R))

    @classmethod
    def annulus(cls, r_in, r_out):
        return cls("annulus", float(r_out), float(r_in))

    def contains(self, r):
        inside = r < self.r_out
        if self.kind == "annulus":
            inside &= r > self.r_in
        return inside


def _as_mask(spec):
    if isinstance(spec, MaskSpec):
        return spec
    if isinstance(spec, (int, float)):
        return MaskSpec.ball(spec)
    kind, *rad = spec
    if kind == "ball":
        return MaskSpec.ball(*rad)
    if kind == "annulus":
        return MaskSpec.annulus(*rad)
    raise InvalidInput(f"malformed mask spec {spec!r}")


def _square_cut_fraction(sd, normal, side):
    """Area fraction of a square of side ``side`` lying on the inside of a line.

    ``sd`` is the signed distance of the square centre to the line (positive
    inside) and ``normal`` the unit line normal, shape ``(..., 2)``.
    """
    a = np.abs(normal[..., 0]) * side
    b = np.abs(normal[..., 1]) * side
    a, b = np.maximum(a, b), np.minimum(a, b)
    t = sd + 0.5 * (a + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(b > 0, t * t / (2 * a * b), 0.0)
        mid = (t - 0.5 * b) / a
        hi = np.where(b > 0, 1 - (a + b - t) ** 2 / (2 * a * b), 1.0)
    out = np.where(t < b, lo, np.where(t <= a, mid, hi))
    return np.clip(np.where(t <= 0, 0.0, np.where(t >= a + b, 1.0, out)), 0.0, 1.0)


def _circle_fraction(y, radius, side, inside):
    r = np.linalg.norm(y, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    normal = y / safe[..., None]
    sd = radius - r if inside else r - radius
    return _square_cut_fraction(sd, normal, side)


def _subsample_fraction(x, h, r_in, r_out, sub=3):
    """Fraction of each node cell inside ``r_in < |y| < r_out``.

    The cell is split into ``sub^n`` sub-cells.  In 2D each sub-cell's
    fraction is the exact area cut off by the tangent line of the nearest
    circle; in 3D the sub-cell centre is tested.
    """
    n = x.shape[-1]
    s = h / sub
    offs = (np.arange(sub) - (sub - 1) / 2) * s
    frac = np.zeros(x.shape[:-1])
    for shift in itertools.product(offs, repeat=n):
        y = x + np.asarray(shift)
        if n == 2:
            f = _circle_fraction(y, r_out, s, inside=True)
            if r_in > 0:
                f = f * _circle_fraction(y, r_in, s, inside=False)
        else:
            r = np.linalg.norm(y, axis=-1)
            f = (r < r_out) & (r > r_in) if r_in > 0 else r < r_out
        frac += f
    return frac / sub**n


@dataclass(frozen=True, eq=False)
class GridDomain:
    dim: int
    half_extent: float
    points_per_axis: int
    mask_spec: MaskSpec
    h: float = field(init=False)
    axis: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L, N = self.half_extent, self.points_per_axis
        h = 2 * L / (N - 1)
        axis = np.linspace(-L, L, N)
        x = np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"), axis=-1)
        r = np.linalg.norm(x, axis=-1)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mask", self.mask_spec.contains(r))
        frac = _subsample_fraction(x, h, self.mask_spec.r_in, self.mask_spec.r_out)
        object.__setattr__(self, "weights", frac * h**self.dim)

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    @property
    def size(self):
        return self.points_per_axis**self.dim

    def region_weights(self, r_in, r_out, sub=3):
        """Quadrature weights of the open annulus ``r_in < |x| < r_out`` (``r_in=0``: ball)."""
        return _subsample_fraction(self.x, self.h, r_in, r_out, sub) * self.h**self.dim

    def describe(self):
        return {
            "dim": self.dim,
            "half_extent": self.half_extent,
            "points_per_axis": self.points_per_axis,
            "h": self.h,
            "mask": {"kind": self.mask_spec.kind, "r_in": self.mask_spec.r_in, "r_out": self.mask_spec.r_out},
        }


def make_grid(dim, L, N, mask_spec):
    """Build a masked vertex-centred grid on ``[-L, L]^dim``."""
    if dim not in (2, 3):
        raise InvalidInput("grids support dim 2 or 3")
    if int(N) != N or N < MIN_POINTS:
        raise InvalidInput(f"need at least {MIN_POINTS} points per axis, got {N}")
    if not L > 0:
        raise InvalidInput("half extent must be positive")
    spec = _as_mask(mask_spec)
    if spec.r_out > L * (1 + 1e-12):
        raise InvalidInput(f"mask radius {spec.r_out} exceeds the grid half extent {L}")
    h = 2 * L / (N - 1)
    if spec.kind == "annulus" and 2 * spec.r_in / h < 8:
        raise InvalidInput(f"inner hole radius {spec.r_in} resolved by fewer than 4 cells at N={N}")
    return GridDomain(dim, float(L), int(N), spec)


@dataclass(eq=False)
class ScalarField:
    grid: GridDomain
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InvalidInput(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput("field values must be finite")

    def with_values(self, values, label=None):
        return ScalarField(self.grid, values, self.label if label is None else label)

    def scaled(self, k):
        return self.with_values(k * self.values)


def field_from_function(grid, fn, label=""):
    return ScalarField(grid, np.asarray(fn(grid.x), dtype=float), label)


# ---------------------------------------------------------------------------
# operators


def _kron_along(ops, dim, N):
    """Kronecker product with ``ops[a]`` acting on axis a (identity if missing)."""
    out = None
    for a in range(dim):
        m = ops.get(a, sps.identity(N, format="csr"))
        out = m if out is None else sps.kron(out, m, format="csr")
    return out


def _staggered_points(grid, axes):
    mid = 0.5 * (grid.axis[:-1] + grid.axis[1:])
    coords = [mid if a in axes else grid.axis for a in range(grid.dim)]
    return np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)


@functools.lru_cache(maxsize=16)
def laplacian_matrix(metric, grid):
    """Sparse symmetric matrix of ``Delta_g`` in face-flux form.

    Diagonal metric entries act on face fluxes ``g^{ii}(face) (u_{+} - u)/h``;
    off-diagonal entries act on edge-centred gradients.  Every contribution
    has the form ``-B^T diag(k) B`` (or its symmetrised cross version), so the
    matrix is exactly symmetric.
    """
    n, N, h = grid.dim, grid.points_per_axis, grid.h
    ones = np.ones(N - 1)
    D = sps.diags([-ones, ones], [0, 1], shape=(N - 1, N), format="csr") / h
    A = sps.diags([0.5 * ones, 0.5 * ones], [0, 1], shape=(N - 1, N), format="csr")
    L = sps.csr_matrix((grid.size, grid.size))
    for i in range(n):
        _, g_inv, _ = metric_eval(metric, _staggered_points(grid, {i}))
        B = _kron_along({i: D}, n, N)
        L = L - B.T @ sps.diags(g_inv[..., i, i].ravel()) @ B
    for i, j in itertools.combinations(range(n), 2):
        _, g_inv, _ = metric_eval(metric, _staggered_points(grid, {i, j}))
        k = g_inv[..., i, j].ravel()
        if not np.any(k):
            continue
        Ci = _kron_along({i: D, j: A}, n, N)
        Cj = _kron_along({i: A, j: D}, n, N)
        K = sps.diags(k)
        L = L - Ci.T @ K @ Cj - Cj.T @ K @ Ci
    return L.tocsr()


def laplace_beltrami(metric, u):
    """Discrete ``Delta_g u`` on the whole grid (zero extension outside)."""
    L = laplacian_matrix(metric, u.grid)
    return u.with_values((L @ u.values.ravel()).reshape(u.grid.shape))


def euclid_gradient(u):
    """Centred-difference gradient, shape ``grid.shape + (n,)``."""
    grads = np.gradient(u.values, u.grid.h, edge_order=2)
    if u.grid.dim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)


@functools.lru_cache(maxsize=16)
def _node_metric(metric, grid):
    g, g_inv, dg = metric_eval(metric, grid.x)
    return g, g_inv


def node_metric(metric, grid):
    """``(g, g_inv)`` at every grid node (cached)."""
    return _node_metric(metric, grid)


def gradient_g(metric, u):
    """``g^{-1} grad u`` at nodes with centred differences."""
    _, g_inv = node_metric(metric, u.grid)
    return np.einsum("...ij,...j->...i", g_inv, euclid_gradient(u))


def grad_norm2_g(metric, u):
    """``|grad_g u|_g^2 = g^{ij} d_i u d_j u`` at nodes."""
    _, g_inv = node_metric(metric, u.grid)
    du = euclid_gradient(u)
    return np.einsum("...ij,...i,...j->...", g_inv, du, du)


def integrate(field, weight=None, region=None, grid=None):
    """Quadrature ``sum values * w_h`` (times an optional pointwise weight).

    ``region=(r_in, r_out)`` integrates over that annulus instead of the mask.
    """
    if isinstance(field, ScalarField):
        grid, values = field.grid, field.values
    else:
        if grid is None:
            raise InvalidInput("integrating a raw array needs grid=")
        values = np.asarray(field, dtype=float)
    w = grid.weights if region is None else grid.region_weights(*region)
    if weight is not None:
        w = w * weight
    return float(np.sum(values * w))


def inner(u, w):
    """Unmasked discrete inner product ``h^n sum u w``."""
    return float(np.sum(u.values * w.values)) * u.grid.h**u.grid.dim


# ---------------------------------------------------------------------------
# cutoff


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s * s)


def _smoothstep_d(s, k):
    inside = (s > 0) & (s < 1)
    s = np.clip(s, 0.0, 1.0)
    if k == 0:
        return _smoothstep(s)
    if k == 1:
        return np.where(inside, 30 * s**2 * (1 - s) ** 2, 0.0)
    if k == 2:
        return np.where(inside, 60 * s * (1 - s) * (1 - 2 * s), 0.0)
    raise InvalidInput("only derivatives up to order 2")


@dataclass
class CutoffFunction:
    """Radial C^2 cutoff: 0 below r0/4, 1 on [r0/2, 1/2], 0 beyond 2/3."""

    r0: float
    c_emp: float = field(init=False)
    deriv_bounds: dict = field(init=False)

    def __post_init__(self):
        t_in = np.linspace(self.r0 / 4, self.r0 / 2, 2001)
        t_out = np.linspace(0.5, 2 / 3, 2001)
        bounds = {}
        for k in range(3):
            bounds[("inner", k)] = float(np.max(np.abs(self.derivative(t_in, k)))) * self.r0**k
            bounds[("outer", k)] = float(np.max(np.abs(self.derivative(t_out, k))))
        self.deriv_bounds = {f"{where}_{k}": v for (where, k), v in bounds.items()}
        self.c_emp = max(bounds.values())

    def derivative(self, t, k=0):
        t = np.asarray(t, dtype=float)
        a, b = self.r0 / 4, self.r0 / 2
        w_in = b - a
        w_out = 2 / 3 - 0.5
        rise = _smoothstep_d((t - a) / w_in, k) / w_in**k
        fall = _smoothstep_d((2 / 3 - t) / w_out, k) * (-1.0 / w_out) ** k
        if k == 0:
            return np.where(t <= b, rise, np.where(t <= 0.5, 1.0, fall))
        return np.where(t <= b, rise, np.where(t <= 0.5, 0.0, fall))

    def __call__(self, t):
        return self.derivative(t, 0)


def make_cutoff(r0):
    if not 0 < r0 < 0.5:
        raise InvalidInput("cutoff needs 0 < r0 < 1/2")
    return CutoffFunction(float(r0))


def apply_cutoff(eta, u):
    return u.with_values(eta(u.grid.r) * u.values)


# ---------------------------------------------------------------------------
# test functions


def _bump_profile(s):
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _check_support(grid, center, radius):
    c = np.asarray(center, dtype=float)
    if c.shape != (grid.dim,):
        raise InvalidInput(f"center must have {grid.dim} coordinates")
    if not radius > 0:
        raise InvalidInput("bump radius must be positive")
    collar = COLLAR_CELLS * grid.h
    spec = grid.mask_spec
    rc = float(np.linalg.norm(c))
    ok = rc + radius <= spec.r_out - collar and np.all(np.abs(c) + radius <= grid.half_extent - collar)
    if spec.kind == "annulus":
        ok = ok and rc - radius >= spec.r_in + collar
    if not ok:
        raise InvalidInput(f"bump support B({c.tolist()}, {radius}) is not inside the mask with a {COLLAR_CELLS}-cell collar")
    return c


def make_bump(grid, center, radius, seed=None, n_components=5):
    """Compactly supported smooth bump; with ``seed`` a random superposition.

    The random version sums ``n_components`` bumps with coefficients in
    [-1, 1], each contained in ``B(center, radius)``.
    """
    c = _check_support(grid, center, radius)
    if seed is None:
        s = np.linalg.norm(grid.x - c, axis=-1) / radius
        return ScalarField(grid, _bump_profile(s), label=f"bump{tuple(np.round(c, 6).tolist())}r{radius:g}")
    rng = np.random.default_rng(seed)
    total = np.zeros(grid.shape)
    for _ in range(n_components):
        r_i = radius * rng.uniform(0.3, 0.6)
        d = rng.standard_normal(grid.dim)
        d /= np.linalg.norm(d)
        c_i = c + d * rng.uniform(0, radius - r_i)
        total += rng.uniform(-1, 1) * _bump_profile(np.linalg.norm(grid.x - c_i, axis=-1) / r_i)
    return ScalarField(grid, total, label=f"random{seed}")


# ---------------------------------------------------------------------------
# export

_MAGIC = b"CVFD"
_FORMAT_VERSION = 1


def write_field_csv(u, path):
    """CSV with columns x1..xn,value, one row per grid node (C order)."""
    pts = u.grid.x.reshape(-1, u.grid.dim)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(u.grid.dim)] + ["value"])
        for p, v in zip(pts, u.values.ravel()):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def write_field_binary(u, path):
    """Binary record: magic, version, dim, N per axis, (lo, hi) per axis, values.

    All integers are little-endian uint32, all floats little-endian float64,
    values row-major (C order).
    """
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, g.dim))
        fh.write(struct.pack(f"<{g.dim}I", *g.shape))
        for _ in range(g.dim):
            fh.write(struct.pack("<dd", -g.half_extent, g.half_extent))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_field_binary(path):
    """Return ``(shape, extents, values)`` from a binary field record."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise InvalidInput(f"{path}: not a field record")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != _FORMAT_VERSION:
        raise InvalidInput(f"{path}: unsupported field record version {version}")
    off = 12
    shape = struct.unpack_from(f"<{dim}I", data, off)
    off += 4 * dim
    extents = [struct.unpack_from("<dd", data, off + 16 * k) for k in range(dim)]
    off += 16 * dim
    values = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape)
    return tuple(shape), extents, values.copy()
