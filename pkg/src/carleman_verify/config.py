"""Run configuration: flat TOML key/value files plus command-line overrides."""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import InvalidInput

COMMANDS = ("validate", "certify", "mu-search", "rellich", "carleman-sweep", "solve", "three-sphere", "suite")


def _num(lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidInput(f"{key}: expected a number, got {v!r}")
        if integer and int(v) != v:
            raise InvalidInput(f"{key}: expected an integer, got {v!r}")
        bad_lo = v <= lo if lo_open else v < lo
        bad_hi = v >= hi if hi_open else v > hi
        if bad_lo or bad_hi or not math.isfinite(v):
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise InvalidInput(f"{key}: {v!r} outside {lb}{lo:g}, {hi:g}{rb}")
        return int(v) if integer else float(v)

    return check


def _text(key, v):
    if not isinstance(v, str) or not v.strip():
        raise InvalidInput(f"{key}: expected a nonempty string")
    return v


def _int_list(key, v):
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    if not isinstance(v, (list, tuple)) or not v:
        raise InvalidInput(f"{key}: expected a list of integers")
    out = []
    for item in v:
        try:
            n = int(item)
        except (TypeError, ValueError):
            raise InvalidInput(f"{key}: {item!r} is not an integer") from None
        if n < 16:
            raise InvalidInput(f"{key}: grid sizes must be >= 16")
        out.append(n)
    return out


def _mu0(key, v):
    if v == "certified":
        return v
    return _num(0, lo_open=True)(key, v)


def _command(key, v):
    if v not in COMMANDS:
        raise InvalidInput(f"{key}: unknown command {v!r}; choose from {', '.join(COMMANDS)}")
    return v


# key -> (default, validator, description)
SCHEMA = {
    "command": ("suite", _command, "what to run"),
    "dim": (2, _num(2, 3, integer=True), "space dimension"),
    "metric": ("identity", _text, "identity | diag:a,b | sin-perturbed:eps | matrix:r1;r2"),
    "psi": ("psi-neg-abs2", _text, "psi-neg-abs2 | psi-linear:d | expr:<expression>"),
    "mu": (8.0, _num(0, lo_open=True), "exponent of phi = exp(mu psi)"),
    "mu_max": (4096.0, _num(0, lo_open=True), "upper end of the mu search"),
    "margin": (0.0, _num(0), "certificate margin on c0"),
    "r_in": (0.5, _num(0, lo_open=True), "inner radius of the certification annulus"),
    "r_out": (1.0, _num(0, lo_open=True), "outer radius of the certification annulus"),
    "n_radial": (41, _num(2, 4096, integer=True), "radial samples"),
    "n_angular": (64, _num(4, 4096, integer=True), "angular samples"),
    "n_cross": (10_000, _num(1, 10**7, integer=True), "characteristic cross-check draws"),
    "grid_n": (129, _num(16, 1025, integer=True), "grid points per axis"),
    "half_extent": (1.0, _num(0, lo_open=True), "grid covers [-L, L]^n"),
    "grids": ([65, 129, 257], _int_list, "refinement sequence"),
    "tau_min": (0.25, _num(0, lo_open=True), "smallest sweep tau"),
    "tau_max": (1024.0, _num(0, lo_open=True), "largest sweep tau"),
    "n_tau": (25, _num(1, 1000, integer=True), "geometric tau grid size"),
    "n_fixed": (5, _num(0, 100, integer=True), "deterministic bumps"),
    "n_random": (15, _num(0, 1000, integer=True), "seeded random bumps"),
    "rellich_field": ("x", _text, "x | const:b1,b2"),
    "exact": ("sin(x1)*sin(x2)", _text, "manufactured solution"),
    "coeff_b": ("0", _text, "comma separated expressions for b"),
    "coeff_a": ("0", _text, "expression for a"),
    "min_order": (1.8, _num(0), "required observed order"),
    "tol": (1e-10, _num(0, 1e-2, lo_open=True), "Krylov relative residual"),
    "r0": (0.25, _num(0, 1, lo_open=True, hi_open=True), "inner ball radius"),
    "rho": (0.4, _num(0, 1, lo_open=True, hi_open=True), "middle ball radius"),
    "mu0": ("certified", _mu0, "'certified' or a positive number"),
    "k_max": (6, _num(1, 10, integer=True), "largest harmonic degree"),
    "n_perturbed": (20, _num(0, 1000, integer=True), "perturbed-equation runs"),
    "M1": (1.0, _num(0), "coefficient bound"),
    "perturbed_factor": (10.0, _num(1), "allowed C_emp ratio over the harmonic family"),
    "seed": (0, _num(0, 2**64 - 1, integer=True), "global seed"),
    "threads": (1, _num(1, 256, integer=True), "worker cap"),
    "out": ("out", _text, "output directory"),
}


def suggest(key):
    """Known keys close to an unknown one."""
    stem = key.rstrip("s").rstrip("_")
    family = [k for k in SCHEMA if k.startswith(stem + "_")]
    if family:
        return family
    return difflib.get_close_matches(key, list(SCHEMA), n=3)


@dataclass
class RunConfig:
    values: dict
    sources: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self):
        return dict(sorted(self.values.items()))


def _unknown(key, where):
    hint = suggest(key)
    msg = f"{where}unknown key {key!r}"
    if hint:
        msg += f"; did you mean {'/'.join(hint)}?"
    raise InvalidInput(msg)


def read_config_text(text, origin="<config>"):
    """Parse flat TOML, returning ``{key: (value, line)}``."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidInput(f"{origin}: {exc}") from None
    lines = {}
    for i, line in enumerate(text.splitlines(), 1):
        head = line.split("=", 1)[0].strip()
        if head and not head.startswith("#") and head not in lines:
            lines[head] = i
    out = {}
    for k, v in data.items():
        where = f"{origin}:{lines.get(k, '?')}: "
        if isinstance(v, dict):
            raise InvalidInput(f"{where}tables are not supported (key {k!r}); use flat keys")
        out[k] = (v, where)
    return out


def parse_config(path=None, overrides=None, text=None):
    """Defaults, then the file, then overrides (flags win); validated and cross-checked."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise InvalidInput(f"cannot read config {path}: {exc}") from None
    if text is not None:
        raw.update(read_config_text(text, str(path or "<config>")))
    for k, v in (overrides or {}).items():
        raw[k] = (v, f"--{k.replace('_', '-')}: ")
    values, sources = {}, {}
    for k, (v, where) in raw.items():
        if k not in SCHEMA:
            _unknown(k, where)
        try:
            values[k] = SCHEMA[k][1](k, v)
        except InvalidInput as exc:
            raise InvalidInput(f"{where}{exc}") from None
        sources[k] = where.rstrip(": ")
    for k, (default, _, _) in SCHEMA.items():
        values.setdefault(k, list(default) if isinstance(default, list) else default)
    _cross_check(values, sources)
    return RunConfig(values, sources)


def _cross_check(v, sources):
    def fail(keys, msg):
        where = ", ".join(sources.get(k, f"default {k}") for k in keys)
        raise InvalidInput(f"{where}: {msg}")

    if not v["r_in"] < v["r_out"]:
        fail(["r_in", "r_out"], "need r_in < r_out")
    if v["r_out"] > v["half_extent"]:
        fail(["r_out", "half_extent"], "annulus must fit inside the grid")
    if not v["tau_min"] <= v["tau_max"]:
        fail(["tau_min", "tau_max"], "need tau_min <= tau_max")
    if not (v["r0"] / 2 < v["rho"] < 0.5 and v["r0"] < v["rho"]):
        fail(["rho", "r0"], f"rho={v['rho']} outside the admissible range ({v['r0']}, 1/2)")
    if v["n_fixed"] + v["n_random"] == 0:
        fail(["n_fixed", "n_random"], "the sweep needs at least one test function")
