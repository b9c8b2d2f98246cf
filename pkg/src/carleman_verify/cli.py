"""Command-line front end: ``carleman-verify <command> [--config PATH] [flags]``.

Exit codes: 0 pass, 2 certification or inequality failure, 1 error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import carleman, three_sphere
from .config import COMMANDS, SCHEMA, parse_config
from .discretization import MaskSpec, make_grid, write_field_binary
from .errors import CarlemanError, PlateauNotFound, SearchExhausted
from .fields import (
    WeightRecipe,
    annulus_samples,
    exp_weight,
    metric_from_name,
    neighbour_pairs,
    scalar_from_name,
    validate_bounds,
)
from .pseudoconvexity import certify, characteristic_cross_check, mu_search
from .solver import coefficients_from_expressions, manufactured_check

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
REPORT_VERSION = "report/1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def content_hash(obj):
    """Git-style object hash (``blob <len>\\0<bytes>``, sha256) of canonical JSON."""
    data = canonical_json(obj).encode()
    return hashlib.sha256(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class ReportBundle:
    command: str
    config: dict
    input_hash: str
    payload: dict
    passed: bool
    timing: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # file name -> text
    fields: dict = field(default_factory=dict)  # file name -> ScalarField

    @property
    def payload_hash(self):
        return content_hash(self.payload)

    @property
    def exit_code(self):
        return EXIT_PASS if self.passed else EXIT_FAIL

    def to_dict(self):
        return {
            "version": REPORT_VERSION,
            "command": self.command,
            "status": "pass" if self.passed else "fail",
            "config": self.config,
            "input_hash": self.input_hash,
            "payload_hash": self.payload_hash,
            "payload": _jsonable(self.payload),
            "timing": self.timing,
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        for name, text in self.artifacts.items():
            with open(os.path.join(out_dir, name), "w") as fh:
                fh.write(text)
        for name, u in self.fields.items():
            write_field_binary(u, os.path.join(out_dir, name))


# ---------------------------------------------------------------------------
# commands; each returns (payload, passed, artifacts)


def _metric(cfg):
    return metric_from_name(cfg.metric, cfg.dim)


def _weight(cfg, mu=None):
    return exp_weight(WeightRecipe(scalar_from_name(cfg.psi, cfg.dim), cfg.mu if mu is None else mu))


def _samples(cfg):
    return annulus_samples(cfg.dim, cfg.r_in, cfg.r_out, cfg.n_radial, cfg.n_angular)


def cmd_validate(cfg):
    samples = _samples(cfg)
    pairs = neighbour_pairs(samples, np.random.default_rng(cfg.seed), max_dist=4 * (cfg.r_out - cfg.r_in) / cfg.n_radial)
    rep = validate_bounds(_metric(cfg), samples, pairs, _weight(cfg))
    return rep.to_dict(), all(rep.passed.values()), {}


def cmd_certify(cfg):
    metric, phi = _metric(cfg), _weight(cfg)
    samples = _samples(cfg)
    cert = certify(metric, phi, samples, cfg.margin)
    payload = {"certificate": cert.to_dict()}
    if cert.passed and cert.c0 > 0:
        cc = characteristic_cross_check(metric, phi, cert, samples, cfg.n_cross, cfg.seed)
        payload["cross_check"] = cc.to_dict()
        return payload, cc.n_violations == 0, {}
    return payload, cert.passed, {}


def cmd_mu_search(cfg):
    metric = _metric(cfg)
    try:
        mu, cert = mu_search(metric, scalar_from_name(cfg.psi, cfg.dim), _samples(cfg), cfg.mu_max, margin=cfg.margin)
    except SearchExhausted as exc:
        return {"mu_min": None, "trace": exc.trace, "diagnostic": str(exc)}, False, {}
    return {"mu_min": mu, "certificate": cert.to_dict()}, True, {}


def cmd_rellich(cfg):
    table = carleman.rellich_study(_metric(cfg), cfg.rellich_field, cfg.grids, L=cfg.half_extent)
    payload = {
        "field": table.field,
        "rows": [r.__dict__ for r in table.rows],
        "factors": table.factors(),
        "at_roundoff_floor": table.at_floor(),
    }
    return payload, table.decays(), {"rellich.csv": table.to_csv()}


def cmd_carleman_sweep(cfg):
    metric, phi = _metric(cfg), _weight(cfg)
    cert = certify(metric, phi, _samples(cfg), cfg.margin)
    payload = {"certificate": cert.to_dict()}
    if not cert.passed:
        payload["diagnostic"] = "weight not certified; sweep skipped"
        return payload, False, {}
    grid = make_grid(cfg.dim, cfg.half_extent, cfg.grid_n, MaskSpec.annulus(cfg.r_in, cfg.r_out))
    fns = carleman.default_test_functions(grid, cfg.r_in, cfg.r_out, cfg.seed, cfg.n_fixed, cfg.n_random)
    try:
        rep = carleman.tau_sweep(metric, phi, fns, cfg.tau_min, cfg.tau_max, cfg.n_tau, cert, cfg.threads)
    except PlateauNotFound as exc:
        payload["diagnostic"] = str(exc)
        payload["max_ratios"] = exc.max_ratios
        return payload, False, {}
    payload["sweep"] = rep.summary()
    payload["window_max"] = rep.window_max(rep.tau0_emp, 4 * rep.tau0_emp)
    return payload, math.isfinite(rep.K_emp), {"sweep.csv": rep.to_csv()}


def cmd_solve(cfg):
    metric = _metric(cfg)
    coeffs = coefficients_from_expressions(cfg.coeff_b, cfg.coeff_a, cfg.dim)
    table = manufactured_check(metric, coeffs, cfg.exact, cfg.grids, cfg.half_extent, cfg.tol, keep_solutions=True)
    orders = table.orders
    payload = {"exact": table.exact, "rows": [r.__dict__ for r in table.rows], "orders": orders,
               "M1": coeffs.M1_bound}
    fields = {f"solution_N{r.N}.bin": u for r, u in zip(table.rows, table.solutions)}
    passed = all(o >= cfg.min_order for o in orders)
    return payload, passed, {"convergence.csv": table.to_csv()}, fields


def _mu0(cfg, metric):
    if cfg.mu0 == "certified":
        mu0, cert = three_sphere.certified_mu0(cfg.r0, metric)
        return mu0, cert.to_dict()
    return float(cfg.mu0), None


def cmd_three_sphere(cfg):
    metric = metric_from_name(cfg.metric, 2)
    mu0, cert = _mu0(cfg, metric)
    grid = three_sphere.ball_grid(cfg.grid_n)
    harm = three_sphere.harmonic_family_experiment(cfg.k_max, cfg.r0, cfg.rho, mu0, grid, "solve", cfg.threads, cfg.tol)
    C = [r.C_emp_numeric for r in harm.rows]
    decreasing = all(a > b for a, b in zip(C, C[1:]))
    payload = {"mu0": mu0, "certificate": cert, "theta": harm.rows[0].theta,
               "harmonic": [r.__dict__ for r in harm.rows], "harmonic_decreasing": decreasing}
    artifacts = {"harmonic.csv": harm.to_csv()}
    passed = decreasing
    if cfg.n_perturbed:
        pert = three_sphere.perturbed_experiment(range(cfg.seed, cfg.seed + cfg.n_perturbed), cfg.r0, cfg.rho, mu0,
                                                 grid, cfg.M1, cfg.threads, cfg.tol)
        ratio = pert.C_max / harm.C_max
        payload["perturbed"] = [r.__dict__ for r in pert.rows]
        payload["perturbed_over_harmonic"] = ratio
        artifacts["perturbed.csv"] = pert.to_csv()
        passed = passed and all(math.isfinite(r.C_emp) for r in pert.rows) and ratio <= cfg.perturbed_factor
    return payload, passed, artifacts


def cmd_suite(cfg):
    steps, artifacts, passed = [], {}, True
    for name in ("certify", "carleman-sweep", "three-sphere"):
        payload, ok, arts, *_ = COMMAND_TABLE[name](cfg)
        steps.append({"command": name, "status": "pass" if ok else "fail", "payload": payload})
        artifacts.update(arts)
        if not ok:
            passed = False
            break
    return {"steps": steps}, passed, artifacts


COMMAND_TABLE = {
    "validate": cmd_validate,
    "certify": cmd_certify,
    "mu-search": cmd_mu_search,
    "rellich": cmd_rellich,
    "carleman-sweep": cmd_carleman_sweep,
    "solve": cmd_solve,
    "three-sphere": cmd_three_sphere,
    "suite": cmd_suite,
}


def run(cfg):
    """Execute ``cfg.command`` and wrap the result in a ReportBundle."""
    t0 = time.perf_counter()
    result = COMMAND_TABLE[cfg.command](cfg)
    payload, passed, artifacts = result[:3]
    fields = result[3] if len(result) > 3 else {}
    echo = cfg.echo()
    hashed_config = {k: v for k, v in echo.items() if k not in ("out", "threads")}
    return ReportBundle(cfg.command, echo, content_hash(hashed_config), payload, bool(passed),
                        {"seconds": time.perf_counter() - t0}, artifacts, fields)


def build_parser():
    ap = argparse.ArgumentParser(prog="carleman-verify", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH", help="flat TOML config file")
    ap.add_argument("--out", metavar="DIR", help="output directory (default: out)")
    ap.add_argument("--seed", metavar="U64", help="global seed")
    ap.add_argument("--threads", metavar="K", help="worker cap")
    ap.add_argument("--grid-n", metavar="N", help="grid points per axis")
    ap.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                    help="override any config key (repeatable); VALUE is parsed as TOML")
    ap.add_argument("--dump-fields", action="store_true", help="write solution fields as binary records")
    ap.add_argument("--quiet", action="store_true")
    return ap


def _flag_value(text):
    from .config import tomllib

    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"command": args.command}
    for key, val in (("out", args.out), ("seed", args.seed), ("threads", args.threads), ("grid_n", args.grid_n)):
        if val is not None:
            overrides[key] = _flag_value(val) if key != "out" else val
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_ERROR
        overrides[key.strip().replace("-", "_")] = _flag_value(val.strip())
    try:
        cfg = parse_config(args.config, overrides)
        bundle = run(cfg)
        if not args.dump_fields:
            bundle.fields = {}
        bundle.write(cfg.out)
    except (CarlemanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not args.quiet:
        print(f"{cfg.command}: {'pass' if bundle.passed else 'FAIL'} "
              f"(payload {bundle.payload_hash[:12]}, report {os.path.join(cfg.out, 'report.json')})")
    return bundle.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
