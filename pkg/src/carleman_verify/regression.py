"""Pinned regression baselines stored as float hex strings.

The baseline file is generated once (``python -m carleman_verify.regression
--write``) and checked in; later runs must reproduce it bit for bit.
"""

from __future__ import annotations

import argparse
import json
from importlib import resources

from .carleman import default_test_functions, tau_sweep
from .discretization import MaskSpec, make_grid
from .fields import WeightRecipe, exp_weight, identity_metric, neg_abs2
from .three_sphere import ball_grid, certified_mu0, harmonic_family_experiment, perturbed_experiment

BASELINE_VERSION = "regression/1"
BASELINE_NAME = "regression_v1.json"

SWEEP_CONFIG = dict(dim=2, mu=8.0, r_in=0.5, r_out=1.0, grid_n=257, tau_min=0.25, tau_max=1024.0, n_tau=25, seed=0)
PERTURBED_CONFIG = dict(r0=0.25, rho=0.4, grid_n=129, seeds=list(range(20)), M1=1.0, k_max=6)


def hexes(values):
    return [float(v).hex() for v in values]


def canonical_sweep(threads=1):
    c = SWEEP_CONFIG
    metric = identity_metric(c["dim"])
    phi = exp_weight(WeightRecipe(neg_abs2(c["dim"]), c["mu"]))
    grid = make_grid(c["dim"], 1.0, c["grid_n"], MaskSpec.annulus(c["r_in"], c["r_out"]))
    fns = default_test_functions(grid, c["r_in"], c["r_out"], seed=c["seed"])
    return tau_sweep(metric, phi, fns, c["tau_min"], c["tau_max"], c["n_tau"], threads=threads)


def canonical_three_sphere(threads=1):
    c = PERTURBED_CONFIG
    mu0, _ = certified_mu0(c["r0"])
    grid = ball_grid(c["grid_n"])
    harmonic = harmonic_family_experiment(c["k_max"], c["r0"], c["rho"], mu0, grid, source="solve", threads=threads)
    perturbed = perturbed_experiment(c["seeds"], c["r0"], c["rho"], mu0, grid, c["M1"], threads=threads)
    return mu0, harmonic, perturbed


def sweep_record(report):
    return {
        "config": SWEEP_CONFIG,
        "tau_grid": hexes(report.tau_grid),
        "function_ids": list(report.test_function_ids),
        "ratios": [hexes(row) for row in report.ratios],
        "K_emp": float(report.K_emp).hex(),
        "tau0_emp": float(report.tau0_emp).hex(),
    }


def three_sphere_record(mu0, harmonic, perturbed):
    return {
        "config": PERTURBED_CONFIG,
        "mu0": float(mu0).hex(),
        "harmonic_C_emp": hexes(r.C_emp_numeric for r in harmonic.rows),
        "perturbed_C_emp": hexes(r.C_emp for r in perturbed.rows),
    }


def build_baseline(threads=1):
    return {
        "version": BASELINE_VERSION,
        "sweep": sweep_record(canonical_sweep(threads)),
        "three_sphere": three_sphere_record(*canonical_three_sphere(threads)),
    }


def load_baseline():
    text = resources.files("carleman_verify").joinpath("baselines").joinpath(BASELINE_NAME).read_text()
    data = json.loads(text)
    if data.get("version") != BASELINE_VERSION:
        raise ValueError(f"baseline version {data.get('version')!r} != {BASELINE_VERSION}")
    return data


def diff_records(expected, actual, path=""):
    """Paths at which two records differ (exact comparison)."""
    if isinstance(expected, dict) and isinstance(actual, dict):
        out = []
        for k in sorted(set(expected) | set(actual)):
            out += diff_records(expected.get(k), actual.get(k), f"{path}/{k}")
        return out
    if isinstance(expected, list) and isinstance(actual, list) and len(expected) == len(actual):
        out = []
        for i, (a, b) in enumerate(zip(expected, actual)):
            out += diff_records(a, b, f"{path}[{i}]")
        return out
    return [] if expected == actual else [path or "/"]


def main(argv=None):
    ap = argparse.ArgumentParser(description="Generate or check the pinned regression baseline.")
    ap.add_argument("--write", metavar="PATH", help="write a fresh baseline to PATH")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    data = build_baseline(args.threads)
    if args.write:
        with open(args.write, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return 0
    diffs = diff_records(load_baseline(), json.loads(json.dumps(data)))
    print("baseline reproduced" if not diffs else f"{len(diffs)} differences, first: {diffs[:5]}")
    return 0 if not diffs else 2


if __name__ == "__main__":
    raise SystemExit(main())
