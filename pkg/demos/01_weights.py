"""Certify exponential weights and find the smallest admissible exponent.

For g = I and psi = -|x|^2 the certificate constant on an annulus a <= |x| <= 1
is min_r 8 mu (mu r^2 - 1) exp(-mu r^2), so exp(mu psi) is admissible exactly
when mu > 1/a^2.  The search recovers that threshold numerically, and a
perturbed metric shifts it.
"""

import math

from carleman_verify import (
    WeightRecipe,
    annulus_samples,
    certify,
    characteristic_cross_check,
    exp_weight,
    identity_metric,
    mu_search,
    neg_abs2,
    sin_perturbed_metric,
)

samples = annulus_samples(2, 0.5, 1.0)
eye = identity_metric(2)

for mu in (2.0, 4.0, 8.0):
    cert = certify(eye, exp_weight(WeightRecipe(neg_abs2(2), mu)), samples)
    print(f"mu={mu:4g}  c0={cert.c0:+.6f}  passed={cert.passed}  worst |x|={math.hypot(*cert.argmin_point):.3f}")

print("closed form at mu=8:", 64 * 7 * math.exp(-8))

# the certificate is checked independently on random characteristic points
phi = exp_weight(WeightRecipe(neg_abs2(2), 8.0))
cc = characteristic_cross_check(eye, phi, certify(eye, phi, samples), samples, n_random=10_000, seed=1)
print(f"cross-check: {cc.n_violations} violations in {cc.n_draws} draws")

for a in (0.5, 0.25, 0.125):
    mu, _ = mu_search(eye, neg_abs2(2), annulus_samples(2, a, 1.0), 4096)
    print(f"inner radius {a:<6g} mu_min={mu:.6f}  (1/a^2 = {1 / a**2:g})")

mu, _ = mu_search(sin_perturbed_metric(0.2), neg_abs2(2), samples, 4096)
print(f"sin-perturbed metric, eps=0.2: mu_min={mu:.4f}")
