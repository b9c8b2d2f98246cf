"""Numerical verification toolkit for Carleman estimates of divergence-form elliptic operators."""

from .carleman import (
    ConjugatedApplication,
    TauSweepReport,
    carleman_ratio,
    conjugate,
    default_test_functions,
    rellich_residual,
    rellich_study,
    tau_sweep,
)
from .discretization import (
    GridDomain,
    MaskSpec,
    ScalarField,
    inner,
    integrate,
    laplace_beltrami,
    make_bump,
    make_cutoff,
    make_grid,
)
from .errors import (
    CarlemanError,
    DegenerateMetric,
    DegenerateSolution,
    InvalidInput,
    NonConvergence,
    PlateauNotFound,
    SearchExhausted,
    WeightOverflow,
    ZeroGradient,
)
from .fields import (
    MetricField,
    ScalarFunction,
    WeightFunction,
    WeightRecipe,
    annulus_samples,
    exp_weight,
    identity_metric,
    metric_from_name,
    neg_abs2,
    scalar_from_name,
    sin_perturbed_metric,
    validate_bounds,
)
from .pseudoconvexity import (
    PseudoconvexityCertificate,
    Q_form,
    certify,
    characteristic_cross_check,
    mu_search,
    q_form,
)
from .solver import CoefficientField, assemble, manufactured_check, solve, solve_dirichlet
from .three_sphere import (
    ThreeSphereReport,
    ball_grid,
    ball_norm,
    certified_mu0,
    harmonic_family_experiment,
    perturbed_experiment,
    tau_tilde,
    theta,
    three_sphere_check,
)

__version__ = "0.1.0"
