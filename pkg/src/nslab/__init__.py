"""Numerical lab for Gaussian noise stability of partitions and biased plurality."""

from .gaussian import (
    CorrelatedGaussianModel,
    DomainError,
    QuadratureRule,
    RngStream,
    bivariate_normal_cdf,
    gauss_hermite_rule,
    sample_correlated_pair,
    std_normal_cdf,
    std_normal_pdf,
    truncated_trapezoid_rule,
)
from .ou import (
    AccuracyError,
    ConeCell2D,
    LineRestriction,
    complex_line_eval,
    cone_cell,
    limit_at_infinity,
    line_difference,
    line_restriction,
    t_rho_cone2d,
    t_rho_halfspace,
)
from .partition import (
    BumpPatch,
    FlatPartition,
    PerturbedPartition,
    SlabPartition,
    StandardSimplexSpec,
    classify,
    estimate_volumes,
    exact_volumes,
    facet_adjacent,
    make_standard_simplex,
    partition_from_json,
    shifted_simplex,
)
from .perturbation import build_perturbation, find_improving_facet, improve
from .stability import (
    StabilityEstimate,
    compare_mc,
    first_variation,
    stability_bilinear,
    stability_mc,
    stability_quadrature,
)
from .voting import (
    BiasedMeasure,
    CorrelatedPairLaw,
    StatisticEmbedding,
    VotingFunction,
    build_competitor,
    discrete_stability,
    influence,
    plurality,
    rectangle_approximate,
    sample_pair,
)

__version__ = "0.1.0"
