"""Transition densities of degenerate Kolmogorov diffusions.

The pair (x, y) follows dX = b dt + sigma dW, dY = X dt: only x is noisy and
y integrates it.  This package evaluates the transition density through a
Gaussian-proxy correction series, simulates the pair as an independent Monte
Carlo oracle, and measures how coefficient perturbations move the density
relative to the explicit two-sided comparison Gaussian.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    ConfigError,
    EvaluationError,
    KolmodensError,
    QuadratureError,
)
from .fields import PERTURBATION_FAMILIES, build_field, make_perturbation
from .model import (
    AssumptionReport,
    CoefficientField,
    NormSampling,
    PerturbationNorms,
    PerturbationPair,
    PhasePoint,
    diffusion_matrix,
    holder_seminorm_estimate,
    lq_norm_estimate,
    perturbation_norms,
    verify_assumptions,
)
from .parametrix import (
    ConvolutionScheme,
    ConvolveResult,
    SeriesResult,
    beta_function,
    kernel_H,
    lemma1_bound,
    lemma1_bound_product,
    lemma4_difference_bound,
    parametrix_series,
    parametrix_series_batch,
    time_space_convolve,
)
from .proxy import (
    FrozenCovariance,
    ProxyParams,
    ResolventMatrix,
    frozen_covariance,
    frozen_density,
    frozen_density_derivative,
    kolmogorov_proxy_density,
    resolvent,
)
from .simulate import (
    DensityGrid,
    GridSpec,
    PathGrid,
    mc_density,
    simulate_path,
    simulate_terminal,
    simulate_terminal_pair,
)
from .stability import (
    CrossValidation,
    DifferenceGrid,
    MCConfig,
    StabilityReport,
    calibrate_proxy_constants,
    cross_validate,
    density_difference,
    stability_ratio,
    stability_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
