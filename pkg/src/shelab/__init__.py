"""Numerical laboratory for the stochastic heat equation on the unit torus.

Simulates  du = (1/2) u_xx dt + sigma(t, x, u) dW  with space-time white
noise and periodic boundary, evaluates Holder semi-norms and every
heat-kernel quantity by deterministic quadrature, and estimates small-ball
probabilities with plain Monte Carlo, multilevel splitting, and Girsanov
importance sampling.
"""

from .gaussian_analysis import CovarianceReport, IncrementScheme, covariance_report, eta_bound, increment_covariance
from .grid_noise import FieldPath, Grid, NoiseField, sample_noise
from .heat_kernel import (
    KernelConfig,
    gaussian_density,
    increment_variance_quadrature,
    kernel_convolve,
    lambda_theta,
    torus_kernel,
)
from .holder_tools import (
    HolderFunction,
    SeminormResult,
    combined_seminorm,
    mollify,
    normalized_increments,
    seminorm_diff,
    spatial_seminorm,
    temporal_seminorm,
)
from .localization import LocalizationParams, beta_level_preset, independence_probe, moment_error, picard_path
from .smallball import (
    EnsembleConfig,
    EventSpec,
    ExponentFit,
    GirsanovTilt,
    InitialProfileError,
    MCEstimate,
    estimate_importance,
    estimate_plain,
    estimate_splitting,
    event_check,
    exponent_fit,
    girsanov_tilt,
    rn_second_moment,
    tail_curve,
)
from .solver import (
    DriftSpec,
    NumericalFailure,
    SigmaSpec,
    noise_term,
    sigma_preset,
    solve_fd,
    solve_spectral_constant,
    u0_preset,
)

__version__ = "0.1.0"
