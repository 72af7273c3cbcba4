"""Spectrally adjusted MSE, spherical-harmonic diagnostics and forecast verification."""

from spectraloss.diagnostics import (
    SpectralDiagnostics,
    aggregate_diagnostics,
    effective_resolution,
    highpass,
    mse_decomposition,
)
from spectraloss.ensemble import EnsembleSet, build_lagged_ensembles, fair_crps, ermse, ser, ub_ermse
from spectraloss.errors import (
    FieldFormatError,
    ParameterError,
    ShapeError,
    SpectralLossError,
    TrainingDivergedError,
    UndefinedScoreError,
)
from spectraloss.grid import (
    Grid,
    GridField,
    area_mean_square_error,
    make_gaussian_grid,
    read_field,
    write_field,
)
from spectraloss.loss import (
    KLOptimum,
    LossBreakdown,
    VariableWeighting,
    amse,
    amse_gradient,
    analytic_optima_sweep,
    kl_optimum,
    mae,
    mse,
    weighted_multivariable_loss,
)
from spectraloss.qq import QQResult, qq, quantiles
from spectraloss.sht import SpectralField, Truncation, analyze, spectral_mse, synthesize

__version__ = "0.1.0"
