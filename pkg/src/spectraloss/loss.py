"""MSE, spectrally adjusted MSE (AMSE) and MAE losses with gradients.

AMSE replaces the geometric-mean amplitude factor in the decorrelation part
of the spectral MSE by ``max(PSD_x, PSD_y)``::

    AMSE = sum_k (sqrt(Px) - sqrt(Py))**2 + 2 max(Px, Py) (1 - coh_k)

so that its optimum amplitude no longer shrinks with the coherence.

Gradients are returned with respect to gridpoint values of the prediction,
obtained by the chain rule through the (linear) spherical-harmonic analysis.
"""

from __future__ import annotations

import dataclasses
import enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy import optimize

from spectraloss.diagnostics import PSD_FLOOR, cross, mse_terms, power
from spectraloss.errors import ParameterError, ShapeError
from spectraloss.grid import GridField, _check_same_grid, area_mean
from spectraloss.sht import (
    SpectralField,
    Transform,
    Truncation,
    analyze,
    as_truncation,
    check_same_truncation,
    get_transform,
    spectral_mse,
)


class LossKind(str, enum.Enum):
    MSE = "mse"
    AMSE = "amse"
    MAE = "mae"


@dataclasses.dataclass(frozen=True, eq=False)
class LossBreakdown:
    total: float
    per_k_amplitude: np.ndarray
    per_k_decoherence: np.ndarray
    kind: LossKind


# --- array-level kernels (batched over leading axes) ---------------------


def _amse_parts(xc, yc, trunc: Truncation, coherence_weight: float = 1.0):
    px = power(xc, trunc)
    py = power(yc, trunc)
    xy = cross(xc, yc, trunc)
    sx = np.sqrt(np.maximum(px, PSD_FLOOR))
    sy = np.sqrt(np.maximum(py, PSD_FLOOR))
    # sqrt(px * py) rather than sx * sy: exact when x == y, so the loss is exactly 0.
    coh = xy / np.sqrt(np.maximum(px, PSD_FLOOR) * np.maximum(py, PSD_FLOOR))
    # Ties take the psd_y branch: d max / d px = 0 when px == py.
    x_larger = px > py
    big = np.where(x_larger, px, py)
    amp = (np.sqrt(np.maximum(px, 0.0)) - np.sqrt(np.maximum(py, 0.0))) ** 2
    # Rounding can push coh a hair above 1 for proportional inputs.
    dec = 2.0 * coherence_weight * big * np.maximum(1.0 - coh, 0.0)
    return px, py, xy, sx, sy, coh, x_larger, big, amp, dec


def amse_per_k(xc: np.ndarray, yc: np.ndarray, trunc: Truncation, coherence_weight: float = 1.0):
    """Per-k ``(amplitude, decoherence)`` AMSE terms for raw coefficient arrays."""
    parts = _amse_parts(xc, yc, trunc, coherence_weight)
    return parts[-2], parts[-1]


def amse_coeff_gradient(
    xc: np.ndarray, yc: np.ndarray, trunc: Truncation, coherence_weight: float = 1.0
) -> np.ndarray:
    """Gradient of AMSE with respect to the real and imaginary parts of ``xc``.

    Returned packed as ``dL/dRe + 1j * dL/dIm`` with the same shape as ``xc``.
    """
    px, py, xy, sx, sy, coh, x_larger, big, _, _ = _amse_parts(xc, yc, trunc, coherence_weight)
    c = coherence_weight
    d_px = 1.0 - sy / sx + 2.0 * c * x_larger * (1.0 - coh) + c * big * coh / (sx * sx)
    d_xy = -2.0 * c * big / (sx * sy)
    k = trunc.k_index
    w = trunc.l_weight
    return w * (2.0 * d_px[..., k] * xc + d_xy[..., k] * yc)


def mse_coeff_gradient(xc: np.ndarray, yc: np.ndarray, trunc: Truncation) -> np.ndarray:
    return 2.0 * trunc.l_weight * (xc - yc)


def coeff_to_grid_gradient(g: np.ndarray, transform: Transform) -> np.ndarray:
    """Pull a coefficient-space gradient back to gridpoint values.

    This is the transpose of ``Transform.analyze``: ``dA * synthesize(g / w)``.
    """
    values = transform.synthesize(g / transform.trunc.l_weight)
    return values * transform.grid.area_weights


# --- public losses -------------------------------------------------------


def amse(x: SpectralField, y: SpectralField, coherence_weight: float = 1.0) -> LossBreakdown:
    """Spectrally adjusted MSE between coefficient sets.

    ``coherence_weight`` scales the decorrelation term relative to the
    amplitude term; the default of 1 is the parameter-free loss.
    """
    check_same_truncation(x, y)
    amp, dec = amse_per_k(x.coeffs, y.coeffs, x.trunc, coherence_weight)
    return LossBreakdown(float(np.sum(amp + dec)), amp, dec, LossKind.AMSE)


def mse(x: SpectralField, y: SpectralField) -> LossBreakdown:
    """Spectral MSE with its amplitude / decorrelation split."""
    check_same_truncation(x, y)
    t = x.trunc
    px, py = power(x.coeffs, t), power(y.coeffs, t)
    xy = cross(x.coeffs, y.coeffs, t)
    coh = xy / np.sqrt(np.maximum(px, PSD_FLOOR) * np.maximum(py, PSD_FLOOR))
    amp, dec = mse_terms(px, py, coh)
    return LossBreakdown(spectral_mse(x, y), amp, dec, LossKind.MSE)


def mae(x: GridField, y: GridField) -> float:
    """Area-weighted mean absolute error, computed on the grid only."""
    _check_same_grid(x, y)
    return area_mean(np.abs(x.values - y.values), x.grid)


def amse_gradient(
    x: GridField,
    y: GridField | SpectralField,
    trunc: Truncation | int,
    coherence_weight: float = 1.0,
) -> np.ndarray:
    """d AMSE(analyze(x), analyze(y)) / d x, shaped like the grid."""
    trunc = as_truncation(trunc)
    tr = get_transform(x.grid, trunc)
    xc = tr.analyze(x.values)
    yc = y.coeffs if isinstance(y, SpectralField) else tr.analyze(y.values)
    if yc.shape != xc.shape:
        raise ShapeError("truncation mismatch between prediction and target")
    return coeff_to_grid_gradient(amse_coeff_gradient(xc, yc, trunc, coherence_weight), tr)


def mse_gradient(x: GridField, y: GridField) -> np.ndarray:
    _check_same_grid(x, y)
    return 2.0 * x.grid.area_weights * (x.values - y.values)


def mae_gradient(x: GridField, y: GridField) -> np.ndarray:
    _check_same_grid(x, y)
    return x.grid.area_weights * np.sign(x.values - y.values)


def field_loss(
    x: GridField, y: GridField, kind: LossKind | str, trunc: Truncation | int | None = None
) -> float:
    """Scalar loss between two gridded fields; spectral kinds need ``trunc``."""
    kind = LossKind(kind)
    if kind is LossKind.MAE:
        return mae(x, y)
    if trunc is None:
        if kind is LossKind.MSE:
            _check_same_grid(x, y)
            return area_mean((x.values - y.values) ** 2, x.grid)
        raise ParameterError("amse needs a truncation")
    _check_same_grid(x, y)
    xs, ys = analyze(x, trunc), analyze(y, trunc)
    return (amse(xs, ys) if kind is LossKind.AMSE else mse(xs, ys)).total


# --- multi-variable aggregation ------------------------------------------


@dataclasses.dataclass(frozen=True)
class WeightEntry:
    name: str
    weight: float
    level_weight: float
    std: float


@dataclasses.dataclass(frozen=True)
class VariableWeighting:
    """Per-variable weight, level weight and normalizing standard deviation."""

    entries: tuple[WeightEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ParameterError("duplicate variable names in weighting")
        for e in self.entries:
            if e.weight < 0 or e.level_weight < 0:
                raise ParameterError(f"negative weight for {e.name}")
            if not e.std > 0:
                raise ParameterError(f"std for {e.name} must be positive, got {e.std}")
        if not any(e.weight * e.level_weight > 0 for e in self.entries):
            raise ParameterError("at least one variable needs a positive weight")

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @classmethod
    def parse(cls, text: str) -> VariableWeighting:
        """Parse ``name,weight,level_weight,std`` lines; ``#`` starts a comment."""
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise ParameterError(f"line {lineno}: expected name,weight,level_weight,std")
            try:
                entries.append(WeightEntry(parts[0], *map(float, parts[1:])))
            except ValueError as exc:
                raise ParameterError(f"line {lineno}: {exc}") from exc
        return cls(tuple(entries))

    @classmethod
    def load(cls, path: str | Path) -> VariableWeighting:
        return cls.parse(Path(path).read_text())

    @classmethod
    def uniform(cls, names: Iterable[str]) -> VariableWeighting:
        return cls(tuple(WeightEntry(n, 1.0, 1.0, 1.0) for n in names))


def weighted_multivariable_loss(
    fields_x: Mapping[str, GridField],
    fields_y: Mapping[str, GridField],
    weighting: VariableWeighting,
    kind: LossKind | str = LossKind.AMSE,
    trunc: Truncation | int | None = None,
) -> float:
    """``sum_v w_v * level_v * loss(x_v / s_v, y_v / s_v)``."""
    total = 0.0
    for e in weighting.entries:
        if e.name not in fields_x or e.name not in fields_y:
            raise ParameterError(f"variable {e.name!r} missing from inputs")
        if e.weight * e.level_weight == 0:
            continue
        x, y = fields_x[e.name], fields_y[e.name]
        xs = x.with_values(x.values / e.std)
        ys = y.with_values(y.values / e.std)
        total += e.weight * e.level_weight * field_loss(xs, ys, kind, trunc)
    return total


# --- scalar optimum studies ----------------------------------------------


def expected_single_mode_loss(sigma, rho: float, kind: LossKind | str):
    """Expected loss of a prediction with std ``sigma`` and correlation ``rho``
    against a unit-variance target."""
    kind = LossKind(kind)
    sigma = np.asarray(sigma, dtype=np.float64)
    if kind is LossKind.MSE:
        return sigma**2 + 1.0 - 2.0 * sigma * rho
    if kind is LossKind.AMSE:
        return (1.0 - sigma) ** 2 + 2.0 * np.maximum(sigma**2, 1.0) * (1.0 - rho)
    raise ParameterError("no closed-form single-mode expectation for mae")


def analytic_optima_sweep(
    rho: float, kind: LossKind | str, step: float = 1e-3, sigma_max: float = 2.0
) -> float:
    """Minimize the expected single-mode loss over sigma by dense sweep."""
    if not 0.0 <= rho <= 1.0:
        raise ParameterError(f"rho must lie in [0, 1], got {rho}")
    sigma = np.arange(0, int(round(sigma_max / step)) + 1) * step
    return float(sigma[np.argmin(expected_single_mode_loss(sigma, rho, kind))])


@dataclasses.dataclass(frozen=True)
class KLOptimum:
    rho: float
    optimal_sigma_ratio: float
    objective_value: float


def kl_objective(sigma, rho: float, sigma_y: float = 1.0):
    """KL divergence of the target given a correlated Gaussian prediction, up to a constant."""
    sigma = np.asarray(sigma, dtype=np.float64)
    c = 1.0 - rho * rho
    return np.log(sigma**2 * c) + (sigma_y - rho * sigma) ** 2 / (2.0 * sigma**2 * c)


def kl_objective_derivative(sigma, rho: float, sigma_y: float = 1.0):
    sigma = np.asarray(sigma, dtype=np.float64)
    c = 1.0 - rho * rho
    return 2.0 / sigma - sigma_y * (sigma_y - rho * sigma) / (c * sigma**3)


def kl_optimum(rho: float, tol: float = 1e-12) -> KLOptimum:
    """Numerically minimize the KL objective in sigma (with sigma_Y = 1)."""
    if not 0.0 < rho < 1.0 - 1e-6:
        raise ParameterError(f"rho must lie in (0, 1 - 1e-6), got {rho}")
    # Objective -> +inf as sigma -> 0 and grows like log(sigma^2) for large sigma.
    lo, hi = 1e-3, 1.0
    while kl_objective_derivative(hi, rho) <= 0:
        hi *= 2.0
    res = optimize.minimize_scalar(
        lambda s: float(kl_objective(s, rho)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}
    )
    s = res.x
    # Polish on the derivative's sign change around the bracketed minimum.
    a, b = 0.9 * s, min(1.1 * s, hi)
    if kl_objective_derivative(a, rho) < 0 < kl_objective_derivative(b, rho):
        s = optimize.brentq(lambda t: float(kl_objective_derivative(t, rho)), a, b, xtol=1e-15, rtol=1e-15)
    return KLOptimum(float(rho), float(s), float(kl_objective(s, rho)))


def kl_ratio_curve(rhos: Iterable[float]) -> list[KLOptimum]:
    return [kl_optimum(r) for r in rhos]

