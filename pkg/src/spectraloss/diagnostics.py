"""Per-wavenumber power, coherence and amplitude-ratio diagnostics.

Everything here reduces pairs of coefficient sets to profiles over total
wavenumber ``k``. The array-level helpers (``per_k``, ``power``, ``cross``)
accept arbitrary leading batch dimensions and are reused by the loss and
toy-training modules.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
from pathlib import Path
from typing import Sequence

import numpy as np

from spectraloss.errors import ParameterError, ShapeError
from spectraloss.sht import SpectralField, Truncation, check_same_truncation

#: Floor applied to powers inside square roots and quotients.
PSD_FLOOR = 1e-30

DEFAULT_ENERGY_THRESHOLD = 0.75
DEFAULT_PERSISTENCE = 3
DEFAULT_MIN_K = 4
DEFAULT_HIGHPASS_K0 = 50.0


def per_k(values: np.ndarray, trunc: Truncation) -> np.ndarray:
    """Sum ``values[..., ncoef]`` within each total wavenumber block."""
    return np.add.reduceat(values, trunc.k_offsets, axis=-1)


def power(a: np.ndarray, trunc: Truncation) -> np.ndarray:
    """PSD_k: l-doubled sum of ``|a|**2`` at each ``k``."""
    return per_k(trunc.l_weight * (a.real**2 + a.imag**2), trunc)


def cross(a: np.ndarray, b: np.ndarray, trunc: Truncation) -> np.ndarray:
    """l-doubled sum of ``Re(a conj(b))`` at each ``k``."""
    return per_k(trunc.l_weight * (a.real * b.real + a.imag * b.imag), trunc)


def coherence_from(psd_x, psd_y, xy) -> np.ndarray:
    """Coherence ``xy / sqrt(psd_x psd_y)``, zero where either power vanishes."""
    psd_x, psd_y, xy = np.broadcast_arrays(*map(np.asarray, (psd_x, psd_y, xy)))
    denom = np.sqrt(psd_x * psd_y)
    ok = (psd_x > 0) & (psd_y > 0)
    out = np.zeros(denom.shape)
    np.divide(xy, denom, out=out, where=ok)
    return np.clip(out, -1.0, 1.0)


def amplitude_ratio_from(psd_x, psd_y) -> np.ndarray:
    return np.sqrt(np.maximum(psd_x, 0.0) / np.maximum(psd_y, PSD_FLOOR))


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralDiagnostics:
    """Per-``k`` profiles for a (prediction, reference) pair."""

    psd_x: np.ndarray
    psd_y: np.ndarray
    cross: np.ndarray
    coherence: np.ndarray = dataclasses.field(init=False)
    amplitude_ratio: np.ndarray = dataclasses.field(init=False)

    def __post_init__(self):
        psd_x, psd_y, xy = (np.asarray(a, dtype=np.float64) for a in (self.psd_x, self.psd_y, self.cross))
        if not psd_x.shape == psd_y.shape == xy.shape or psd_x.ndim != 1:
            raise ShapeError("psd_x, psd_y and cross must be 1-D profiles of equal length")
        object.__setattr__(self, "psd_x", psd_x)
        object.__setattr__(self, "psd_y", psd_y)
        object.__setattr__(self, "cross", xy)
        object.__setattr__(self, "coherence", coherence_from(psd_x, psd_y, xy))
        object.__setattr__(self, "amplitude_ratio", amplitude_ratio_from(psd_x, psd_y))

    @property
    def K(self) -> int:
        return len(self.psd_x) - 1

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(self.K + 1)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "psd_x", "psd_y", "coherence", "amplitude_ratio"])
            for k in range(self.K + 1):
                w.writerow(
                    [k]
                    + [f"{v:.17g}" for v in (self.psd_x[k], self.psd_y[k], self.coherence[k], self.amplitude_ratio[k])]
                )


def diagnostics(x: SpectralField, y: SpectralField) -> SpectralDiagnostics:
    check_same_truncation(x, y)
    t = x.trunc
    return SpectralDiagnostics(power(x.coeffs, t), power(y.coeffs, t), cross(x.coeffs, y.coeffs, t))


def mse_terms(psd_x, psd_y, coh) -> tuple[np.ndarray, np.ndarray]:
    """Split per-k MSE into a perfectly-correlated part and a decorrelation residual."""
    sx, sy = np.sqrt(psd_x), np.sqrt(psd_y)
    return (sx - sy) ** 2, 2.0 * sx * sy * (1.0 - coh)


def mse_decomposition(x: SpectralField, y: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Per-k ``(amplitude_term, decoherence_term)`` whose total is the MSE."""
    d = diagnostics(x, y)
    return mse_terms(d.psd_x, d.psd_y, d.coherence)


class ResolutionMode(str, enum.Enum):
    DISSIPATION = "dissipation"
    NOISE = "noise"


def effective_resolution(
    diag: SpectralDiagnostics,
    mode: ResolutionMode | str = ResolutionMode.DISSIPATION,
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
    persistence: int = DEFAULT_PERSISTENCE,
    min_k: int = DEFAULT_MIN_K,
) -> int | None:
    """First wavenumber where the amplitude ratio crosses its threshold and stays there.

    ``dissipation`` looks for the ratio falling below ``sqrt(energy_threshold)``;
    ``noise`` for it rising above one. A crossing at ``k`` counts only if
    ``k + 1 .. k + persistence`` are on the same side, so candidates closer
    than ``persistence`` to the truncation limit are never reported.
    Wavenumbers below ``min_k`` are ignored. Returns ``None`` without a crossing.
    """
    mode = ResolutionMode(mode)
    ratio = diag.amplitude_ratio
    has_power = diag.psd_y > 0
    if mode is ResolutionMode.DISSIPATION:
        flag = (ratio < np.sqrt(energy_threshold)) & has_power
    else:
        flag = (ratio > 1.0) & has_power
    for k in range(min_k, len(flag) - persistence):
        if flag[k : k + persistence + 1].all():
            return k
    return None


def highpass_response(k, k0: float = DEFAULT_HIGHPASS_K0):
    """Fourth-order high-pass gain ``1 - k0^4 / (k0^4 + k^4)``."""
    if k0 <= 0:
        raise ParameterError(f"cutoff must be positive, got {k0}")
    k = np.asarray(k, dtype=np.float64)
    return 1.0 - k0**4 / (k0**4 + k**4)


def lowpass_response(k, k0: float):
    return 1.0 - highpass_response(k, k0)


def highpass(spec: SpectralField, k0: float = DEFAULT_HIGHPASS_K0) -> SpectralField:
    gain = highpass_response(spec.trunc.k_index, k0)
    return SpectralField(spec.trunc, spec.coeffs * gain)


def aggregate_diagnostics(
    diags: Sequence[SpectralDiagnostics], weights: Sequence[float] | None = None
) -> SpectralDiagnostics:
    """Weighted combination of several variables' profiles.

    Each variable is first made dimensionless by dividing its powers and
    cross-power by its own reference power ``psd_y`` at each ``k``; the
    combined profile is the weighted mean of those, so its amplitude ratio
    is the root of a weighted mean of squared ratios. Variables with zero
    reference power at some ``k`` drop out of the mean at that ``k``.
    """
    if not diags:
        raise ParameterError("need at least one diagnostics profile")
    if weights is None:
        weights = np.ones(len(diags))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(diags),):
        raise ShapeError(f"{len(diags)} profiles but {w.size} weights")
    if np.any(w < 0) or w.sum() <= 0:
        raise ParameterError("weights must be non-negative with a positive sum")
    n = {len(d.psd_x) for d in diags}
    if len(n) != 1:
        raise ShapeError("all profiles must share one truncation")

    psd_y = np.stack([d.psd_y for d in diags])
    ok = psd_y > 0
    safe = np.where(ok, psd_y, 1.0)
    nx = np.where(ok, np.stack([d.psd_x for d in diags]) / safe, 0.0)
    nxy = np.where(ok, np.stack([d.cross for d in diags]) / safe, 0.0)
    wk = w[:, None] * ok
    total = wk.sum(axis=0)
    has = total > 0
    denom = np.where(has, total, 1.0)
    return SpectralDiagnostics(
        np.where(has, (wk * nx).sum(axis=0) / denom, 0.0),
        has.astype(np.float64),
        np.where(has, (wk * nxy).sum(axis=0) / denom, 0.0),
    )
