"""Quantile-quantile statistics with a two-sample Kolmogorov-Smirnov band."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from spectraloss.errors import ParameterError

#: Asymptotic two-sample KS critical value at alpha = 0.05.
KS_C_05 = 1.358

DEFAULT_PERCENTILES = (0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.98, 0.99)


def _quantiles_closed(srt: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Order-statistic position h = (n-1) p (zero-based), linear between neighbours.
    n = srt.size
    h = (n - 1) * p
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return srt[lo] + (h - lo) * (srt[hi] - srt[lo])


def quantiles(sample: Sequence[float], probabilities: Sequence[float] | float) -> np.ndarray:
    """Linear-interpolation quantiles of ``sample`` at ``probabilities`` in (0, 1)."""
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("empty sample")
    p = np.asarray(probabilities, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ParameterError("probabilities must lie strictly inside (0, 1)")
    return _quantiles_closed(np.sort(x), p)


def ks_halfwidth(n_x: int, n_y: int, c: float = KS_C_05) -> float:
    """Band half-width in probability units, ``c * sqrt((n_x + n_y) / (n_x n_y))``."""
    return c * math.sqrt((n_x + n_y) / (n_x * n_y))


@dataclasses.dataclass(frozen=True, eq=False)
class QQResult:
    percentiles: np.ndarray
    x_quantiles: np.ndarray
    y_quantiles: np.ndarray
    ks_band_halfwidth: float
    n_x: int
    n_y: int
    band_low: np.ndarray
    band_high: np.ndarray

    def within_band(self) -> np.ndarray:
        return (self.y_quantiles >= self.band_low) & (self.y_quantiles <= self.band_high)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "x_quantile", "y_quantile", "band_low", "band_high"])
            for row in zip(self.percentiles, self.x_quantiles, self.y_quantiles, self.band_low, self.band_high):
                w.writerow([f"{v:.17g}" for v in row])


def qq(
    x_sample: Sequence[float],
    y_sample: Sequence[float],
    probabilities: Sequence[float] = DEFAULT_PERCENTILES,
    c: float = KS_C_05,
) -> QQResult:
    """Matched quantiles of two samples plus a KS confidence band.

    The band is built in probability space, ``p -/+ halfwidth`` clipped to
    [0, 1], and mapped to data space through the quantile function of the
    reference sample ``x``. A ``y`` quantile outside the band indicates a
    distributional difference at the 95% level.
    """
    x = np.sort(np.asarray(x_sample, dtype=np.float64).ravel())
    y = np.sort(np.asarray(y_sample, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise ParameterError("empty sample")
    p = np.asarray(probabilities, dtype=np.float64)
    xq = quantiles(x, p)
    yq = quantiles(y, p)
    h = ks_halfwidth(x.size, y.size, c)
    low = _quantiles_closed(x, np.clip(p - h, 0.0, 1.0))
    high = _quantiles_closed(x, np.clip(p + h, 0.0, 1.0))
    return QQResult(p, xq, yq, h, x.size, y.size, low, high)
