"""Spherical-harmonic analysis and synthesis on latitude-longitude grids.

Coefficients are stored for non-negative zonal wavenumbers only, ordered by
total wavenumber ``k`` first and zonal wavenumber ``l`` second. A real field
is reconstructed as::

    x = sum_k [ a(k,0) Y(k,0) + 2 Re sum_{l>0} a(k,l) Y(k,l) ]

with ``Y(k,l) = P(k,l)(sin lat) exp(i l lon)``. The associated Legendre
functions ``P`` are normalized so that the area mean of ``|Y|**2`` is one
under the grid's unit-mass measure, which makes the gridpoint mean square
equal to ``sum_k sum_l w(l) |a(k,l)|**2`` with ``w(0) = 1`` and ``w(l>0) = 2``.
No Condon-Shortley phase is applied.
"""

from __future__ import annotations

import dataclasses
import functools
import struct
from pathlib import Path

import numpy as np

from spectraloss.errors import FieldFormatError, ParameterError, ShapeError
from spectraloss.grid import Grid, GridField

SCF_MAGIC = b"SCF1"
SCF_HEADER = struct.Struct("<4sI")


@dataclasses.dataclass(frozen=True)
class Truncation:
    """Triangular truncation T``K``: all modes with ``0 <= l <= k <= K``."""

    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ParameterError(f"truncation must be a non-negative integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))

    @property
    def ncoef(self) -> int:
        return (self.K + 1) * (self.K + 2) // 2

    @property
    def k_index(self) -> np.ndarray:
        return _indices(self.K)[0]

    @property
    def l_index(self) -> np.ndarray:
        return _indices(self.K)[1]

    @property
    def l_weight(self) -> np.ndarray:
        """Conjugate-pair multiplicity: 1 for ``l == 0``, 2 otherwise."""
        return _indices(self.K)[2]

    @property
    def k_offsets(self) -> np.ndarray:
        """Start of each total-wavenumber block in the flat ordering."""
        k = np.arange(self.K + 1)
        return k * (k + 1) // 2

    def index(self, k: int, l: int) -> int:
        if not 0 <= l <= k <= self.K:
            raise ParameterError(f"mode ({k}, {l}) outside T{self.K}")
        return k * (k + 1) // 2 + l

    def check_admissible(self, grid: Grid) -> None:
        if self.K > grid.nlat - 1 or 2 * self.K + 1 > grid.nlon:
            raise ParameterError(
                f"T{self.K} is not admissible on a {grid.nlat}x{grid.nlon} grid "
                f"(need K <= nlat-1 and 2K+1 <= nlon)"
            )


@functools.lru_cache(maxsize=64)
def _indices(K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = np.concatenate([np.full(kk + 1, kk) for kk in range(K + 1)])
    l = np.concatenate([np.arange(kk + 1) for kk in range(K + 1)])
    w = np.where(l == 0, 1.0, 2.0)
    for a in (k, l, w):
        a.setflags(write=False)
    return k, l, w


def as_truncation(trunc: Truncation | int) -> Truncation:
    return trunc if isinstance(trunc, Truncation) else Truncation(trunc)


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex coefficients ``a(k, l)`` in the frozen k-major ordering."""

    trunc: Truncation
    coeffs: np.ndarray

    def __post_init__(self):
        trunc = as_truncation(self.trunc)
        coeffs = np.array(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (trunc.ncoef,):
            raise ShapeError(f"expected {trunc.ncoef} coefficients for T{trunc.K}, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ParameterError("coefficients contain non-finite values")
        if np.any(coeffs.imag[trunc.l_index == 0] != 0.0):
            raise ParameterError("l = 0 coefficients of a real field must be real")
        coeffs.setflags(write=False)
        object.__setattr__(self, "trunc", trunc)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def K(self) -> int:
        return self.trunc.K

    def __getitem__(self, kl: tuple[int, int]) -> complex:
        return complex(self.coeffs[self.trunc.index(*kl)])

    @classmethod
    def zeros(cls, trunc: Truncation | int) -> SpectralField:
        trunc = as_truncation(trunc)
        return cls(trunc, np.zeros(trunc.ncoef, dtype=np.complex128))

    @classmethod
    def delta(cls, trunc: Truncation | int, k: int, l: int, value: complex = 1.0) -> SpectralField:
        trunc = as_truncation(trunc)
        c = np.zeros(trunc.ncoef, dtype=np.complex128)
        c[trunc.index(k, l)] = value
        return cls(trunc, c)


def check_same_truncation(a: SpectralField, b: SpectralField) -> None:
    if a.trunc != b.trunc:
        raise ShapeError(f"truncation mismatch: T{a.K} vs T{b.K}")


def legendre_table(K: int, mu: np.ndarray) -> np.ndarray:
    """Normalized associated Legendre functions ``P(k, l)(mu)``.

    Returns an array of shape ``(ncoef, len(mu))`` in the k-major ordering,
    normalized so that ``0.5 * integral_{-1}^{1} P(k,l)**2 dmu == 1``.
    Uses the standard three-term recurrence in ``k`` at fixed ``l``,
    seeded by the sectoral values ``P(l, l)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = np.sqrt(np.clip(1.0 - mu * mu, 0.0, None))
    out = np.empty(((K + 1) * (K + 2) // 2, mu.size))
    pmm = np.ones_like(mu)
    for m in range(K + 1):
        if m == 1:
            pmm = np.sqrt(1.5) * s
        elif m >= 2:
            pmm = np.sqrt((2 * m + 1) / (2 * m)) * s * pmm
        out[m * (m + 1) // 2 + m] = pmm
        if m + 1 > K:
            continue
        p_prev2 = pmm
        p_prev1 = np.sqrt(2 * m + 3) * mu * pmm
        out[(m + 1) * (m + 2) // 2 + m] = p_prev1
        for n in range(m + 2, K + 1):
            a = np.sqrt((2 * n - 1) * (2 * n + 1) / ((n - m) * (n + m)))
            b = np.sqrt((2 * n + 1) * (n + m - 1) * (n - m - 1) / ((n - m) * (n + m) * (2 * n - 3)))
            p = a * mu * p_prev1 - b * p_prev2
            out[n * (n + 1) // 2 + m] = p
            p_prev2, p_prev1 = p_prev1, p
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class Transform:
    """Precomputed Legendre blocks for one (grid, truncation) pair.

    Immutable after construction and safe to share between threads.
    ``blocks[l]`` holds ``P(k, l)`` for ``k = l..K`` at every latitude and
    ``index[l]`` their positions in the flat coefficient ordering.
    """

    grid: Grid
    trunc: Truncation
    blocks: tuple[np.ndarray, ...]
    index: tuple[np.ndarray, ...]

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Gridpoint values ``(..., nlat, nlon)`` to coefficients ``(..., ncoef)``."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-2:] != self.grid.shape:
            raise ShapeError(f"values have shape {values.shape[-2:]}, grid is {self.grid.shape}")
        K = self.trunc.K
        four = np.fft.rfft(values, axis=-1)[..., : K + 1] / self.grid.nlon
        wf = four * self.grid.quad_weights[:, None]
        out = np.empty(values.shape[:-2] + (self.trunc.ncoef,), dtype=np.complex128)
        for l in range(K + 1):
            out[..., self.index[l]] = np.einsum("...i,ki->...k", wf[..., :, l], self.blocks[l])
        out[..., self.index[0]] = out[..., self.index[0]].real
        return out

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients ``(..., ncoef)`` to gridpoint values ``(..., nlat, nlon)``."""
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape[-1] != self.trunc.ncoef:
            raise ShapeError(f"expected {self.trunc.ncoef} coefficients, got {coeffs.shape[-1]}")
        K, nlon = self.trunc.K, self.grid.nlon
        four = np.zeros(coeffs.shape[:-1] + (self.grid.nlat, nlon // 2 + 1), dtype=np.complex128)
        for l in range(K + 1):
            four[..., :, l] = np.einsum("...k,ki->...i", coeffs[..., self.index[l]], self.blocks[l])
        four[..., :, 0] = four[..., :, 0].real
        return np.fft.irfft(four * nlon, n=nlon, axis=-1)


@functools.lru_cache(maxsize=16)
def get_transform(grid: Grid, trunc: Truncation) -> Transform:
    trunc.check_admissible(grid)
    table = legendre_table(trunc.K, grid.mu)
    k_idx, l_idx = trunc.k_index, trunc.l_index
    index = tuple(np.flatnonzero(l_idx == l) for l in range(trunc.K + 1))
    blocks = []
    for idx in index:
        b = table[idx].copy()
        b.setflags(write=False)
        blocks.append(b)
    assert all(np.all(np.diff(k_idx[i]) == 1) for i in index)
    return Transform(grid, trunc, tuple(blocks), index)


def analyze(field: GridField, trunc: Truncation | int) -> SpectralField:
    """Project a gridded field onto spherical harmonics up to total wavenumber K."""
    trunc = as_truncation(trunc)
    tr = get_transform(field.grid, trunc)
    return SpectralField(trunc, tr.analyze(field.values))


def synthesize(spec: SpectralField, grid: Grid) -> GridField:
    tr = get_transform(grid, spec.trunc)
    return GridField(grid, tr.synthesize(spec.coeffs))


def spectral_inner(a: np.ndarray, b: np.ndarray, trunc: Truncation) -> np.ndarray:
    """``sum w(l) Re(a conj(b))`` over the last axis; the spectral dot product."""
    return np.sum(trunc.l_weight * (a * np.conj(b)).real, axis=-1)


def spectral_mse(a: SpectralField, b: SpectralField) -> float:
    """Mean squared difference computed from coefficients (l-doubled sum)."""
    check_same_truncation(a, b)
    d = a.coeffs - b.coeffs
    return float(spectral_inner(d, d, a.trunc))


def random_spectral(
    trunc: Truncation | int,
    rng: np.random.Generator,
    psd: np.ndarray | None = None,
    size: tuple[int, ...] = (),
) -> np.ndarray:
    """Random coefficients whose expected per-k power is ``psd[k]``.

    Each of the ``2k + 1`` real degrees of freedom at total wavenumber ``k``
    gets variance ``psd[k] / (2k + 1)``. Defaults to unit power per ``k``.
    """
    trunc = as_truncation(trunc)
    k, l = trunc.k_index, trunc.l_index
    if psd is None:
        psd = np.ones(trunc.K + 1)
    var = np.asarray(psd, dtype=np.float64)[k] / (2 * k + 1)
    shape = tuple(size) + (trunc.ncoef,)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    # l = 0: one real dof with full variance; l > 0: complex, E|a|^2 = var.
    scale_re = np.where(l == 0, np.sqrt(var), np.sqrt(var / 2))
    scale_im = np.where(l == 0, 0.0, np.sqrt(var / 2))
    return re * scale_re + 1j * im * scale_im


# --- SCF1 binary format --------------------------------------------------


def write_spectral(spec: SpectralField, path: str | Path) -> None:
    header = SCF_HEADER.pack(SCF_MAGIC, spec.K)
    payload = np.ascontiguousarray(spec.coeffs, dtype="<c16").tobytes()
    Path(path).write_bytes(header + payload)


def read_spectral(path: str | Path) -> SpectralField:
    return decode_spectral(Path(path).read_bytes())


def decode_spectral(data: bytes) -> SpectralField:
    if len(data) < 4 or data[:4] != SCF_MAGIC:
        raise FieldFormatError("bad magic, expected b'SCF1'", offset=0)
    if len(data) < SCF_HEADER.size:
        raise FieldFormatError("truncated header", offset=len(data))
    _, K = SCF_HEADER.unpack_from(data)
    trunc = Truncation(K)
    expected = SCF_HEADER.size + 16 * trunc.ncoef
    if len(data) < expected:
        raise FieldFormatError(
            f"truncated payload: {(len(data) - SCF_HEADER.size) // 16} of {trunc.ncoef} coefficients",
            offset=len(data),
        )
    if len(data) > expected:
        raise FieldFormatError("trailing bytes after payload", offset=expected)
    raw = np.frombuffer(data, dtype="<f8", offset=SCF_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        raise FieldFormatError("non-finite value in payload", offset=SCF_HEADER.size + 8 * int(bad[0]))
    coeffs = raw[0::2] + 1j * raw[1::2]
    try:
        return SpectralField(trunc, coeffs)
    except ParameterError as exc:
        raise FieldFormatError(str(exc), offset=SCF_HEADER.size) from exc
