"""Latitude-longitude grids, area weights and gridded scalar fields.

Area weights are normalized so that ``sum(dA) == 1``; every mean-square
quantity in the package is a mean over the sphere, not an integral over
4*pi steradians.

Two on-disk encodings are supported: the binary ``SGF1`` format and a plain
``lat,lon,value`` CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import functools
import struct
from pathlib import Path

import numpy as np

from spectraloss.errors import FieldFormatError, ParameterError, ShapeError

SGF_MAGIC = b"SGF1"
SGF_HEADER = struct.Struct("<4sIIB7x")


class GridKind(enum.IntEnum):
    GAUSSIAN = 0
    EQUIANGULAR = 1


def gauss_legendre(n: int, tol: float = 1e-14, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.

    Nodes are returned in decreasing order (north to south when read as
    ``sin(latitude)``). Weights sum to 2.

    Parameters
    ----------
    n : int
        Number of nodes.
    tol : float
        Stop once every Newton correction ``P_n(x) / P_n'(x)`` is below this
        size; one further correction is applied after that.

    Returns
    -------
    nodes, weights : ndarray
    """
    if n < 1:
        raise ParameterError(f"need at least one node, got {n}")
    # Tricomi initial guess, already descending in i.
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(max_iter):
        p, dp = _legendre_and_derivative(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    else:
        raise ArithmeticError("Gauss-Legendre Newton iteration did not converge")
    p, dp = _legendre_and_derivative(n, x)
    x = x - p / dp
    p, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x**2) * dp**2)
    return x, w


def _legendre_and_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p0 = np.ones_like(x)
    p1 = x.copy()
    if n == 0:
        return p0, np.zeros_like(x)
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x**2 - 1.0)
    return p1, dp


@dataclasses.dataclass(frozen=True)
class Grid:
    """A global latitude-longitude grid.

    Latitudes run north to south; longitudes start at 0 and increase
    eastward with spacing ``2*pi/nlon``. ``quad_weights`` sum to one, and the
    area weight of cell ``(i, j)`` is ``quad_weights[i] / nlon``.
    """

    nlat: int
    nlon: int
    kind: GridKind = GridKind.GAUSSIAN
    latitudes: np.ndarray = dataclasses.field(init=False, repr=False, compare=False)
    quad_weights: np.ndarray = dataclasses.field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nlat < 2:
            raise ParameterError(f"nlat must be >= 2, got {self.nlat}")
        if self.nlon < 4 or self.nlon % 2:
            raise ParameterError(f"nlon must be even and >= 4, got {self.nlon}")
        object.__setattr__(self, "kind", GridKind(self.kind))
        lats, w = _latitude_nodes(self.nlat, self.kind)
        object.__setattr__(self, "latitudes", lats)
        object.__setattr__(self, "quad_weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def longitudes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nlon) / self.nlon

    @property
    def mu(self) -> np.ndarray:
        """sin(latitude) at each row."""
        return np.sin(self.latitudes)

    @property
    def area_weights(self) -> np.ndarray:
        """dA(i, j), shape (nlat, nlon), summing to one."""
        return np.repeat(self.quad_weights[:, None] / self.nlon, self.nlon, axis=1)

    @property
    def exact_parseval(self) -> bool:
        """Only Gaussian grids give exact quadrature for band-limited products."""
        return self.kind == GridKind.GAUSSIAN

    def max_truncation(self) -> int:
        """Largest triangular truncation with exact transforms on this grid."""
        return min(self.nlat - 1, (self.nlon - 1) // 2)


@functools.lru_cache(maxsize=32)
def _latitude_nodes(nlat: int, kind: GridKind) -> tuple[np.ndarray, np.ndarray]:
    if kind == GridKind.GAUSSIAN:
        mu, w = gauss_legendre(nlat)
        lats = np.arcsin(mu)
        w = w / 2.0
    else:
        # Cell centres, weights are exact cell areas (sin of edges).
        edges = np.linspace(np.pi / 2, -np.pi / 2, nlat + 1)
        lats = 0.5 * (edges[:-1] + edges[1:])
        w = (np.sin(edges[:-1]) - np.sin(edges[1:])) / 2.0
    w = w / w.sum()
    lats.setflags(write=False)
    w.setflags(write=False)
    return lats, w


def make_gaussian_grid(nlat: int, nlon: int) -> Grid:
    return Grid(nlat, nlon, GridKind.GAUSSIAN)


def make_equiangular_grid(nlat: int, nlon: int) -> Grid:
    return Grid(nlat, nlon, GridKind.EQUIANGULAR)


@dataclasses.dataclass(frozen=True, eq=False)
class GridField:
    """A real scalar field on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray
    name: str | None = None
    units: str | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ShapeError(f"values have shape {values.shape}, grid is {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> GridField:
        return GridField(self.grid, values, self.name, self.units)


def _check_same_grid(x: GridField, y: GridField) -> None:
    if x.grid != y.grid:
        raise ShapeError(f"grid mismatch: {x.grid} vs {y.grid}")


def area_mean(field: GridField | np.ndarray, grid: Grid | None = None) -> float:
    if isinstance(field, GridField):
        grid, values = field.grid, field.values
    else:
        values = field
    return float(np.sum(grid.quad_weights[:, None] * values) / grid.nlon)


def area_mean_square_error(x: GridField, y: GridField) -> float:
    """Latitude-weighted mean squared difference ``sum dA (x - y)**2``."""
    _check_same_grid(x, y)
    return area_mean((x.values - y.values) ** 2, x.grid)


# --- SGF1 binary format --------------------------------------------------


def write_field(field: GridField, path: str | Path) -> None:
    header = SGF_HEADER.pack(SGF_MAGIC, field.grid.nlat, field.grid.nlon, int(field.grid.kind))
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field(path: str | Path) -> GridField:
    data = Path(path).read_bytes()
    return decode_field(data)


def decode_field(data: bytes) -> GridField:
    if len(data) < 4 or data[:4] != SGF_MAGIC:
        raise FieldFormatError("bad magic, expected b'SGF1'", offset=0)
    if len(data) < SGF_HEADER.size:
        raise FieldFormatError("truncated header", offset=len(data))
    _, nlat, nlon, kind = SGF_HEADER.unpack_from(data)
    if any(data[13:SGF_HEADER.size]):
        raise FieldFormatError("non-zero header padding", offset=13)
    if kind not in (0, 1):
        raise FieldFormatError(f"unknown grid kind {kind}", offset=12)
    try:
        grid = Grid(nlat, nlon, GridKind(kind))
    except ParameterError as exc:
        raise FieldFormatError(str(exc), offset=4) from exc
    expected = SGF_HEADER.size + 8 * nlat * nlon
    if len(data) < expected:
        n_values = (len(data) - SGF_HEADER.size) // 8
        raise FieldFormatError(
            f"truncated payload: {n_values} of {nlat * nlon} values", offset=len(data)
        )
    if len(data) > expected:
        raise FieldFormatError("trailing bytes after payload", offset=expected)
    values = np.frombuffer(data, dtype="<f8", offset=SGF_HEADER.size).reshape(nlat, nlon)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FieldFormatError("non-finite value in payload", offset=SGF_HEADER.size + 8 * int(bad[0]))
    return GridField(grid, values.astype(np.float64))


# --- CSV -----------------------------------------------------------------


def write_field_csv(field: GridField, path: str | Path) -> None:
    lat = np.degrees(field.grid.latitudes)
    lon = np.degrees(field.grid.longitudes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "value"])
        for i in range(field.grid.nlat):
            for j in range(field.grid.nlon):
                w.writerow([f"{lat[i]:.17g}", f"{lon[j]:.17g}", f"{field.values[i, j]:.17g}"])


def read_field_csv(path: str | Path) -> GridField:
    """Read a ``lat,lon,value`` CSV; the grid kind is inferred from the latitudes."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["lat", "lon", "value"]:
            raise FieldFormatError(f"expected header lat,lon,value, got {header}", offset=0)
        rows = [tuple(map(float, row)) for row in reader if row]
    arr = np.array(rows)
    lats = np.unique(arr[:, 0])[::-1]
    lons = np.unique(arr[:, 1])
    nlat, nlon = len(lats), len(lons)
    if nlat * nlon != len(arr):
        raise FieldFormatError("CSV rows do not form a full lat-lon grid", offset=0)
    kind = GridKind.EQUIANGULAR
    gauss = Grid(nlat, nlon, GridKind.GAUSSIAN)
    if np.allclose(np.degrees(gauss.latitudes), lats, atol=1e-9):
        kind = GridKind.GAUSSIAN
    grid = Grid(nlat, nlon, kind)
    i = np.searchsorted(-lats, -arr[:, 0])
    j = np.searchsorted(lons, arr[:, 1])
    values = np.empty((nlat, nlon))
    values[i, j] = arr[:, 2]
    return GridField(grid, values)


def load_field(path: str | Path) -> GridField:
    """Dispatch on suffix: ``.csv`` for CSV, anything else as SGF1."""
    if str(path).endswith(".csv"):
        return read_field_csv(path)
    return read_field(path)


def save_field(field: GridField, path: str | Path) -> None:
    if str(path).endswith(".csv"):
        write_field_csv(field, path)
    else:
        write_field(field, path)


def sphere_mean_of(func, grid: Grid) -> float:
    """Quadrature mean of ``func(mu)`` over the sphere (zonally symmetric)."""
    return float(np.sum(grid.quad_weights * func(grid.mu)))


__all__ = [
    "Grid",
    "GridKind",
    "GridField",
    "make_gaussian_grid",
    "make_equiangular_grid",
    "gauss_legendre",
    "area_mean",
    "area_mean_square_error",
    "read_field",
    "write_field",
    "decode_field",
    "read_field_csv",
    "write_field_csv",
    "load_field",
    "save_field",
    "sphere_mean_of",
]
