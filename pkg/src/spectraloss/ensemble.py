"""Lagged ensembles and area-weighted probabilistic scores.

Scores for a single ensemble (one valid time) are computed pointwise and
averaged with the grid's area weights. Aggregation across dates follows the
usual order: CRPS and the squared errors are averaged over dates before any
square root; the spread-error ratio averages per-date ratios of the
grid-averaged spread and error.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import math
import os
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from spectraloss.errors import ParameterError, ShapeError, UndefinedScoreError
from spectraloss.grid import Grid, GridField, area_mean, read_field

SCORE_NAMES = ("crps", "ermse", "ser", "ubermse")


class ClampWarning(UserWarning):
    """A bias-corrected mean square came out negative and was clamped to zero."""


class ArchiveError(OSError):
    """A forecast archive member could not be read."""


@dataclasses.dataclass(frozen=True, eq=False)
class EnsembleSet:
    """``N_e >= 2`` member fields and the verifying field for one valid time."""

    members: np.ndarray
    verification: GridField
    valid_time: object = None
    lead_h: float | None = None
    member_lags: tuple[float, ...] | None = None

    def __post_init__(self):
        members = self.members
        if isinstance(members, (list, tuple)):
            for m in members:
                if isinstance(m, GridField) and m.grid != self.verification.grid:
                    raise ShapeError("member grid differs from verification grid")
            members = [m.values if isinstance(m, GridField) else m for m in members]
        members = np.array(members, dtype=np.float64)
        if members.ndim != 3 or members.shape[1:] != self.verification.grid.shape:
            raise ShapeError(f"members have shape {members.shape}, grid is {self.verification.grid.shape}")
        if members.shape[0] < 2:
            raise ParameterError(f"an ensemble needs at least 2 members, got {members.shape[0]}")
        if not np.all(np.isfinite(members)):
            raise ParameterError("members contain non-finite values")
        if self.member_lags is not None and len(self.member_lags) != members.shape[0]:
            raise ShapeError("member_lags length differs from the member count")
        members.setflags(write=False)
        object.__setattr__(self, "members", members)

    @property
    def grid(self) -> Grid:
        return self.verification.grid

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


def _pairwise_abs_sum(members: np.ndarray) -> np.ndarray:
    """``sum_k sum_l |x_k - x_l|`` at each point via sorted order statistics."""
    n = members.shape[0]
    srt = np.sort(members, axis=0)
    coef = (2.0 * np.arange(1, n + 1) - n - 1)[:, None, None]
    return 2.0 * np.sum(coef * srt, axis=0)


def fair_crps(ens: EnsembleSet, add_spread: bool = False) -> float:
    """Area-averaged fair CRPS of one ensemble.

    With ``add_spread=True`` the pairwise spread term is added instead of
    subtracted. That variant is not a proper score (a perfect zero-spread
    ensemble no longer minimizes it) and exists only for comparison.
    """
    n = ens.size
    skill = np.mean(np.abs(ens.members - ens.verification.values), axis=0)
    spread = _pairwise_abs_sum(ens.members) / (2.0 * n * (n - 1))
    pointwise = skill + spread if add_spread else skill - spread
    return area_mean(pointwise, ens.grid)


def mean_abs_error(ens: EnsembleSet) -> float:
    return area_mean(np.mean(np.abs(ens.members - ens.verification.values), axis=0), ens.grid)


def ensemble_mse(ens: EnsembleSet) -> float:
    """Area mean of the squared ensemble-mean error."""
    return area_mean((ens.mean - ens.verification.values) ** 2, ens.grid)


def ensemble_spread(ens: EnsembleSet) -> float:
    """Area mean of the unbiased member variance."""
    return area_mean(np.var(ens.members, axis=0, ddof=1), ens.grid)


def unbiased_ensemble_mse(ens: EnsembleSet) -> float:
    """Ensemble-mean squared error minus its finite-ensemble standard error.

    May be negative for a single ensemble; clamping happens only when a
    root is taken.
    """
    n = ens.size
    err2 = (ens.mean - ens.verification.values) ** 2
    corr = np.var(ens.members, axis=0, ddof=1) / n
    return area_mean(err2 - corr, ens.grid)


def ermse(ens: EnsembleSet) -> float:
    return math.sqrt(ensemble_mse(ens))


def ser(ens: EnsembleSet) -> float:
    """Spread-error ratio: sqrt(grid-mean spread / grid-mean error)."""
    err = ensemble_mse(ens)
    if err <= 0:
        raise UndefinedScoreError("spread-error ratio undefined: ensemble-mean error is zero")
    return math.sqrt(ensemble_spread(ens) / err)


def _clamped_sqrt(value: float, what: str) -> float:
    if value < 0:
        warnings.warn(f"{what} was {value:.3g} < 0; clamped to 0", ClampWarning, stacklevel=3)
        return 0.0
    return math.sqrt(value)


def ub_ermse(ens: EnsembleSet) -> float:
    return _clamped_sqrt(unbiased_ensemble_mse(ens), "unbiased ensemble MSE")


# --- date series and aggregation -----------------------------------------


@dataclasses.dataclass(frozen=True)
class DateScore:
    """Raw per-date ingredients; every reported score is derived from these."""

    valid_time: object
    lead_h: float | None
    crps: float
    emse: float
    spread: float
    ub_emse: float

    @property
    def ermse(self) -> float:
        return math.sqrt(self.emse)

    @property
    def ser(self) -> float:
        return math.sqrt(self.spread / self.emse) if self.emse > 0 else math.nan

    @property
    def ubermse(self) -> float:
        return math.sqrt(max(self.ub_emse, 0.0))


def score_ensemble(ens: EnsembleSet, add_spread: bool = False) -> DateScore:
    return DateScore(
        ens.valid_time,
        ens.lead_h,
        fair_crps(ens, add_spread),
        ensemble_mse(ens),
        ensemble_spread(ens),
        unbiased_ensemble_mse(ens),
    )


def _thread_count(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("SPECTRALOSS_THREADS", "1") or 1)
    return max(1, threads)


def score_ensembles(
    ensembles: Iterable[EnsembleSet], add_spread: bool = False, threads: int | None = None
) -> ScoreSeries:
    """Score many ensembles; ``SPECTRALOSS_THREADS`` caps the worker count."""
    ensembles = list(ensembles)
    n = _thread_count(threads)
    if n == 1:
        rows = [score_ensemble(e, add_spread) for e in ensembles]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(lambda e: score_ensemble(e, add_spread), ensembles))
    return ScoreSeries(tuple(rows))


@dataclasses.dataclass(frozen=True)
class ScoreSeries:
    rows: tuple[DateScore, ...]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_date(self) -> int:
        return len(self.rows)

    @property
    def keys(self) -> list[tuple[object, float | None]]:
        return [(r.valid_time, r.lead_h) for r in self.rows]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            f: np.array([getattr(r, f) for r in self.rows], dtype=np.float64)
            for f in ("crps", "emse", "spread", "ub_emse")
        }

    def aggregate(self, index: np.ndarray | None = None) -> dict[str, float]:
        """Date-aggregated scores, optionally over a subset (with repeats) of dates."""
        if not self.rows:
            raise ParameterError("cannot aggregate an empty score series")
        a = self.arrays()
        if index is not None:
            a = {k: v[index] for k, v in a.items()}
        return _aggregate(a, warn=True)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["valid_time", "lead_h", *SCORE_NAMES])
            for r in self.rows:
                vt = r.valid_time.isoformat() if isinstance(r.valid_time, dt.datetime) else r.valid_time
                lead = "" if r.lead_h is None else f"{r.lead_h:.17g}"
                w.writerow([vt, lead] + [f"{getattr(r, s):.17g}" for s in SCORE_NAMES])


def _aggregate(a: Mapping[str, np.ndarray], warn: bool = False) -> dict[str, float]:
    emse = a["emse"]
    if np.any(emse <= 0):
        ser_val = math.nan
    else:
        ser_val = math.sqrt(float(np.mean(a["spread"] / emse)))
    ub = float(np.mean(a["ub_emse"]))
    return {
        "crps": float(np.mean(a["crps"])),
        "ermse": math.sqrt(float(np.mean(emse))),
        "ser": ser_val,
        "ubermse": _clamped_sqrt(ub, "aggregated ub-eMSE") if warn else math.sqrt(max(ub, 0.0)),
    }


def bootstrap_significance(
    series_a: ScoreSeries,
    series_b: ScoreSeries,
    fraction: float = 1.0 / 3.0,
    resamples: int = 1000,
    level: float = 0.90,
    seed: int = 0,
) -> dict[str, bool]:
    """Per-score significance of the difference ``b - a`` by date bootstrap.

    Each resample draws ``ceil(fraction * n_date)`` dates with replacement,
    aggregates both series over them and records the score difference. A
    score is significant when the two-sided ``level`` percentile interval
    of the differences excludes zero.
    """
    if series_a.keys != series_b.keys:
        raise ShapeError("score series cover different dates")
    if resamples < 1000:
        raise ParameterError("use at least 1000 resamples")
    if not 0 < fraction <= 1:
        raise ParameterError("fraction must lie in (0, 1]")
    n = series_a.n_date
    m = max(1, math.ceil(fraction * n))
    rng = np.random.default_rng(seed)
    a, b = series_a.arrays(), series_b.arrays()
    diffs = {s: np.empty(resamples) for s in SCORE_NAMES}
    for r in range(resamples):
        idx = rng.integers(0, n, size=m)
        sa = _aggregate({k: v[idx] for k, v in a.items()})
        sb = _aggregate({k: v[idx] for k, v in b.items()})
        for s in SCORE_NAMES:
            diffs[s][r] = sb[s] - sa[s]
    tail = 100.0 * (1.0 - level) / 2.0
    flags = {}
    for s, d in diffs.items():
        d = d[np.isfinite(d)]
        if d.size == 0:
            flags[s] = False
            continue
        lo, hi = np.percentile(d, [tail, 100.0 - tail])
        flags[s] = bool(lo > 0 or hi < 0)
    return flags


# --- lagged-ensemble construction -----------------------------------------

ArchiveKey = tuple[dt.datetime, int]
_INIT_RE = re.compile(r"^init_(.+)$")
_LEAD_RE = re.compile(r"^lead_(\d+)\.sgf$")


def archive_path(root: str | Path, init: dt.datetime, lead_h: int) -> Path:
    return Path(root) / f"init_{init.isoformat()}" / f"lead_{int(lead_h)}.sgf"


def scan_archive(root: str | Path) -> dict[ArchiveKey, Path]:
    """Index ``<root>/init_<ISO8601>/lead_<hours>.sgf`` files."""
    out: dict[ArchiveKey, Path] = {}
    for d in sorted(Path(root).iterdir()):
        m = _INIT_RE.match(d.name)
        if not (d.is_dir() and m):
            continue
        try:
            init = dt.datetime.fromisoformat(m.group(1))
        except ValueError:
            continue
        for f in sorted(d.iterdir()):
            lm = _LEAD_RE.match(f.name)
            if lm:
                out[(init, int(lm.group(1)))] = f
    return out


@dataclasses.dataclass(frozen=True)
class LaggedResult:
    ensembles: tuple[EnsembleSet, ...]
    skipped: int


def build_lagged_ensembles(
    archive: Mapping[ArchiveKey, str | Path],
    central_leads: int | Sequence[int],
    window: int = 9,
    stride_h: int = 12,
    analyses: Mapping[dt.datetime, str | Path] | Callable[[dt.datetime], str | Path | None] | None = None,
    reader: Callable[[str | Path], GridField] = read_field,
) -> LaggedResult:
    """Group consecutively initialized forecasts sharing a valid time.

    For each central initialization ``c`` whose whole window of ``window``
    initializations (spaced ``stride_h`` hours) fits in the archive's span,
    and each central lead ``L``, the members are the forecasts initialized
    at ``c + j*stride_h`` with lead ``L - j*stride_h``. The verifying field
    comes from ``analyses`` (a mapping or callable on the valid time) or, by
    default, from the archive's lead-0 file at the valid time. Windows with
    any missing piece are skipped and counted.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError("window must be an odd member count >= 3")
    if isinstance(central_leads, int):
        central_leads = [central_leads]
    half = window // 2
    step = dt.timedelta(hours=stride_h)
    inits = sorted({k[0] for k in archive})
    if not inits:
        return LaggedResult((), 0)

    def lookup_analysis(valid: dt.datetime):
        if analyses is None:
            return archive.get((valid, 0))
        if callable(analyses):
            return analyses(valid)
        return analyses.get(valid)

    def load(path, what):
        try:
            return reader(path)
        except (OSError, ValueError) as exc:
            raise ArchiveError(f"cannot read {what} from {path}: {exc}") from exc

    ensembles, skipped = [], 0
    first, last = inits[0], inits[-1]
    c = first + half * step
    while c + half * step <= last:
        for lead in central_leads:
            valid = c + dt.timedelta(hours=lead)
            lags = [j * stride_h for j in range(-half, half + 1)]
            keys = [(c + dt.timedelta(hours=lag), lead - lag) for lag in lags]
            vpath = lookup_analysis(valid)
            if vpath is None or any(k[1] < 0 or k not in archive for k in keys):
                skipped += 1
                continue
            members = [load(archive[k], f"member init={k[0].isoformat()} lead={k[1]}h") for k in keys]
            truth = load(vpath, f"analysis valid={valid.isoformat()}")
            ensembles.append(
                EnsembleSet(
                    members,
                    truth,
                    valid_time=valid,
                    lead_h=lead,
                    # Positive lag = initialized earlier than the central member.
                    member_lags=tuple(float(-lag) for lag in lags),
                )
            )
        c += step
    return LaggedResult(tuple(ensembles), skipped)
