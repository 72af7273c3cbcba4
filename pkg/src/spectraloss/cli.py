"""Command-line entry point: ``spectraloss <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable or malformed files, inadmissible parameters, undefined scores).
All CSV output uses 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import sys
import warnings
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from spectraloss import diagnostics as diag
from spectraloss import ensemble as ens
from spectraloss import loss as L
from spectraloss import toy
from spectraloss.errors import SpectralLossError
from spectraloss.grid import Grid, GridField, GridKind, load_field, save_field
from spectraloss.qq import DEFAULT_PERCENTILES, qq
from spectraloss.sht import (
    SpectralField,
    Truncation,
    analyze,
    random_spectral,
    read_spectral,
    synthesize,
    write_spectral,
)

DEFAULT_SEED = 20240101


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _open_out(path: str | None) -> TextIO:
    return open(path, "w", newline="") if path else sys.stdout


def _write_rows(path: str | None, header: Sequence[str], rows) -> None:
    fh = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _trunc_for(field: GridField, K: int | None) -> Truncation:
    return Truncation(field.grid.max_truncation() if K is None else K)


# --- subcommands ---------------------------------------------------------


def cmd_gen(a) -> int:
    rng = np.random.default_rng(a.seed)
    grid = Grid(a.nlat, a.nlon, GridKind.EQUIANGULAR if a.equiangular else GridKind.GAUSSIAN)
    t = Truncation(a.trunc)
    psd = (1.0 + np.arange(t.K + 1)) ** (-a.slope)
    psd /= psd.sum()
    target = random_spectral(t, rng, psd)
    save_field(synthesize(SpectralField(t, target), grid), a.out)
    if a.partner:
        noise = random_spectral(t, rng, psd)
        partner = a.rho * target + np.sqrt(1.0 - a.rho**2) * noise
        if a.lowpass_k0:
            partner = partner * diag.lowpass_response(t.k_index, a.lowpass_k0)
        save_field(synthesize(SpectralField(t, partner), grid), a.partner)
    return 0


def cmd_analyze(a) -> int:
    f = load_field(a.input)
    write_spectral(analyze(f, _trunc_for(f, a.trunc)), a.output)
    return 0


def cmd_synth(a) -> int:
    s = read_spectral(a.input)
    grid = Grid(a.nlat, a.nlon, GridKind.EQUIANGULAR if a.equiangular else GridKind.GAUSSIAN)
    save_field(synthesize(s, grid), a.output)
    return 0


def cmd_spectrum(a) -> int:
    f = load_field(a.input)
    s = analyze(f, _trunc_for(f, a.trunc))
    p = diag.power(s.coeffs, s.trunc)
    _write_rows(a.out, ["k", "psd"], ((k, float(p[k])) for k in range(s.K + 1)))
    return 0


def cmd_compare(a) -> int:
    x, y = load_field(a.prediction), load_field(a.reference)
    t = _trunc_for(x, a.trunc)
    d = diag.diagnostics(analyze(x, t), analyze(y, t))
    rows = (
        (k, float(d.psd_x[k]), float(d.psd_y[k]), float(d.coherence[k]), float(d.amplitude_ratio[k]))
        for k in range(d.K + 1)
    )
    _write_rows(a.out, ["k", "psd_x", "psd_y", "coherence", "amplitude_ratio"], rows)
    if a.out:
        for mode in diag.ResolutionMode:
            k = diag.effective_resolution(d, mode, energy_threshold=a.energy_threshold)
            print(f"effective_resolution_{mode.value} {'none' if k is None else k}")
    return 0


def _load_dir(path: str, names: Sequence[str]) -> dict[str, GridField]:
    return {n: load_field(Path(path) / f"{n}.sgf") for n in names}


def cmd_loss(a) -> int:
    kind = L.LossKind(a.kind)
    if a.weights:
        w = L.VariableWeighting.load(a.weights)
        fx, fy = _load_dir(a.prediction, w.names), _load_dir(a.reference, w.names)
        trunc = None if kind is L.LossKind.MAE else _trunc_for(next(iter(fx.values())), a.trunc)
        print(f"total {_fmt(L.weighted_multivariable_loss(fx, fy, w, kind, trunc))}")
        return 0
    x, y = load_field(a.prediction), load_field(a.reference)
    if kind is L.LossKind.MAE:
        print(f"total {_fmt(L.mae(x, y))}")
        return 0
    t = _trunc_for(x, a.trunc)
    xs, ys = analyze(x, t), analyze(y, t)
    br = L.amse(xs, ys, a.coherence_weight) if kind is L.LossKind.AMSE else L.mse(xs, ys)
    print(f"total {_fmt(br.total)}")
    if a.out:
        _write_rows(
            a.out,
            ["k", "amplitude", "decoherence"],
            ((k, float(br.per_k_amplitude[k]), float(br.per_k_decoherence[k])) for k in range(t.K + 1)),
        )
    return 0


def gradcheck(trunc: int, seed: int, nlat: int, nlon: int, trials: int = 20, h: float = 1e-5) -> float:
    """Largest relative error of AMSE directional derivatives vs central differences."""
    from spectraloss.grid import make_gaussian_grid

    rng = np.random.default_rng(seed)
    grid = make_gaussian_grid(nlat, nlon)
    t = Truncation(trunc)
    worst = 0.0
    for _ in range(trials):
        x = GridField(grid, rng.standard_normal(grid.shape))
        y = GridField(grid, rng.standard_normal(grid.shape))
        d = rng.standard_normal(grid.shape)
        ys = analyze(y, t)
        g = L.amse_gradient(x, ys, t)

        def f(v):
            return L.amse(analyze(x.with_values(v), t), ys).total

        fd = (f(x.values + h * d) - f(x.values - h * d)) / (2.0 * h)
        an = float(np.sum(g * d))
        worst = max(worst, abs(an - fd) / max(abs(fd), 1e-300))
    return worst


def cmd_gradcheck(a) -> int:
    err = gradcheck(a.trunc, a.seed, a.nlat, a.nlon, a.trials, a.step)
    print(f"max_relative_error {err:.3e}")
    return 0 if err <= a.tolerance else 2


def cmd_filter(a) -> int:
    f = load_field(a.input)
    s = analyze(f, _trunc_for(f, a.trunc))
    out = diag.highpass(s, a.k0)
    if a.lowpass:
        out = SpectralField(s.trunc, s.coeffs - out.coeffs)
    save_field(synthesize(out, f.grid), a.output)
    return 0


def cmd_ensemble_score(a) -> int:
    truth = load_field(a.truth)
    members = [load_field(m) for m in a.members]
    e = ens.EnsembleSet(members, truth, valid_time=a.valid_time or "", lead_h=a.lead)
    series = ens.ScoreSeries((ens.score_ensemble(e, a.add_spread),))
    _emit_series(series, a.out)
    return 0


def _emit_series(series: ens.ScoreSeries, out: str | None) -> None:
    rows = []
    for r in series.rows:
        vt = r.valid_time.isoformat() if isinstance(r.valid_time, dt.datetime) else r.valid_time
        lead = "" if r.lead_h is None else _fmt(float(r.lead_h))
        rows.append([vt, lead, float(r.crps), float(r.ermse), float(r.ser), float(r.ubermse)])
    _write_rows(out, ["valid_time", "lead_h", *ens.SCORE_NAMES], rows)


def cmd_ensemble_lagged(a) -> int:
    archive = ens.scan_archive(a.root)
    analyses = None
    if a.analysis_root:
        analyses = lambda valid: _analysis_path(a.analysis_root, valid)  # noqa: E731
    res = ens.build_lagged_ensembles(archive, a.lead, a.window, a.stride, analyses)
    series = ens.score_ensembles(res.ensembles, a.add_spread)
    _emit_series(series, a.out)
    msg = f"ensembles {len(res.ensembles)} skipped {res.skipped}"
    if len(series):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ens.ClampWarning)
            agg = series.aggregate()
        msg += " " + " ".join(f"{k} {_fmt(v)}" for k, v in agg.items())
    print(msg, file=sys.stderr if not a.out else sys.stdout)
    return 0


def _analysis_path(root: str, valid: dt.datetime) -> Path | None:
    p = Path(root) / f"{valid.isoformat()}.sgf"
    return p if p.exists() else None


def _load_sample(path: str) -> np.ndarray:
    if path.endswith(".sgf") or path.endswith(".csv"):
        return load_field(path).values.ravel()
    return np.loadtxt(path, dtype=np.float64, ndmin=1).ravel()


def cmd_qq(a) -> int:
    res = qq(_load_sample(a.x), _load_sample(a.y), a.percentiles or DEFAULT_PERCENTILES)
    rows = zip(
        map(float, res.percentiles),
        map(float, res.x_quantiles),
        map(float, res.y_quantiles),
        map(float, res.band_low),
        map(float, res.band_high),
    )
    _write_rows(a.out, ["p", "x_quantile", "y_quantile", "band_low", "band_high"], rows)
    return 0


def cmd_klstudy(a) -> int:
    rhos = a.rho or [0.4]
    rows = [(o.rho, o.optimal_sigma_ratio, o.objective_value) for o in L.kl_ratio_curve(rhos)]
    _write_rows(a.out, ["rho", "optimal_ratio", "objective"], rows)
    return 0


def cmd_demo_train(a) -> int:
    spec = toy.SyntheticSpec(a.trunc, a.slope, a.rho, a.seed)
    traj = toy.train(spec, a.loss, a.steps, a.lr, a.schedule, a.batch, a.init_gain, a.eval_size, a.spectra)
    if a.out:
        toy.emit_fig2_analog(traj, a.out)
    g = traj.final_gains
    print(f"final_gain_mean {_fmt(float(g.mean()))} min {_fmt(float(g.min()))} max {_fmt(float(g.max()))}",
          file=sys.stdout if a.out else sys.stderr)
    if not a.out:
        toy.emit_fig2_analog(traj, sys.stdout)
    return 0


# --- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spectraloss", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def grid_args(sp, nlat=64, nlon=128):
        sp.add_argument("--nlat", type=int, default=nlat)
        sp.add_argument("--nlon", type=int, default=nlon)
        sp.add_argument("--equiangular", action="store_true", help="equiangular instead of Gaussian latitudes")

    s = sub.add_parser("gen", help="random band-limited field (and optional correlated partner)")
    s.add_argument("out")
    grid_args(s)
    s.add_argument("--trunc", type=int, default=42)
    s.add_argument("--slope", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--partner", help="also write a field correlated with the first")
    s.add_argument("--rho", type=float, default=0.7)
    s.add_argument("--lowpass-k0", type=float, help="smooth the partner with a 4th-order low-pass")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("analyze", help="gridded field -> SCF1 coefficients")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--trunc", type=int)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="SCF1 coefficients -> gridded field")
    s.add_argument("input")
    s.add_argument("output")
    grid_args(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("spectrum", help="power per total wavenumber")
    s.add_argument("input")
    s.add_argument("--trunc", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("compare", help="per-k diagnostics and effective resolution")
    s.add_argument("prediction")
    s.add_argument("reference")
    s.add_argument("--trunc", type=int)
    s.add_argument("--energy-threshold", type=float, default=diag.DEFAULT_ENERGY_THRESHOLD)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("loss", help="mse / amse / mae between two fields")
    s.add_argument("prediction", help="field file, or directory of <name>.sgf with --weights")
    s.add_argument("reference")
    s.add_argument("--kind", choices=[k.value for k in L.LossKind], default="amse")
    s.add_argument("--trunc", type=int)
    s.add_argument("--weights", help="lines of name,weight,level_weight,std")
    s.add_argument("--coherence-weight", type=float, default=1.0)
    s.add_argument("--out", help="per-k breakdown CSV")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("gradcheck", help="AMSE gradient vs central differences")
    s.add_argument("--trunc", type=int, default=10)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--nlat", type=int, default=16)
    s.add_argument("--nlon", type=int, default=32)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("filter", help="4th-order spectral high-pass (or its low-pass complement)")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--k0", type=float, default=diag.DEFAULT_HIGHPASS_K0)
    s.add_argument("--trunc", type=int)
    s.add_argument("--lowpass", action="store_true")
    s.set_defaults(func=cmd_filter)

    e = sub.add_parser("ensemble", help="ensemble scores")
    esub = e.add_subparsers(dest="ensemble_command", parser_class=_Parser)
    s = esub.add_parser("score", help="score one ensemble against a verifying field")
    s.add_argument("--truth", required=True)
    s.add_argument("--members", nargs="+", required=True)
    s.add_argument("--valid-time")
    s.add_argument("--lead", type=float)
    s.add_argument("--paper-sign", dest="add_spread", action="store_true", help="add, rather than subtract, the CRPS spread term")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ensemble_score)
    s = esub.add_parser("lagged", help="build and score lagged ensembles from an archive")
    s.add_argument("--root", required=True, help="directory of init_<ISO8601>/lead_<h>.sgf")
    s.add_argument("--lead", type=int, action="append", required=True, help="central lead in hours")
    s.add_argument("--window", type=int, default=9)
    s.add_argument("--stride", type=int, default=12)
    s.add_argument("--analysis-root", help="directory of <ISO8601>.sgf verifying fields")
    s.add_argument("--paper-sign", dest="add_spread", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ensemble_lagged)

    s = sub.add_parser("qq", help="quantile-quantile table with KS band")
    s.add_argument("x")
    s.add_argument("y")
    s.add_argument("--percentiles", type=float, nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_qq)

    s = sub.add_parser("klstudy", help="KL-optimal amplitude ratio vs correlation")
    s.add_argument("--rho", type=float, action="append")
    s.add_argument("--out")
    s.set_defaults(func=cmd_klstudy)

    d = sub.add_parser("demo", help="demonstrations")
    dsub = d.add_subparsers(dest="demo_command", parser_class=_Parser)
    s = dsub.add_parser("train", help="train the per-k gain model and emit a trajectory CSV")
    s.add_argument("--loss", choices=[k.value for k in L.LossKind], default="mse")
    s.add_argument("--trunc", type=int, default=42)
    s.add_argument("--slope", type=float, default=0.0)
    s.add_argument("--rho", type=float, help="uniform correlation; default exp(-k/K)")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float)
    s.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    s.add_argument("--init-gain", type=float, default=0.5)
    s.add_argument("--eval-size", type=int, default=4096)
    s.add_argument("--spectra", choices=["sample", "batch"], default="sample")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out")
    s.set_defaults(func=cmd_demo_train)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError(parser.format_usage() + "spectraloss: error: missing subcommand")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (SpectralLossError, OSError, ValueError) as exc:
        print(f"spectraloss: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
