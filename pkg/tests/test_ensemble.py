import datetime as dt
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectraloss.ensemble import (
    ArchiveError,
    ClampWarning,
    DateScore,
    EnsembleSet,
    ScoreSeries,
    archive_path,
    bootstrap_significance,
    build_lagged_ensembles,
    ensemble_mse,
    ensemble_spread,
    ermse,
    fair_crps,
    mean_abs_error,
    scan_archive,
    score_ensemble,
    score_ensembles,
    ser,
    ub_ermse,
    unbiased_ensemble_mse,
)
from spectraloss.errors import ParameterError, ShapeError, UndefinedScoreError
from spectraloss.grid import GridField, make_equiangular_grid, make_gaussian_grid, write_field

SMALL = make_gaussian_grid(4, 8)


def _const_ens(values, truth, grid=SMALL):
    return EnsembleSet([np.full(grid.shape, v) for v in values], GridField(grid, np.full(grid.shape, truth)))


def _random_ens(rng, n=5, grid=SMALL, **kw):
    return EnsembleSet(rng.standard_normal((n, *grid.shape)), GridField(grid, rng.standard_normal(grid.shape)), **kw)


def test_crps_hand_examples():
    assert fair_crps(_const_ens([0.0, 2.0], 1.0)) == pytest.approx(0.0, abs=1e-15)
    assert fair_crps(_const_ens([1.0, 1.0, 1.0], 1.0)) == 0.0
    # Adding the spread term instead gives 1 + 1.
    assert fair_crps(_const_ens([0.0, 2.0], 1.0), add_spread=True) == pytest.approx(2.0, abs=1e-15)


def test_rmse_spread_hand_example():
    e = _const_ens([0.0, 2.0], 0.0)
    assert ermse(e) == pytest.approx(1.0, abs=1e-15)
    assert ensemble_spread(e) == pytest.approx(2.0, abs=1e-15)
    assert ser(e) == pytest.approx(math.sqrt(2.0), abs=1e-15)
    assert ub_ermse(e) == pytest.approx(0.0, abs=1e-7)


def test_perfect_ensemble():
    e = _const_ens([3.0, 3.0], 3.0)
    assert ermse(e) == 0 and ub_ermse(e) == 0
    with pytest.raises(UndefinedScoreError):
        ser(e)


def test_too_few_members_and_shape():
    with pytest.raises(ParameterError):
        _const_ens([1.0], 0.0)
    with pytest.raises(ShapeError):
        EnsembleSet(np.zeros((2, 3, 3)), GridField(SMALL, np.zeros(SMALL.shape)))


def test_negative_ub_clamps_with_warning():
    e = _const_ens([0.0, 2.0], 1.0)
    assert unbiased_ensemble_mse(e) == pytest.approx(-1.0)
    with pytest.warns(ClampWarning):
        assert ub_ermse(e) == 0.0


def test_pairwise_term_against_brute_force(rng):
    e = _random_ens(rng, n=7)
    m = e.members
    brute = np.abs(m[:, None] - m[None, :]).sum(axis=(0, 1)) / (2 * 7 * 6)
    skill = np.mean(np.abs(m - e.verification.values), axis=0)
    ref = float(np.sum(SMALL.area_weights * (skill - brute)))
    assert fair_crps(e) == pytest.approx(ref, rel=1e-12)


def test_crps_gaussian_monte_carlo():
    rng = np.random.default_rng(7)
    grid = make_gaussian_grid(8, 16)
    e = EnsembleSet(rng.standard_normal((1000, *grid.shape)), GridField(grid, np.zeros(grid.shape)))
    # Brute-force oracle on a handful of points: direct double sum over members.
    for i, j in [(0, 0), (3, 7), (7, 15)]:
        x = e.members[:, i, j]
        direct = np.mean(np.abs(x)) - np.abs(x[:, None] - x[None, :]).sum() / (2 * 1000 * 999)
        sorted_form = np.mean(np.abs(x)) - 2 * np.sum((2 * np.arange(1, 1001) - 1001) * np.sort(x)) / (2 * 1000 * 999)
        assert direct == pytest.approx(sorted_form, rel=1e-10)
    analytic = (math.sqrt(2) - 1) / math.sqrt(math.pi)
    assert fair_crps(e) == pytest.approx(analytic, rel=0.02)


def test_emse_bias_identity_monte_carlo():
    rng = np.random.default_rng(11)
    grid = make_equiangular_grid(250, 400)
    mu, sigma, n = 0.5, 1.0, 9
    members = mu + sigma * rng.standard_normal((n, *grid.shape))
    e = EnsembleSet(members, GridField(grid, np.zeros(grid.shape)))
    w = grid.area_weights
    err2 = e.mean**2
    ub = err2 - np.var(members, axis=0, ddof=1) / n
    for pointwise, value, expected in [
        (err2, ensemble_mse(e), mu**2 + sigma**2 / n),
        (ub, unbiased_ensemble_mse(e), mu**2),
    ]:
        se = math.sqrt(float(np.sum(w**2 * (pointwise - value) ** 2)))
        assert abs(value - expected) <= 3 * se


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.floats(-50, 50), st.integers(0, 7))
def test_invariants(seed, n, shift, roll):
    rng = np.random.default_rng(seed)
    e = _random_ens(rng, n=n)
    assert fair_crps(e) <= mean_abs_error(e) + 1e-12
    assert unbiased_ensemble_mse(e) + ensemble_spread(e) / n == pytest.approx(ensemble_mse(e), rel=1e-12, abs=1e-14)
    shifted = EnsembleSet(e.members + shift, e.verification.with_values(e.verification.values + shift))
    assert ser(shifted) == pytest.approx(ser(e), rel=1e-7)
    rolled = EnsembleSet(np.roll(e.members, roll, axis=2), e.verification.with_values(np.roll(e.verification.values, roll, axis=1)))
    a, b = score_ensemble(e), score_ensemble(rolled)
    for f in ("crps", "emse", "spread", "ub_emse"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), rel=1e-12, abs=1e-15)
    s = score_ensemble(e)
    assert s.ubermse**2 <= s.ermse**2 + 1e-12


def _series(values, shift=0.0):
    return ScoreSeries(
        tuple(DateScore(i, 24.0, c + shift, e + shift, 1.0, e + shift - 0.1) for i, (c, e) in enumerate(values))
    )


def test_aggregation_order():
    s = ScoreSeries((DateScore(0, 0, 1.0, 1.0, 4.0, 0.5), DateScore(1, 0, 3.0, 9.0, 1.0, 8.5)))
    agg = s.aggregate()
    assert agg["crps"] == 2.0
    assert agg["ermse"] == pytest.approx(math.sqrt(5.0))
    assert agg["ser"] == pytest.approx(math.sqrt((4.0 + 1.0 / 9.0) / 2))
    assert agg["ubermse"] == pytest.approx(math.sqrt(4.5))


def test_aggregate_clamp_warns():
    s = ScoreSeries((DateScore(0, 0, 1.0, 1.0, 4.0, -0.5),))
    with pytest.warns(ClampWarning):
        assert s.aggregate()["ubermse"] == 0.0


def test_bootstrap():
    rng = np.random.default_rng(3)
    vals = list(zip(rng.uniform(1, 1.1, 60), rng.uniform(2, 2.1, 60)))
    a = _series(vals)
    assert not any(bootstrap_significance(a, a).values())
    sd = 0.05
    flags = bootstrap_significance(a, _series(vals, shift=10 * sd))
    assert flags["crps"] and flags["ermse"]
    assert flags == bootstrap_significance(a, _series(vals, shift=10 * sd))
    with pytest.raises(ShapeError):
        bootstrap_significance(a, _series(vals[:-1]))
    with pytest.raises(ParameterError):
        bootstrap_significance(a, a, resamples=10)


T0 = dt.datetime(2022, 1, 1)
STEP = dt.timedelta(hours=12)


def _fake_archive(n_init, leads, missing=()):
    arch = {}
    for i in range(n_init):
        for L in leads:
            key = (T0 + i * STEP, L)
            if key not in missing:
                arch[key] = f"{i}:{L}"
    return arch


def _reader(path):
    i, L = map(int, str(path).split(":"))
    return GridField(SMALL, np.full(SMALL.shape, 100.0 * i + L))


def _truth(valid):
    return "0:0"


def test_lagged_single_window():
    lead = 96
    # Nine inits, each holding only the lead that reaches the shared valid time.
    arch = {(T0 + j * STEP, lead + 48 - 12 * j): f"{j}:{lead + 48 - 12 * j}" for j in range(9)}
    res = build_lagged_ensembles(arch, lead, analyses=_truth, reader=_reader)
    assert len(res.ensembles) == 1 and res.skipped == 0
    e = res.ensembles[0]
    assert e.size == 9
    assert e.valid_time == T0 + 4 * STEP + dt.timedelta(hours=lead)
    assert e.lead_h == lead
    assert e.member_lags == (48.0, 36.0, 24.0, 12.0, 0.0, -12.0, -24.0, -36.0, -48.0)


def test_lagged_missing_member_skips():
    lead = 96
    arch = {(T0 + j * STEP, lead + 48 - 12 * j): f"{j}:{lead + 48 - 12 * j}" for j in range(9)}
    del arch[(T0 + 2 * STEP, lead + 24)]
    arch[(T0 + 2 * STEP, 0)] = "2:0"  # keep the init span intact
    res = build_lagged_ensembles(arch, lead, analyses=_truth, reader=_reader)
    assert len(res.ensembles) == 0 and res.skipped == 1


def test_lagged_sliding_count():
    leads = list(range(0, 241, 12))
    res = build_lagged_ensembles(_fake_archive(20, leads), 120, analyses=_truth, reader=_reader)
    assert len(res.ensembles) == 20 - 9 + 1
    assert res.skipped == 0
    assert all(e.size == 9 for e in res.ensembles)


def test_lagged_member_leads():
    res = build_lagged_ensembles(_fake_archive(9, range(0, 241, 12)), 120, analyses=_truth, reader=_reader)
    m = res.ensembles[0].members[:, 0, 0]
    # init index j carries lead 120 + 48 - 12 j
    np.testing.assert_array_equal(m, [100 * j + 168 - 12 * j for j in range(9)])


def test_lagged_window_validation():
    with pytest.raises(ParameterError):
        build_lagged_ensembles({}, 24, window=4)


def test_archive_on_disk(tmp_path, rng):
    grid = make_gaussian_grid(4, 8)
    for i in range(20):
        for L in (0, 48, 60, 72, 84, 96, 108, 120, 132, 144):
            p = archive_path(tmp_path, T0 + i * STEP, L)
            p.parent.mkdir(exist_ok=True)
            write_field(GridField(grid, rng.standard_normal(grid.shape)), p)
    arch = scan_archive(tmp_path)
    assert len(arch) == 200
    # Centres are inits 4..15; the lead-0 analysis at c + 96h exists only up to c = 11.
    res = build_lagged_ensembles(arch, 96)
    assert len(res.ensembles) == 8 and res.skipped == 4
    series = score_ensembles(res.ensembles, threads=2)
    assert series.n_date == 8
    out = tmp_path / "s.csv"
    series.write_csv(out)
    assert out.read_text().splitlines()[0] == "valid_time,lead_h,crps,ermse,ser,ubermse"
    (archive_path(tmp_path, T0 + 3 * STEP, 108)).write_bytes(b"junk")
    with pytest.raises(ArchiveError, match="member init="):
        build_lagged_ensembles(scan_archive(tmp_path), 96)


def test_threaded_scores_match(rng):
    ens = [_random_ens(rng, valid_time=i) for i in range(6)]
    assert score_ensembles(ens, threads=1) == score_ensembles(ens, threads=3)
