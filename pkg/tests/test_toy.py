import numpy as np
import pytest

from spectraloss.diagnostics import cross, power
from spectraloss.errors import ParameterError, TrainingDivergedError
from spectraloss.loss import expected_single_mode_loss
from spectraloss.toy import (
    GainModel,
    SyntheticSpec,
    batch_loss_and_gain_gradient,
    emit_fig2_analog,
    expected_descent,
    trajectory_csv_text,
    finite_sample_amse_optimum,
    lr_at,
    sample_batch,
    sample_pair,
    train,
)


def test_spec_validation_and_profiles():
    s = SyntheticSpec(10, slope=2.0)
    assert s.psd.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(s.psd) < 0)
    np.testing.assert_allclose(s.rho_profile, np.exp(-np.arange(11) / 10))
    with pytest.raises(ParameterError):
        SyntheticSpec(5, rho=1.2)
    with pytest.raises(ParameterError):
        SyntheticSpec(5, slope=-1)
    with pytest.raises(ParameterError):
        SyntheticSpec(5, rho=(0.5, 0.5))


def test_perfect_predictability_pair():
    x, y = sample_pair(SyntheticSpec(8, rho=1.0, seed=4))
    np.testing.assert_array_equal(x.coeffs, y.coeffs)


def test_zero_rho_coherence_and_psd_ratio():
    K, n = 20, 500
    spec = SyntheticSpec(K, slope=1.0, rho=0.0)
    t = spec.trunc
    x, y = sample_batch(spec, np.random.default_rng(8), n)
    px, py, xy = (a.sum(axis=0) for a in (power(x, t), power(y, t), cross(x, y, t)))
    coh = xy / np.sqrt(px * py)
    k = np.arange(K + 1)
    assert np.all(np.abs(coh) <= 3 / np.sqrt(n * (2 * k + 1)))
    np.testing.assert_allclose(px / py, 1.0, atol=0.05 * 3)  # k = 0 has only n real draws
    assert np.all(np.abs(px[5:] / py[5:] - 1) <= 0.05)


def test_half_rho_coherence():
    spec = SyntheticSpec(15, rho=0.5)
    t = spec.trunc
    x, y = sample_batch(spec, np.random.default_rng(9), 2000)
    coh = cross(x, y, t).sum(0) / np.sqrt(power(x, t).sum(0) * power(y, t).sum(0))
    np.testing.assert_allclose(coh, 0.5, atol=0.05)


@pytest.mark.parametrize("kind", ["mse", "amse"])
def test_perfect_predictability_converges_to_one(kind):
    tr = train(SyntheticSpec(10, rho=1.0, seed=1), kind, steps=300)
    assert np.all(np.abs(tr.final_gains - 1.0) <= 1e-3)


def test_mse_converges_to_rho():
    tr = train(SyntheticSpec(20, rho=0.5, seed=3), "mse", steps=2000)
    assert abs(tr.final_gains.mean() - 0.5) <= 0.05
    assert np.max(np.abs(tr.amplitude_ratio[-1] - tr.coherence[-1])) <= 0.05


def test_amse_matches_finite_dof_oracle():
    # Per-sample AMSE sees 2k+1 real degrees of freedom per power estimate.
    tr = train(SyntheticSpec(20, rho=0.5, seed=3), "amse", steps=2000)
    g = tr.final_gains
    for k in range(0, 21, 4):
        assert abs(g[k] - finite_sample_amse_optimum(0.5, 2 * k + 1)) <= 0.03
    # k = 0 has one degree of freedom and its optimum sits just below rho.
    assert np.all(g[1:] > 0.5)


def test_pooled_amse_sharper_than_per_sample():
    spec = SyntheticSpec(20, rho=0.5, seed=3)
    per = train(spec, "amse", steps=1000).final_gains.mean()
    pooled = train(spec, "amse", steps=1000, spectra="batch").final_gains.mean()
    assert pooled > per
    assert pooled > 0.9


def test_finite_dof_oracle_tends_to_one():
    vals = [finite_sample_amse_optimum(0.5, d, n_draws=4000) for d in (1, 9, 85, 1344)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] > 0.95


@pytest.mark.parametrize("kind,spectra", [("mse", "sample"), ("mae", "sample"), ("amse", "sample"), ("amse", "batch")])
def test_gain_gradient_finite_difference(kind, spectra):
    spec = SyntheticSpec(6, rho=0.6)
    rng = np.random.default_rng(5)
    x, y = sample_batch(spec, rng, 8)
    m = GainModel(rng.uniform(0.3, 1.4, 7))
    _, g = batch_loss_and_gain_gradient(m, x, y, spec.trunc, kind, spectra)
    h = 1e-6
    for k in range(7):
        e = np.zeros(7)
        e[k] = h
        fp, _ = batch_loss_and_gain_gradient(GainModel(m.gains + e), x, y, spec.trunc, kind, spectra)
        fm, _ = batch_loss_and_gain_gradient(GainModel(m.gains - e), x, y, spec.trunc, kind, spectra)
        assert g[k] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-9)


def test_lr_schedule():
    assert lr_at(0, 100, 1.0, "cosine") == pytest.approx(1.0)
    assert lr_at(99, 100, 1.0, "cosine") == pytest.approx(5e-3, rel=1e-2)
    assert lr_at(50, 100, 0.3, "constant") == 0.3
    with pytest.raises(ParameterError):
        lr_at(0, 10, 1.0, "linear")


def test_divergence_aborts():
    with pytest.raises(TrainingDivergedError, match="gain at k="):
        train(SyntheticSpec(4, rho=0.5), "mse", steps=50, lr=1e3, schedule="constant")


def test_csv_rows_and_determinism(tmp_path):
    spec = SyntheticSpec(5, rho=0.5, seed=11)
    one = train(spec, "mse", steps=1, eval_size=64)
    lines = trajectory_csv_text(one).splitlines()
    assert lines[0] == "step,k,amplitude_ratio,coherence"
    assert len(lines) == 1 + 6
    a = train(spec, "amse", steps=20, eval_size=64)
    b = train(spec, "amse", steps=20, eval_size=64)
    emit_fig2_analog(a, tmp_path / "a.csv")
    emit_fig2_analog(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("kind", ["mse", "amse"])
@pytest.mark.parametrize("rho", [0.2, 0.5, 0.9])
def test_expected_descent_monotone(kind, rho):
    sig, loss = expected_descent(rho, kind, sigma0=0.1, lr=0.05, steps=300)
    assert np.all(np.diff(loss) <= 1e-15)
    assert sig[-1] == pytest.approx(rho if kind == "mse" else 1.0, abs=1e-3)
    # From above the kink too.
    sig2, loss2 = expected_descent(rho, kind, sigma0=1.8, lr=0.05, steps=300)
    assert np.all(np.diff(loss2) <= 1e-15)
    assert expected_single_mode_loss(sig2[-1], rho, kind) == pytest.approx(loss2[-1])
