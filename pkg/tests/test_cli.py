import datetime as dt
import subprocess
import sys

import numpy as np
import pytest

from spectraloss.cli import run
from spectraloss.ensemble import archive_path
from spectraloss.grid import GridField, make_gaussian_grid, read_field, write_field

SEED = ["--seed", "5"]


@pytest.fixture
def fields(tmp_path):
    a, b = tmp_path / "a.sgf", tmp_path / "b.sgf"
    assert run(["gen", str(a), "--nlat", "32", "--nlon", "64", "--trunc", "21", "--partner", str(b), "--rho", "0.6", *SEED]) == 0
    return a, b


def _lines(capsys):
    return capsys.readouterr().out.strip().splitlines()


def test_gradcheck(capsys):
    assert run(["gradcheck", "--trunc", "10", "--seed", "7"]) == 0
    out = _lines(capsys)[-1].split()
    assert out[0] == "max_relative_error" and float(out[1]) <= 1e-6


def test_loss_of_identical_fields_is_zero(fields, capsys):
    a, _ = fields
    assert run(["loss", "--kind", "amse", str(a), str(a)]) == 0
    assert abs(float(_lines(capsys)[-1].split()[1])) <= 1e-12


def test_loss_kinds_ordered(fields, capsys):
    a, b = fields
    vals = {}
    for kind in ("mse", "amse", "mae"):
        assert run(["loss", "--kind", kind, str(a), str(b)]) == 0
        vals[kind] = float(_lines(capsys)[-1].split()[1])
    assert vals["amse"] >= vals["mse"] > 0 and vals["mae"] > 0


def test_klstudy(capsys):
    assert run(["klstudy", "--rho", "0.4"]) == 0
    lines = _lines(capsys)
    assert lines[0] == "rho,optimal_ratio,objective"
    assert 0.64 <= float(lines[1].split(",")[1]) <= 0.68


def test_weights_directory_mode(tmp_path, capsys):
    g = make_gaussian_grid(16, 32)
    rng = np.random.default_rng(0)
    for side in ("p", "r"):
        (tmp_path / side).mkdir()
        for name in ("t", "u"):
            write_field(GridField(g, rng.standard_normal(g.shape)), tmp_path / side / f"{name}.sgf")
    (tmp_path / "w.txt").write_text("t,1,1,2\nu,0.5,1,1\n")
    assert run(["loss", str(tmp_path / "p"), str(tmp_path / "r"), "--kind", "mse", "--weights", str(tmp_path / "w.txt")]) == 0
    assert float(_lines(capsys)[-1].split()[1]) > 0
    (tmp_path / "w.txt").write_text("t,1,1,2\nq,1,1,1\n")
    assert run(["loss", str(tmp_path / "p"), str(tmp_path / "r"), "--weights", str(tmp_path / "w.txt")]) == 2


def test_transforms_and_filter(fields, tmp_path):
    a, _ = fields
    s, back, hp = tmp_path / "a.scf", tmp_path / "back.sgf", tmp_path / "hp.sgf"
    assert run(["analyze", str(a), str(s), "--trunc", "21"]) == 0
    assert run(["synth", str(s), str(back), "--nlat", "32", "--nlon", "64"]) == 0
    np.testing.assert_allclose(read_field(back).values, read_field(a).values, atol=1e-12)
    assert run(["filter", str(a), str(hp), "--k0", "5", "--trunc", "21"]) == 0
    lp = tmp_path / "lp.sgf"
    assert run(["filter", str(a), str(lp), "--k0", "5", "--trunc", "21", "--lowpass"]) == 0
    np.testing.assert_allclose(read_field(hp).values + read_field(lp).values, read_field(a).values, atol=1e-12)


def test_compare_reports_resolution(tmp_path, capsys):
    y, x = tmp_path / "y.sgf", tmp_path / "x.sgf"
    run(["gen", str(y), "--partner", str(x), "--rho", "1", "--lowpass-k0", "20", *SEED])
    assert run(["compare", str(x), str(y), "--out", str(tmp_path / "c.csv")]) == 0
    out = _lines(capsys)
    assert "effective_resolution_dissipation 13" in out
    assert "effective_resolution_noise none" in out
    assert (tmp_path / "c.csv").read_text().startswith("k,psd_x,psd_y,coherence,amplitude_ratio\n")


def _archive(root):
    g = make_gaussian_grid(8, 16)
    rng = np.random.default_rng(1)
    t0 = dt.datetime(2022, 3, 1)
    for i in range(12):
        for L in (0, 12, 24, 36, 48, 60, 72):
            p = archive_path(root, t0 + dt.timedelta(hours=12 * i), L)
            p.parent.mkdir(parents=True, exist_ok=True)
            write_field(GridField(g, rng.standard_normal(g.shape)), p)


def _commands(tmp_path, a, b):
    _archive(tmp_path / "arch")
    np.savetxt(tmp_path / "xs.txt", np.random.default_rng(2).standard_normal(300))
    np.savetxt(tmp_path / "ys.txt", np.random.default_rng(3).standard_normal(400))
    return {
        "gen": (["gen", "{out}.sgf", "--nlat", "16", "--nlon", "32", "--trunc", "10", *SEED], ".sgf"),
        "analyze": (["analyze", str(a), "{out}.scf"], ".scf"),
        "spectrum": (["spectrum", str(a), "--out", "{out}.csv"], ".csv"),
        "compare": (["compare", str(a), str(b), "--out", "{out}.csv"], ".csv"),
        "loss": (["loss", str(a), str(b), "--out", "{out}.csv"], ".csv"),
        "filter": (["filter", str(a), "{out}.sgf"], ".sgf"),
        "ensemble score": (
            ["ensemble", "score", "--truth", str(a), "--members", str(a), str(b), str(b), "--out", "{out}.csv"],
            ".csv",
        ),
        "ensemble lagged": (
            ["ensemble", "lagged", "--root", str(tmp_path / "arch"), "--lead", "48", "--window", "3", "--out", "{out}.csv"],
            ".csv",
        ),
        "qq": (["qq", str(tmp_path / "xs.txt"), str(tmp_path / "ys.txt"), "--out", "{out}.csv"], ".csv"),
        "klstudy": (["klstudy", "--rho", "0.2", "--rho", "0.4", "--out", "{out}.csv"], ".csv"),
        "demo train": (
            ["demo", "train", "--loss", "amse", "--trunc", "6", "--steps", "15", "--eval-size", "64", *SEED, "--out", "{out}.csv"],
            ".csv",
        ),
    }


def test_every_subcommand_is_deterministic(fields, tmp_path, capsys):
    a, b = fields
    for name, (argv, ext) in _commands(tmp_path, a, b).items():
        outs = []
        for rep in range(2):
            stem = str(tmp_path / f"{name.replace(' ', '_')}_{rep}")
            assert run([x.replace("{out}", stem) for x in argv]) == 0, name
            outs.append((tmp_path / f"{name.replace(' ', '_')}_{rep}{ext}").read_bytes())
        assert outs[0] == outs[1], name
        assert len(outs[0]) > 0


def test_lagged_counts_in_output(tmp_path, capsys):
    _archive(tmp_path / "arch")
    out = tmp_path / "s.csv"
    assert run(["ensemble", "lagged", "--root", str(tmp_path / "arch"), "--lead", "24", "--window", "3", "--out", str(out)]) == 0
    # Centres 1..10; the lead-0 analysis at c + 24h exists for c <= 9.
    assert _lines(capsys)[-1].startswith("ensembles 9 skipped 1")
    assert len(out.read_text().splitlines()) == 10


def test_csv_uses_round_trip_precision(capsys):
    run(["klstudy", "--rho", "0.4"])
    value = _lines(capsys)[1].split(",")[1]
    assert len(value.replace("0.", "", 1)) >= 15


def test_usage_errors_exit_1(capsys):
    assert run(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["loss"]) == 1
    assert run(["loss", "a", "b", "--kind", "huber"]) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.sgf"
    bad.write_bytes(b"XXXX" + bytes(16))
    assert run(["spectrum", str(bad)]) == 2
    assert "offset 0" in capsys.readouterr().err
    assert run(["spectrum", str(tmp_path / "missing.sgf")]) == 2
    assert run(["klstudy", "--rho", "1.0"]) == 2
    assert run(["gen", str(tmp_path / "g.sgf"), "--trunc", "80"]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "spectraloss", "klstudy", "--rho", "0.4"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("rho,optimal_ratio,objective")
    r = subprocess.run([sys.executable, "-m", "spectraloss", "nope"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr
