import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rfdressed import cli
from rfdressed.output import read_table

ROOT = Path(__file__).resolve().parents[1]
MU_OVER_HBAR = 9.274009994e-24 / 1.054571817e-34


def base_config(points=2, **extra):
    cfg = {
        "static_field": {"type": "ioffe_pritchard", "G": "1 T/m", "B_I": "1 uT"},
        "drive": [{"omega": "150 kHz", "rabi": "9.274e4 rad/s", "polarization": "sigma+"}],
        "truncation": {"p1": 3, "auto_raise": False},
        "grid": {"x": {"start": "0 um", "stop": "30 um", "points": points}},
    }
    cfg.update(extra)
    return cfg


def write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def run(*args):
    return cli.main([str(a) for a in args])


def test_smoke_two_points(tmp_path, capsys):
    p = write(tmp_path, base_config())
    out = tmp_path / "out"
    assert run("potential", "--config", p, "--out", out) == 0
    printed = capsys.readouterr().out.split()
    assert str(out / "potential.csv") in printed
    header = (out / "potential.csv").read_text().splitlines()[0]
    assert header == "x_m,potential_rad_s,potential_Hz"
    cols, data = read_table(out / "potential.csv")
    assert data.shape == (2, 3)
    assert np.allclose(data[:, 2] * 2 * math.pi, data[:, 1], rtol=1e-15)
    side = json.loads((out / "potential.json").read_text())
    assert side["resolved_config"]["truncation"]["p1"] == 3
    assert side["resolved_config"]["drive"][0]["omega"].endswith("rad/s")
    assert (out / "potential_summary.json").exists()


def test_output_is_deterministic(tmp_path):
    p = write(tmp_path, base_config(points=40))
    assert run("potential", "--config", p, "--out", tmp_path / "a") == 0
    assert run("potential", "--config", p, "--out", tmp_path / "b", "--threads", 2) == 0
    a = (tmp_path / "a" / "potential.csv").read_bytes()
    b = (tmp_path / "b" / "potential.csv").read_bytes()
    assert a == b


def test_rerun_from_sidecar(tmp_path):
    p = write(tmp_path, base_config(points=25))
    assert run("potential", "--config", p, "--out", tmp_path / "a") == 0
    side = tmp_path / "a" / "potential.json"
    assert run("potential", "--config", side, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "potential.csv").read_bytes() == \
        (tmp_path / "b" / "potential.csv").read_bytes()


def test_binary_format_matches_csv(tmp_path):
    p = write(tmp_path, base_config(points=30))
    assert run("potential", "--config", p, "--out", tmp_path / "c") == 0
    assert run("potential", "--config", p, "--out", tmp_path / "b", "--format", "bin") == 0
    _, c = read_table(tmp_path / "c" / "potential.csv")
    cols, b = read_table(tmp_path / "b" / "potential.bin")
    assert cols == ["x_m", "potential_rad_s", "potential_Hz"]
    assert np.array_equal(b, c)
    assert (tmp_path / "b" / "potential.bin").stat().st_size == 30 * 3 * 8


@pytest.mark.parametrize("mutate, key", [
    (lambda c: c["drive"][0].__setitem__("omega", "150000"), "drive.0.omega"),
    (lambda c: c.__setitem__("colour", "blue"), "colour"),
    (lambda c: c.pop("grid"), "grid"),
    (lambda c: c["static_field"].__setitem__("G", "1 furlong"), "static_field.G"),
    (lambda c: c["truncation"].__setitem__("p1", -1), "truncation.p1"),
])
def test_config_errors_exit_2(tmp_path, capsys, mutate, key):
    cfg = base_config()
    mutate(cfg)
    p = write(tmp_path, cfg)
    assert run("potential", "--config", p, "--out", tmp_path / "o") == 2
    assert key in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unreadable_config_exit_2(tmp_path, capsys):
    assert run("potential", "--config", tmp_path / "missing.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "grid": {\n    "x": [1,,2]\n  }\n}\n')
    assert run("potential", "--config", bad) == 2
    assert "line 3" in capsys.readouterr().err


def test_bad_threads_exit_2(tmp_path):
    p = write(tmp_path, base_config())
    assert run("potential", "--config", p, "--threads", 0) == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        cli.main(["transmogrify", "--config", "x.json"])
    assert e.value.code == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    # an absurd magneton overflows the Larmor frequency
    cfg = base_config(constants={"mu_B": "1e300 J/T"})
    p = write(tmp_path, cfg)
    assert run("potential", "--config", p, "--out", tmp_path / "o") == 3
    assert "non-finite" in capsys.readouterr().err


def test_gpe_numerical_failure_exit_3(tmp_path, monkeypatch):
    from rfdressed import gpe

    def boom(*a, **k):
        raise gpe.GPENumericalError("non-finite wavefunction at step 7", step=7)

    monkeypatch.setitem(cli.RUNNERS, "gpe", boom)
    p = write(tmp_path, base_config())
    assert run("gpe", "--config", p) == 3


def test_compare_needs_1d(tmp_path):
    cfg = base_config()
    cfg["drive"] = [{"omega": "300 kHz", "b_pi": "8 uT"}]
    cfg["grid"]["y"] = {"start": "-1 um", "stop": "1 um", "points": 3}
    cfg["model"] = "floquet"
    p = write(tmp_path, cfg)
    assert run("compare", "--config", p) == 2
    assert run("spectrum", "--config", p) == 2


def test_gpe_needs_block(tmp_path):
    p = write(tmp_path, base_config())
    assert run("gpe", "--config", p) == 2


def test_gpe_without_ring_minimum_exit_2(tmp_path, capsys):
    # read as rad/s the tones lie below the trap-bottom Larmor frequency
    out = tmp_path / "out"
    code = run("gpe", "--config", ROOT / "configs" / "ring_transfer_rads.json", "--out", out)
    assert code == 2
    assert "annular minimum" in capsys.readouterr().err
    assert not out.exists()


def two_tone(rabi="9.274e4 rad/s", points=7):
    cfg = base_config(points=points)
    cfg["drive"] = [{"omega": "150 kHz", "rabi": rabi}, {"omega": "190 kHz", "rabi": rabi}]
    cfg["truncation"] = {"p1": 2, "p2": 3, "auto_raise": False}
    return cfg


def test_spectrum_shape(tmp_path):
    p = write(tmp_path, two_tone())
    assert run("spectrum", "--config", p, "--out", tmp_path / "s") == 0
    cols, data = read_table(tmp_path / "s" / "spectrum.csv")
    dim = 2 * (2 * 2 + 1) * (2 * 3 + 1)
    assert data.shape == (7, 1 + dim)
    assert cols[1] == "e0000_rad_s" and cols[-1] == f"e{dim - 1:04d}_rad_s"
    assert np.all(np.diff(data[:, 1:], axis=1) >= 0)


def test_spectrum_uncoupled_is_bare_ladder(tmp_path):
    p = write(tmp_path, two_tone(rabi="0 rad/s", points=5))
    assert run("spectrum", "--config", p, "--out", tmp_path / "s") == 0
    _, data = read_table(tmp_path / "s" / "spectrum.csv")
    w1, w2 = 2 * math.pi * 150e3, 2 * math.pi * 190e3
    wr = w1 + w2
    x = data[:, 0]
    L = MU_OVER_HBAR * np.sqrt(x ** 2 + 1e-12)
    for i in range(x.size):
        bare = np.sort([s * L[i] / 2 + n1 * w1 + n2 * wr
                        for s in (1, -1) for n1 in range(-2, 3) for n2 in range(-3, 4)])
        assert np.allclose(data[i, 1:], bare, rtol=0, atol=1e-8 * wr)


def test_compare_columns_and_summary(tmp_path):
    cfg = two_tone(points=60)
    cfg["model"] = "both"
    p = write(tmp_path, cfg)
    assert run("compare", "--config", p, "--out", tmp_path / "c") == 0
    cols, data = read_table(tmp_path / "c" / "compare.csv")
    assert cols == ["x_m", "floquet_rad_s", "piecewise_rad_s", "difference_rad_s",
                    "floquet_gap_rad_s", "piecewise_gap_rad_s", "piecewise_segment_index",
                    "piecewise_masked_flag"]
    assert np.allclose(data[:, 3], data[:, 2] - data[:, 1])
    summ = json.loads((tmp_path / "c" / "compare_summary.json").read_text())["diagnostics"]
    for k in ("max_abs_difference_away_relative", "piecewise_jump_to_median",
              "floquet_max_to_median", "floquet_gap_minima_count", "piecewise_gap_minima_count"):
        assert k in summ


def test_potential_both_models(tmp_path):
    cfg = two_tone(points=20)
    cfg["model"] = "both"
    p = write(tmp_path, cfg)
    assert run("potential", "--config", p, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "potential_floquet.csv").exists()
    assert (tmp_path / "o" / "potential_piecewise.csv").exists()


def test_potential_2d_row_order(tmp_path):
    cfg = base_config()
    cfg["drive"] = [{"omega": "300 kHz", "b_pi": "8 uT"}]
    cfg["grid"] = {"x": {"start": "-2 um", "stop": "2 um", "points": 3},
                   "y": {"start": "-1 um", "stop": "1 um", "points": 2}}
    cfg["truncation"] = {"p1": 2, "auto_raise": False}
    p = write(tmp_path, cfg)
    assert run("potential", "--config", p, "--out", tmp_path / "o") == 0
    cols, data = read_table(tmp_path / "o" / "potential.csv")
    assert cols == ["x_m", "y_m", "potential_rad_s", "potential_Hz"]
    assert np.allclose(data[:, 0] * 1e6, [-2, -2, 0, 0, 2, 2])
    assert np.allclose(data[:, 1] * 1e6, [-1, 1] * 3)


def small_gpe_config():
    cfg = json.loads((ROOT / "configs" / "ring_transfer_hz.json").read_text())
    cfg["gpe"].update({"points": 64, "duration": "2 us", "dt": "0.1 us", "ramp": "1 us",
                       "snapshots": ["0 us", "1 us", "2 us"], "relax_steps": 20,
                       "healing_points": 2.0, "winding_radii": ["2.6 um"]})
    cfg["truncation"] = {"p1": 3, "p2": 3, "auto_raise": False}
    return cfg


def test_gpe_smoke(tmp_path):
    p = write(tmp_path, small_gpe_config())
    # two points per healing length is rejected before any evolution
    assert run("gpe", "--config", p, "--out", tmp_path / "x") == 2
    cfg = small_gpe_config()
    cfg["gpe"]["healing_points"] = 8.0
    p = write(tmp_path, cfg)
    assert run("gpe", "--config", p, "--out", tmp_path / "g") == 0
    out = tmp_path / "g"
    names = sorted(f.name for f in out.glob("snapshot_*.csv"))
    assert names == ["snapshot_0000.csv", "snapshot_0001.csv", "snapshot_0002.csv"]
    cols, data = read_table(out / "snapshot_0002.csv")
    assert cols == ["x_m", "y_m", "psi_re_per_m", "psi_im_per_m", "density_per_m2"]
    dx = 12e-6 / 64
    assert data[:, 4].sum() * dx * dx == pytest.approx(1.0, abs=1e-10)
    meta = json.loads((out / "snapshot_0001.json").read_text())["diagnostics"]["snapshot"]
    assert meta["step"] == 10 and meta["winding"]["2.6e-06"] == 1
    summ = json.loads((out / "gpe_summary.json").read_text())["diagnostics"]
    assert summ["points_per_healing_length"] >= 8.0
    assert (out / "gpe_potential.csv").exists()


def test_console_script_exit_code(tmp_path):
    p = write(tmp_path, base_config())
    r = subprocess.run([sys.executable, "-m", "rfdressed.cli", "potential", "--config", str(p),
                        "--out", str(tmp_path / "o"), "--format", "bin"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "o" / "potential.bin").exists()
    bad = write(tmp_path, {"grid": {}}, "bad.json")
    r = subprocess.run([sys.executable, "-m", "rfdressed.cli", "spectrum", "--config", str(bad)],
                       capture_output=True, text=True)
    assert r.returncode == 2


def test_commensurate_detection():
    from rfdressed.runs import commensurate

    assert commensurate((1.0, 2.0)) and commensurate((3.0, 4.0))
    # degenerate only far beyond the truncation
    assert not commensurate((15.0, 19.0)) and not commensurate((15.0, 17.0))
    assert commensurate((15.0, 17.0), max_order=40)
    assert not commensurate((1.0, math.sqrt(2.0))) and not commensurate((1.0,))
