import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conslaw_particles.cli import main, packaged_scenarios


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_run_stationary(tmp_path, capsys):
    out = tmp_path / "stat"
    assert main(["run", "example5_stationary", "--out", str(out)]) == 0
    header, data = read_csv(out / "bounds.csv")
    assert header == ["t", "S_rho", "R_rho", "TV_rho"]
    assert data.shape[0] == 7
    for col in (1, 2, 3):
        assert np.ptp(data[:, col]) < 1e-6
    h, traj = read_csv(out / "trajectory.csv")
    assert h[0] == "t" and h[1] == "rho_0" and len(h) == 103
    dens = sorted(p.name for p in out.glob("density_*.csv"))
    assert "density_0.csv" in dens and "density_1.5.csv" in dens
    meta = json.loads((out / "run.json").read_text())
    assert meta["scheme"] == "integrated" and meta["N"] == {"rho": 101}


def test_density_csv_layout(tmp_path):
    out = tmp_path / "d"
    assert main(["run", "rigid_transport", "--n", "10", "--out", str(out)]) == 0
    header, data = read_csv(out / "density_0.5.csv")
    assert header[0] == "t" and header[1] == "edge_0" and header[-1] == "value_10"
    assert data.shape == (1, 1 + 11 + 10)
    edges, values = data[0, 1:12], data[0, 12:]
    assert np.sum(values * np.diff(edges)) == pytest.approx(1.0)


def test_missing_wprime_for_sampled(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "scheme": "integrated", "t_span": [0, 1],
        "species": [{"V": "0", "mobility": "1", "N": 10,
                     "initial": {"kind": "uniform_blocks", "blocks": [[0, 1, 1]]}}],
        "interactions": {"rho->rho": {"W": "abs(x)"}},
    }))
    assert main(["run", str(cfg), "--scheme", "sampled", "--out", str(tmp_path / "o")]) == 1
    assert "Wprime" in capsys.readouterr().err
    assert main(["validate", str(cfg)]) == 0


def test_bad_files(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"species": [{"V": "x +"}]}')
    assert main(["validate", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "scheme": "integrated", "t_span": [0, 1],
        "species": [{"V": "x", "mobility": "1", "N": 4,
                     "initial": {"kind": "uniform_blocks", "blocks": [[0, 1, 1]]}}],
    }))
    assert main(["reference", str(cfg), "--L", "1.2", "--M", "40", "--times", "1"]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_two_species(tmp_path):
    out = tmp_path / "six"
    assert main(["run", "example6_crossing", "--n", "20", "--t-end", "0.5", "--out", str(out)]) == 0
    header, data = read_csv(out / "trajectory.csv")
    assert sum(h.startswith("rho1_") for h in header) == 21
    assert sum(h.startswith("rho2_") for h in header) == 21
    bh, _ = read_csv(out / "bounds.csv")
    assert bh == ["t", "S_rho1", "R_rho1", "TV_rho1", "S_rho2", "R_rho2", "TV_rho2"]
    assert list(out.glob("density_rho2_*.csv"))


def test_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["run", "example1_moving_well", "--n", "30", "--t-end", "1"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for name in ("trajectory.csv", "bounds.csv", "run.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_converge_and_compare(tmp_path, capsys):
    out = tmp_path / "conv.json"
    assert main(["converge", "rigid_transport", "--counts", "20", "40", "80", "--times", "1",
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["monotone"] and rep["fitted_order"] > 0.8
    assert main(["converge", "rigid_transport", "--counts", "20", "--times", "1"]) == 1
    capsys.readouterr()
    assert main(["compare", "example3_scheme_comparison", "--n", "10", "40", "--times", "0.5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["counts"] == [10, 40] and rep["velocity_ratio"] > 1


def test_reference_command(capsys):
    assert main(["reference", "rigid_transport", "--n", "50", "--L", "6", "--M", "300",
                 "--times", "0", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["gaps"][0] == 0.0 and rep["gaps"][1] < 0.1


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in packaged_scenarios():
        assert name in out


@pytest.mark.parametrize("name", sorted(packaged_scenarios()))
def test_packaged_scenarios_run(name, tmp_path):
    # shortened horizon and resolution keep the sweep fast
    assert main(["run", name, "--n", "24", "--t-end", "0.3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trajectory.csv").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "conslaw_particles", "validate", "example2_collapse"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ok" in res.stdout
