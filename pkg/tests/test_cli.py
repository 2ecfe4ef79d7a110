import json
import math
import os
import subprocess
import sys

import pytest
import yaml

from levy_liquidation.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DOMAIN, EXIT_OK, main

VG_MODEL = {"kind": "vg_linearised", "theta": -0.002, "rho": 0.02, "eta": 0.6, "s_tilde": 100.0}
POWER = {"kind": "power", "beta": 4.7e-5, "gamma": 0.6}


def write_cfg(tmp_path, **sections):
    cfg = {"model": VG_MODEL, "impact": POWER, "solve": {"A": [1e-5], "y0": 2e4, "y_grid_points": 200, "n_times": 50}}
    cfg.update(sections)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run(cmd, cfg, out, *extra):
    return main([cmd, "--config", cfg, "--out", str(out), *extra])


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_solve_outputs(tmp_path):
    cfg = write_cfg(tmp_path, output={"volume_time": True})
    assert run("solve", cfg, tmp_path / "o") == EXIT_OK
    raw = read(tmp_path / "o" / "trajectory_A1e-05.csv")
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "t,Y,xi"
    t, y, xi = (float(v) for v in lines[1].split(","))
    assert t == 0.0 and y == 2e4 and xi > 0
    # full precision, locale-independent
    assert all(v == format(float(v), ".17g") for line in lines[1:] for v in line.split(","))
    summary = json.loads(read(tmp_path / "o" / "summary_A1e-05.json"))
    assert set(summary) == {"tau", "value", "termination", "time_to_40pct", "time_to_90pct"}
    assert summary["termination"] == "finite"
    assert (tmp_path / "o" / "units.json").exists()


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, simulate={"A": 1e-4, "y0": 2e3, "n_paths": 2000, "dilations": [0.8]})
    for d in ("a", "b"):
        assert run("solve", cfg, tmp_path / d) == EXIT_OK
        assert run("simulate", cfg, tmp_path / d, "--seed", "7") == EXIT_OK
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for n in names:
        assert read(tmp_path / "a" / n) == read(tmp_path / "b" / n), n


def test_simulate_threads_and_seed(tmp_path):
    cfg = write_cfg(tmp_path, simulate={"A": 1e-4, "y0": 2e3, "n_paths": 40000, "dilations": []})
    assert run("simulate", cfg, tmp_path / "a", "--seed", "3", "--threads", "1") == EXIT_OK
    assert run("simulate", cfg, tmp_path / "b", "--seed", "3", "--threads", "3") == EXIT_OK
    assert run("simulate", cfg, tmp_path / "c", "--seed", "4") == EXIT_OK
    a, b, c = (read(tmp_path / d / "simulation.json") for d in "abc")
    assert a == b and a != c


def test_compare_metadata_and_gap_growth(tmp_path):
    cfg = write_cfg(tmp_path, solve={"A": [1e-6, 1e-5, 1e-4], "y0": 2e4, "y_grid_points": 200, "n_times": 100})
    assert run("compare", cfg, tmp_path / "o") == EXIT_OK
    meta = json.loads(read(tmp_path / "o" / "compare.json"))
    assert meta["sigma_tilde"] == pytest.approx(0.02, abs=1e-3)
    g = [meta["gaps"][k]["max_gap"] for k in ("A1e-06", "A1e-05", "A0.0001")]
    assert g[0] < g[1] < g[2]
    assert read(tmp_path / "o" / "compare_A1e-05.csv").startswith(b"t,Y_model,Y_reference\n")


def test_identity_compare_has_zero_gap(tmp_path):
    model = dict(VG_MODEL, kind="bm_matched")
    cfg = write_cfg(tmp_path, model=model)
    assert run("compare", cfg, tmp_path / "o") == EXIT_OK
    meta = json.loads(read(tmp_path / "o" / "compare.json"))
    assert meta["gaps"]["A1e-05"]["max_gap"] == 0.0


def test_derive_impact(tmp_path):
    cfg = write_cfg(tmp_path, derive={"x_min": 1.0, "x_max": 1e4, "points": 5})
    assert run("derive-impact", cfg, tmp_path / "o") == EXIT_OK
    rep = json.loads(read(tmp_path / "o" / "derive_impact.json"))
    assert rep["A1e-05"]["gap_over_y0"] <= 1e-4
    assert rep["A1e-05"]["assumptions_ok"] is True, rep
    lines = read(tmp_path / "o" / "derived_impact_A1e-05.csv").decode().splitlines()
    assert lines[0] == "x,F_B,F_L" and len(lines) == 6


def test_validate_brownian(tmp_path):
    model = {"kind": "brownian", "mu": 0.0, "sigma": 0.02}
    cfg = write_cfg(
        tmp_path,
        model=model,
        impact={"kind": "power", "beta": 4.7e-5, "gamma": 1.0},
        solve={"A": [1e-5], "y0": 1e4},
        validate={"hjb_points": 5, "oracle_steps": 200},
    )
    assert run("validate", cfg, tmp_path / "o") == EXIT_OK
    rep = json.loads(read(tmp_path / "o" / "validate.json"))
    assert rep["ok"] is True


def test_validate_reports_failed_check(tmp_path):
    cfg = write_cfg(
        tmp_path,
        model={"kind": "brownian", "mu": 0.0, "sigma": 0.02},
        solve={"A": [1e-5], "y0": 1e4},
        validate={"hjb_points": 3, "oracle_steps": 20, "oracle_rtol": 1e-12},
    )
    assert run("validate", cfg, tmp_path / "o") == EXIT_CHECK_FAILED


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write_cfg(tmp_path, extra={"x": 1})
    assert run("solve", bad, tmp_path / "o") == EXIT_CONFIG
    p = tmp_path / "typo.yaml"
    p.write_text(yaml.safe_dump({"model": dict(VG_MODEL, thetaa=1), "impact": POWER, "solve": {"A": 1e-5, "y0": 1.0}}))
    assert run("solve", str(p), tmp_path / "o") == EXIT_CONFIG
    assert "thetaa" in capsys.readouterr().err
    p.write_text("model: [unclosed")
    assert run("solve", str(p), tmp_path / "o") == EXIT_CONFIG
    assert run("solve", str(tmp_path / "missing.yaml"), tmp_path / "o") == EXIT_CONFIG
    p.write_text(yaml.safe_dump({"model": VG_MODEL, "impact": POWER, "solve": {"A": "abc", "y0": 1.0}}))
    assert run("solve", str(p), tmp_path / "o") == EXIT_CONFIG


def test_domain_errors_exit_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path, model={"kind": "brownian", "mu": 0.5, "sigma": 0.02})
    assert run("solve", cfg, tmp_path / "o") == EXIT_DOMAIN
    assert capsys.readouterr().err.startswith("error:")
    cfg = write_cfg(tmp_path, model={"kind": "brownian", "mu": 0.0, "sigma": 0.0})
    assert run("solve", cfg, tmp_path / "o") == EXIT_DOMAIN
    cfg = write_cfg(tmp_path, impact={"kind": "power", "beta": -1.0, "gamma": 0.6})
    assert run("solve", cfg, tmp_path / "o") == EXIT_DOMAIN


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "levy_liquidation", "solve", "--config", cfg, "--out", str(tmp_path / "o")], capture_output=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "levy_liquidation", "frobnicate", "--config", cfg], capture_output=True)
    assert bad.returncode == 2


def test_shipped_config_parses():
    from levy_liquidation.cli import load_config

    here = os.path.dirname(__file__)
    cfg = load_config(os.path.join(here, "..", "configs", "vg_power.yaml"))
    assert cfg.A_values == [1e-6, 1e-5, 1e-4]
    assert math.isclose(cfg.y0, 2e5)
