import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.io

from mpmg import cli


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, command, cfg, *extra, out="out"):
    path = write_cfg(tmp_path, cfg) if isinstance(cfg, dict) else cfg
    code = cli.main([command, "--config", str(path),
                     "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


CARRIER = {"problem": {"name": "poisson1d", "size": 63},
           "precision": {"kind": "uniform",
                         "triple": {"high": 53, "work": 53, "low": 53}},
           "tol": 1e-12, "max_iter": 60}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_carrier_precision(tmp_path):
    code, out = run(tmp_path, "solve", CARRIER, "--trace")
    assert code == 0
    rows = read_csv(out / "history.csv")
    assert float(rows[-1]["rel_energy_error"]) <= 1e-10
    rep = json.loads((out / "report.json").read_text())
    assert rep["result"]["converged"] is True
    first = json.loads((out / "trace.jsonl").read_text().splitlines()[0])
    assert {"cycle", "j", "p", "rhs_norm"} <= set(first)


def test_solve_reruns_are_bitwise_identical(tmp_path):
    cfg = {**CARRIER, "precision": {"kind": "uniform",
                                    "triple": {"high": 53, "work": 24,
                                               "low": 11}},
           "rhs": "random", "tol": None}
    cfg.pop("tol")
    _, a = run(tmp_path, "solve", cfg, out="a")
    _, b = run(tmp_path, "solve", cfg, out="b")
    for name in ("history.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, c = run(tmp_path, "solve", cfg, "--seed", "7", out="c")
    assert (a / "history.csv").read_bytes() != (c / "history.csv").read_bytes()


def test_missing_config_exits_1(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", tmp_path / "nope.json")
    assert code == 1
    assert "cannot read config" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {**CARRIER, "bogus": 1},
    {"problem": {"name": "poisson1d"}},
    {**CARRIER, "smoother": "sor"},
    {**CARRIER, "precision": {"triple": {"low": 60}}},
])
def test_invalid_config_exits_1(tmp_path, capsys, cfg):
    code, _ = run(tmp_path, "solve", cfg)
    assert code == 1
    assert "invalid config" in capsys.readouterr().err


def test_bad_json_and_bad_hierarchy_exit_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(tmp_path, "solve", p)[0] == 1
    cfg = {**CARRIER, "problem": {"name": "poisson1d", "size": 7},
           "levels": 9}
    assert run(tmp_path, "solve", cfg)[0] == 1


def test_bounds_violated_ladder_exits_2(tmp_path, capsys):
    cfg = {"problem": {"name": "poisson1d", "size": 63}, "levels": 6,
           "precision": {"kind": "kappa-matched",
                         "triple": {"high": 53, "work": 24, "low": 11}},
           "n_rhs": 3}
    code, out = run(tmp_path, "bounds", cfg)
    assert code == 2
    assert "vartheta > 1" in capsys.readouterr().err
    assert (out / "bounds.json").exists()


def test_bounds_table(tmp_path, capsys):
    cfg = {"problem": {"name": "poisson1d", "size": 63}, "levels": 4,
           "precision": {"kind": "uniform",
                         "triple": {"high": 53, "work": 24, "low": 24}},
           "n_rhs": 5}
    code, out = run(tmp_path, "bounds", cfg)
    assert code == 0
    rows = {r["quantity"]: r for r in read_csv(out / "table.csv")}
    for q in ("tg_factor", "v_factor"):
        assert float(rows[q]["measured"]) <= float(rows[q]["predicted"])
    data = json.loads((out / "bounds.json").read_text())
    assert data["delta_rho_v"] > 0
    assert "predicted" in capsys.readouterr().out


def test_sweep_single_point_and_threads(tmp_path, monkeypatch):
    cfg = {"problem": {"name": "poisson1d", "size": 255},
           "sweep": {"axis": "size", "values": [255]}}
    code, out = run(tmp_path, "sweep", cfg, out="one")
    assert code == 0
    rows = read_csv(out / "table.csv")
    assert len(rows) == 1 and list(rows[0]) == cli.SWEEP_COLUMNS
    assert float(rows[0]["floor"]) > 0
    cfg["sweep"] = {"axis": "precision", "field": "work", "values": [20, 24]}
    monkeypatch.setenv("MPMG_THREADS", "2")
    code, par = run(tmp_path, "sweep", cfg, out="par")
    assert code == 0
    monkeypatch.setenv("MPMG_THREADS", "1")
    code, ser = run(tmp_path, "sweep", cfg, out="ser")
    assert (par / "table.csv").read_bytes() == (ser / "table.csv").read_bytes()
    monkeypatch.setenv("MPMG_THREADS", "x")
    assert run(tmp_path, "sweep", cfg, out="bad")[0] == 1


def test_sweep_requires_section(tmp_path):
    assert run(tmp_path, "sweep", CARRIER)[0] == 1


def test_fmg_single_level(tmp_path):
    cfg = {**CARRIER, "levels": 1, "N": 5}
    code, out = run(tmp_path, "fmg", cfg)
    assert code == 0
    rows = read_csv(out / "table.csv")
    assert len(rows) == 1


def test_fmg_default_N_passes(tmp_path):
    cfg = {"problem": {"name": "poisson1d", "size": 63}, "levels": 6}
    code, out = run(tmp_path, "fmg", cfg)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["v_cycles"] == 6 * rep["N"]
    assert all(r["pass"] for r in rep["levels"])


def test_gen_writes_matrix_market(tmp_path):
    cfg = {"problem": {"name": "poisson1d", "size": 15}, "levels": 3}
    code, out = run(tmp_path, "gen", cfg)
    assert code == 0
    A3 = scipy.io.mmread(out / "A_3.mtx").toarray()
    P3 = scipy.io.mmread(out / "P_3.mtx").toarray()
    A2 = scipy.io.mmread(out / "A_2.mtx").toarray()
    assert A3.shape == (15, 15) and P3.shape == (15, 7)
    np.testing.assert_allclose(P3.T @ A3 @ P3, A2, rtol=0, atol=1e-12)
    assert not (out / "P_1.mtx").exists()
    b3 = np.loadtxt(out / "b_3.txt")
    np.testing.assert_allclose(P3.T @ b3, np.loadtxt(out / "b_2.txt"),
                               atol=1e-12)


def test_console_script_usage_error():
    res = subprocess.run([sys.executable, "-m", "mpmg.cli", "solve"],
                         capture_output=True, text=True)
    assert res.returncode == 1


def test_sweep_trends(tmp_path):
    cfg = {"problem": {"name": "poisson1d", "size": 255},
           "sweep": {"axis": "precision", "field": "work",
                     "values": [11, 17, 24]}}
    code, out = run(tmp_path, "sweep", cfg, out="prec")
    assert code == 0
    floors = [float(r["floor"]) for r in read_csv(out / "table.csv")]
    for (a, b), dp in zip(zip(floors, floors[1:]), (6, 7)):
        assert 0.5 * 2**dp <= a / b <= 2 * 2**dp
    cfg["sweep"] = {"axis": "size", "values": [63, 255, 1023]}
    code, out = run(tmp_path, "sweep", cfg, out="size")
    slope = json.loads((out / "report.json").read_text())[
        "slope_log_floor_vs_log_kappa"]
    assert 0.4 <= slope <= 0.6
