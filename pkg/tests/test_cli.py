import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import tilt_constraints
from polylr import gaussian_moments
from polylr.cli import dumps, main


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


def test_tilt_ok(tmp_path, capsys):
    assert run("tilt", "--mu", 0.6, "--out", tmp_path) == 0
    model = load(tmp_path / "model.json")
    np.testing.assert_allclose(model["xi"]["coeffs"], [0.9, 0.6, 0.1], atol=1e-8)
    assert (tmp_path / "density.csv").read_text().startswith("t,xi,density\n")
    assert "Optimal" in capsys.readouterr().out


def test_tilt_zero(tmp_path):
    assert run("tilt", "--mu", 0, "--out", tmp_path) == 0
    np.testing.assert_allclose(load(tmp_path / "model.json")["xi"]["coeffs"], [1, 0, 0],
                               atol=1e-8)


def test_tilt_infeasible(tmp_path, capsys):
    assert run("tilt", "--mu", 1.5, "--out", tmp_path) == 2
    assert "[-1, 1]" in capsys.readouterr().out


def test_tilt_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("tilt", "--mu", 0.3, "--out", a)
    run("tilt", "--mu", 0.3, "--out", b)
    for name in ("model.json", "problem.json", "solution.json", "density.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert run("tilt", "--out", tmp_path) == 1
    assert run("nosuch") == 1
    assert run() == 1


def _fit_files(tmp_path, mass=1.0):
    mom = tmp_path / "m.json"
    mom.write_text(json.dumps(gaussian_moments(4).to_json()))
    cons = tmp_path / "c.json"
    c = tilt_constraints(0.6).to_json()
    c["equalities"][0]["c"] = mass
    cons.write_text(json.dumps(c))
    dom = tmp_path / "d.json"
    dom.write_text(json.dumps({"type": "R"}))
    return mom, cons, dom


def test_fit_matches_tilt(tmp_path):
    mom, cons, dom = _fit_files(tmp_path)
    assert run("fit", "--moments", mom, "--constraints", cons, "--domain", dom,
               "--degree", 2, "--out", tmp_path / "f") == 0
    assert run("tilt", "--mu", 0.6, "--out", tmp_path / "t") == 0
    a = load(tmp_path / "f" / "model.json")["xi"]["coeffs"]
    b = load(tmp_path / "t" / "model.json")["xi"]["coeffs"]
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_fit_negative_mass_infeasible(tmp_path):
    mom, cons, dom = _fit_files(tmp_path, mass=-1.0)
    assert run("fit", "--moments", mom, "--constraints", cons, "--domain", dom,
               "--degree", 2, "--out", tmp_path / "f") == 2


def test_fit_malformed_json(tmp_path, capsys):
    mom, cons, dom = _fit_files(tmp_path)
    cons.write_text('{"equalities": [\n  {"f": }')
    assert run("fit", "--moments", mom, "--constraints", cons, "--domain", dom,
               "--degree", 2, "--out", tmp_path / "f") == 1
    assert "line 2" in capsys.readouterr().err


def test_fit_schema_error(tmp_path, capsys):
    mom, cons, dom = _fit_files(tmp_path)
    dom.write_text(json.dumps({"type": "sphere"}))
    assert run("fit", "--moments", mom, "--constraints", cons, "--domain", dom,
               "--degree", 2, "--out", tmp_path / "f") == 1


def test_certify(tmp_path, capsys):
    run("tilt", "--mu", 0.6, "--out", tmp_path)
    prob, sol = tmp_path / "problem.json", tmp_path / "solution.json"
    assert run("certify", "--solution", sol, "--problem", prob) == 0
    capsys.readouterr()

    s = load(sol)
    s["x"][0] += 1e-3
    bad = tmp_path / "bad_x.json"
    bad.write_text(json.dumps(s))
    assert run("certify", "--solution", bad, "--problem", prob) == 1
    assert "FAIL  primal_eq" in capsys.readouterr().out

    s = load(sol)
    s["grams"][0][0][0] = -1.0
    bad = tmp_path / "bad_g.json"
    bad.write_text(json.dumps(s))
    assert run("certify", "--solution", bad, "--problem", prob) == 1
    assert "FAIL  gram_psd" in capsys.readouterr().out


def test_kernel_two_point(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("R\n-0.1\n0.3\n")
    assert run("kernel", "--returns", csv, "--degree", 1, "--out", tmp_path) == 0
    assert load(tmp_path / "kernel.json")["hj_bound_linear"] == pytest.approx(0.5, abs=1e-9)


def test_kernel_mean_zero(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("R\n-0.1\n0.0\n0.1\n")
    assert run("kernel", "--returns", csv, "--out", tmp_path) == 0
    k = load(tmp_path / "kernel.json")
    np.testing.assert_allclose(k["kernel"]["xi"]["coeffs"], [1, 0, 0], atol=1e-8)
    assert k["hj_bound_plr"] == pytest.approx(0, abs=1e-6)


def test_kernel_assumption_error(tmp_path, capsys):
    csv = tmp_path / "r.csv"
    csv.write_text("R\n-0.1\n0.3\n")
    assert run("kernel", "--returns", csv, "--degree", 2, "--out", tmp_path) == 1
    assert "Assumption 1" in capsys.readouterr().err


def test_kernel_bad_csv(tmp_path, capsys):
    csv = tmp_path / "r.csv"
    csv.write_text("R\n0.1\nabc\n")
    assert run("kernel", "--returns", csv, "--out", tmp_path) == 1
    assert "line 3" in capsys.readouterr().err
    assert run("kernel", "--returns", tmp_path / "missing.csv", "--out", tmp_path) == 1


def test_bajd(tmp_path):
    assert run("bajd", "--delta", 2 / 12, "--paths", 5000, "--out", tmp_path) == 0
    s = load(tmp_path / "summary.json")
    assert s["fms_grid_min"] < 0
    assert s["plr_grid_min"] >= -1e-7
    header = (tmp_path / "density.csv").read_text().splitlines()[0]
    assert header == "t,plr_density,fms_density,mc_kde"


def test_bajd_existence_condition(tmp_path, capsys):
    assert run("bajd", "--sigma", 0.5, "--out", tmp_path) == 1
    assert "2*kappa*theta" in capsys.readouterr().err


def test_asym(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("asym", "--reps", 30, "--seed", 4, "--out", a) == 0
    assert run("asym", "--reps", 30, "--seed", 4, "--out", b) == 0
    for name in ("errors.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    s = load(a / "summary.json")
    assert "skewness" in s["coefficients"]["x0"]


def test_asym_single_rep(tmp_path):
    assert run("asym", "--reps", 1, "--out", tmp_path) == 0
    assert len((tmp_path / "errors.csv").read_text().splitlines()) == 2


def test_asym_bad_mu(tmp_path):
    assert run("asym", "--mu", 1.0, "--reps", 1, "--out", tmp_path) == 1


def test_dumps_format():
    text = dumps({"a": 0.1, "b": [1, float("inf")], "c": "x"})
    assert json.loads(text) == {"a": 0.1, "b": [1, None], "c": "x"}
    assert "0.10000000000000001" in text


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "polylr", "tilt", "--mu", "2", "--out",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "polylr", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("tilt", "fit", "bajd", "kernel", "asym", "certify"):
        assert sub in r.stdout
