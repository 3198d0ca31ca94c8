import hashlib
import json

import numpy as np
import pytest

from coulomb_ot import io as cio
from coulomb_ot.cli import run


def digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def test_solve_outputs(tmp_path):
    assert run(["solve", "--spec", "uniform:n=40", "--self", "--out", str(tmp_path)]) == 0
    rows, cols, mass = cio.read_plan_csv(tmp_path / "plan.csv")
    assert len(rows) == 40 and mass.sum() == pytest.approx(1.0)
    rep = json.loads((tmp_path / "solve.json").read_text())
    assert rep["primal_cost"] == pytest.approx(2.0, rel=1e-2)
    assert "support_gap" in (tmp_path / "summary.txt").read_text()


def test_solve_from_files(tmp_path):
    cio.save_measure(tmp_path / "mu.json", cio.parse_spec("uniform:n=12"))
    cio.save_measure(tmp_path / "nu.json", cio.parse_spec("uniform:L=2:n=12"))
    out = tmp_path / "out"
    assert run(["solve", "--mu", str(tmp_path / "mu.json"), "--nu", str(tmp_path / "nu.json"),
                "--method", "entropic:eta=20", "--out", str(out)]) == 0
    assert json.loads((out / "solve.json").read_text())["method"].startswith("entropic")


def test_potentials(tmp_path):
    assert run(["potentials", "--spec", "uniform:n=40", "--self", "--out", str(tmp_path)]) == 0
    pots = json.loads((tmp_path / "potentials.json").read_text())
    assert len(pots["psi"]) == 40 and pots["cost"].startswith("modified")


def test_diagnose_deterministic(tmp_path):
    args = ["diagnose", "--spec", "uniform:n=60", "--self", "--max-points", "8", "--seed", "3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = digest(tmp_path / "a"), digest(tmp_path / "b")
    assert set(a) == {"plan.csv", "solve.json", "summary.txt", "potentials.json",
                      "diagnostics.json", "singular.csv", "scales.csv"}
    assert a == b


def test_verify_and_oracle(tmp_path, capsys):
    assert run(["verify", "--suite", "lemmas", "--spec", "uniform:n=60", "--self",
                "--out", str(tmp_path)]) == 0
    assert "failed: none" in capsys.readouterr().out
    assert run(["oracle", "--n", "4", "--trials", "5", "--out", str(tmp_path)]) == 0
    assert "5/5" in capsys.readouterr().out


def test_errors(tmp_path, capsys):
    assert run(["solve", "--spec", "uniform:n=10", "--out", str(tmp_path)]) == 1
    assert run(["solve", "--spec", "nope:n=3", "--self", "--out", str(tmp_path)]) == 1
    assert run(["solve", "--spec", "uniform:n=10", "--self", "--method", "simplex",
                "--out", str(tmp_path)]) == 1
    assert run(["verify", "--suite", "other", "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run(["bogus"])


def test_singular_csv_content(tmp_path):
    assert run(["diagnose", "--spec", "uniform:n=60", "--self", "--max-points", "4",
                "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "singular.csv").read_text().splitlines()
    idx = [int(line.split(",")[0]) for line in lines[1:]]
    assert {29, 30} <= set(idx)
    x = np.array([float(line.split(",")[1]) for line in lines[1:]])
    assert np.all(np.isfinite(x))
