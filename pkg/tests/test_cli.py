import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conicon import problem as problem_io
from conicon.cli import main
from conicon.formulations import moment_matrix, rel_inner_conic
from conicon.panel import PanelData, pooled_ols, within_demean, write_panel_csv
from conicon.problem import ConicProblem, QuadCone


def run(*argv):
    return main([str(a) for a in argv])


def pythagoras_problem():
    # min r  s.t. v = (3, 4), ||v|| <= r
    return ConicProblem(c=[1.0, 0.0, 0.0], A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                        blc=[3.0, 4.0], buc=[3.0, 4.0], cones=[QuadCone([0, 1, 2])])


def two_group_csv(path, seed=0, n=12, T=8):
    rng = np.random.default_rng(seed)
    truth = np.array([[0.0, 0.0], [10 / math.sqrt(2), 10 / math.sqrt(2)]])
    g = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, T, 2))
    y = np.einsum("itp,ip->it", x, truth[g]) + 0.01 * rng.normal(size=(n, T))
    write_panel_csv(PanelData(y, x), path)
    return g + 1


def read_labels(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["unit", "group"]
    return np.array([int(r[1]) for r in rows[1:]])


def test_solve_known_optimum(tmp_path, capsys):
    f = tmp_path / "pyth.json"
    problem_io.save(pythagoras_problem(), f)
    assert run("--out-dir", tmp_path, "solve", f) == 0
    assert capsys.readouterr().out.startswith("OPTIMAL")
    doc = json.loads((tmp_path / "pyth.solution.json").read_text())
    assert doc["status"] == "OPTIMAL" and doc["objective"] == pytest.approx(5.0, abs=1e-7)


def test_solve_infeasible_rel_inner(tmp_path):
    H = moment_matrix(np.random.default_rng(0).normal(size=(5, 8)))
    f = tmp_path / "rel0.json"
    problem_io.save(rel_inner_conic(H, 0.0), f)
    assert run("solve", f, "--out-dir", tmp_path) == 2
    assert json.loads((tmp_path / "rel0.solution.json").read_text())["status"] == "PRIMAL_INFEASIBLE"


def test_solve_truncated_json(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text(problem_io.dumps(pythagoras_problem())[:40])
    assert run("solve", f) == 1
    assert "error" in capsys.readouterr().err


def test_solve_field_path_error(tmp_path, capsys):
    f = tmp_path / "bad.json"
    doc = json.loads(problem_io.dumps(pythagoras_problem()))
    doc["c"] = "oops"
    f.write_text(json.dumps(doc))
    assert run("solve", f) == 1
    assert "c" in capsys.readouterr().err


def test_classo_k1_is_pooled_ols(tmp_path):
    f = tmp_path / "panel.csv"
    two_group_csv(f, seed=1)
    assert run("classo", f, "--K", 1, "--lambda", 0.5, "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "panel.solution.json").read_text())
    from conicon.panel import read_panel_csv
    P = within_demean(read_panel_csv(f)[0])
    assert np.max(np.abs(np.array(doc["alpha_post"][0]) - pooled_ols(P))) <= 1e-6


def test_classo_labels_match_truth(tmp_path):
    f = tmp_path / "panel.csv"
    truth = two_group_csv(f, seed=2)
    assert run("classo", f, "--K", 2, "--out-dir", tmp_path) == 0
    lab = read_labels(tmp_path / "panel.labels.csv")
    assert np.array_equal(lab, truth) or np.array_equal(3 - lab, truth)


def test_classo_ic_writes_table(tmp_path):
    f = tmp_path / "panel.csv"
    two_group_csv(f, seed=3)
    assert run("classo", f, "--ic", "--K-grid", "1,2", "--out-dir", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "panel.summary.csv")))
    assert [r["K"] for r in rows] == ["1", "2"]
    assert len(json.loads((tmp_path / "panel.solution.json").read_text())["alpha"]) == 2


def test_classo_unbalanced_panel(tmp_path, capsys):
    f = tmp_path / "panel.csv"
    two_group_csv(f, seed=4)
    lines = f.read_text().splitlines()
    f.write_text("\n".join(lines[:-1]) + "\n")
    assert run("classo", f) == 1
    assert "panel not balanced" in capsys.readouterr().err


def test_tune(tmp_path, capsys):
    f = tmp_path / "panel.csv"
    two_group_csv(f, seed=5)
    assert run("tune", f, "--K-grid", "1,2,3", "--lambda-grid", "0.1", "--out-dir", tmp_path) == 0
    assert capsys.readouterr().out.startswith("OK K=2")


def _iv_csv(path, n, m, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, m))
    x = z[:, :1] + 0.5 * rng.normal(size=(n, 1))
    y = x[:, 0] + 0.5 * rng.normal(size=n)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["y", "x1"] + [f"z{j + 1}" for j in range(m)])
        for i in range(n):
            wr.writerow([y[i], x[i, 0], *z[i]])


def test_rel_command(tmp_path):
    f = tmp_path / "iv.csv"
    _iv_csv(f, 60, 3)
    assert run("rel", f, "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "iv.solution.json").read_text())
    assert abs(doc["beta_hat"][0] - 1.0) < 0.3
    assert abs(sum(doc["pi"]) - 1) <= 1e-6


def test_rel_command_infeasible(tmp_path):
    f = tmp_path / "iv.csv"
    _iv_csv(f, 6, 9)
    assert run("rel", f, "--lambda", 0) == 2


def _study_file(tmp_path, R):
    f = tmp_path / "mini.json"
    f.write_text(json.dumps({"name": "mini", "estimator": "classo",
                             "cells": [{"n": 15, "T": 5}], "R": R, "lambda": None}))
    return f


def test_study_empty(tmp_path, capsys):
    assert run("study", _study_file(tmp_path, 0)) == 1
    assert "empty study" in capsys.readouterr().err
    assert run("study", _study_file(tmp_path, 2), "--R", 0) == 1


def test_study_workers_byte_identical(tmp_path):
    f = _study_file(tmp_path, 3)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("study", f, "--workers", 1, "--out-dir", a) == 0
    assert run("study", f, "--workers", 2, "--out-dir", b) == 0
    for suffix in ("summary.csv", "summary.json"):
        assert (a / f"mini.{suffix}").read_bytes() == (b / f"mini.{suffix}").read_bytes()
    header = (a / "mini.summary.csv").read_text().splitlines()[0]
    assert header == "estimator,n,T,R,failures,rmse,rmse_penalized,correct_ratio"


def test_usage_errors():
    assert run() == 1
    assert run("frobnicate") == 1
    assert run("solve", "/nonexistent/problem.json") == 1


def test_module_entry_point(tmp_path):
    f = tmp_path / "pyth.json"
    problem_io.save(pythagoras_problem(), f)
    out = subprocess.run([sys.executable, "-m", "conicon", "solve", str(f), "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("OPTIMAL")
