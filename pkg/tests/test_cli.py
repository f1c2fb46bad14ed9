from __future__ import annotations

import csv
import json

import pytest

from wmplab.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_wmp_example(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert main(["wmp", "--domain", "cube", "--degree", "1", "--levels", "2,4", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 2
    assert all(abs(float(r["quantity"]) - 1) <= 1e-8 for r in rows)
    man = json.loads((tmp_path / "w.csv.manifest.json").read_text())
    assert man["config"]["study"] == "wmp" and str(out) in man["outputs"]


def test_mesh_example(tmp_path, capsys):
    m = tmp_path / "m.tet"
    assert main(["mesh", "--domain", "cube", "--n", "2", "--out", str(m)]) == 0
    capsys.readouterr()
    assert main(["mesh", "--info", str(m)]) == 0
    text = capsys.readouterr().out
    assert "vertices: 27" in text and "tets: 48" in text


def test_mesh_audit(capsys):
    assert main(["mesh", "--n", "2", "--audit", "--degree", "2"]) == 0
    assert "m-matrix pattern (degree 2): False" in capsys.readouterr().out


def test_converge_example(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["converge", "--degree", "2", "--levels", "2,4,8", "--csv", str(out)]) == 0
    last = [r for r in _rows(out) if r["name"] == "l2_order"][-1]
    assert abs(float(last["quantity"]) - 3) <= 0.25


def test_json_and_csv_payloads_identical(tmp_path, capsys):
    c, j = tmp_path / "g.csv", tmp_path / "g.json"
    assert main(["green", "--levels", "2,4", "--csv", str(c), "--json", str(j)]) == 0
    rows = _rows(c)
    jrows = json.loads(j.read_text())["rows"]
    assert len(rows) == len(jrows)
    for r, q in zip(rows, jrows):
        assert float(r["quantity"]) == q["quantity"] and r["name"] == q["name"]
        assert int(r["dofs"]) == q["dofs"] and float(r["h"]) == q["h"]


def test_replay_reproduces(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["ritz", "--degree", "2", "--levels", "2,4", "--family", "fixed_smooth",
                 "--out", str(out), "--threads", "2"]) == 0
    capsys.readouterr()
    assert main(["replay", str(tmp_path / "r.csv.manifest.json"), "--threads", "1"]) == 0
    assert "identical" in capsys.readouterr().out


def test_seed_does_not_change_results(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["wmp", "--levels", "2,3", "--seed", "1", "--out", str(a)]) == 0
    assert main(["wmp", "--levels", "2,3", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()


def test_threads_env_fallback(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("WMPLAB_THREADS", "2")
    out = tmp_path / "t.csv"
    assert main(["wmp", "--degree", "2", "--levels", "2,3", "--out", str(out)]) == 0
    man = json.loads((tmp_path / "t.csv.manifest.json").read_text())
    assert man["config"]["threads"] == 2


@pytest.mark.parametrize("argv", [["wmp", "--bogus"], ["wmp", "--levels", "4,2"], ["frobnicate"],
                                  ["mesh"], ["wmp", "--quad-degree", "5"]])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_missing_file_exits_one(tmp_path, capsys):
    assert main(["mesh", "--info", str(tmp_path / "nope.tet")]) == 1


def test_numerical_failure_exits_two(capsys):
    assert main(["wmp", "--levels", "1,2"]) == 2
    assert "n=1" in capsys.readouterr().err


def test_common_flags_accepted_everywhere(tmp_path, capsys):
    for cmd in (["blayer"], ["extend", "--family", "zero"], ["green"]):
        assert main(cmd + ["--levels", "2", "--tol", "1e-10", "--quad-degree", "6",
                           "--sample-order", "3", "--seed", "3"]) == 0
