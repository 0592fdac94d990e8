import csv
import json
from pathlib import Path

import pytest

from multibethe.cli import main
from multibethe.model import ModelSpec, figure_one_spec, regular_spec, save_spec

GOLDEN = Path(__file__).parent / "golden"


def shape(doc):
    """Nested key structure of a JSON document, with list items collapsed."""
    if isinstance(doc, dict):
        return {k: shape(v) for k, v in sorted(doc.items())}
    if isinstance(doc, list):
        return [shape(doc[0])] if doc else []
    return None


def golden(name):
    return json.loads((GOLDEN / name).read_text())


@pytest.fixture
def fig1(tmp_path):
    p = tmp_path / "fig1.json"
    save_spec(figure_one_spec(), p)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_validate(capsys, fig1, tmp_path):
    code, out = run(capsys, "validate", "--spec", fig1, "--out", str(tmp_path / "o"))
    doc = json.loads(out)
    assert code == 0 and doc["verdict"]
    assert shape(doc) == golden("validate.json")
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert shape(man) == golden("manifest.json")
    assert man["spec_sha256"] == figure_one_spec().digest()
    assert man["outputs"] == ["report.json"] and man["command"] == "validate"


def test_validate_infeasible(capsys, tmp_path):
    p = tmp_path / "split.json"
    save_spec(ModelSpec(2, [[2, 0], [0, 2]], ["1/2", "1/2"], 0.1, [0, 0]), p)
    code, out = run(capsys, "validate", "--spec", str(p))
    doc = json.loads(out)
    assert code == 3 and doc["violated_conditions"] == ["irreducibility"]
    p = tmp_path / "mass.json"
    save_spec(ModelSpec(2, [[1, 1], [1, 1]], ["1/3", "1/3"], 0.1, [0, 0]), p)
    code, out = run(capsys, "validate", "--spec", str(p))
    assert code == 3 and "i" in json.loads(out)["violated_conditions"]


def test_bad_spec_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"n": 2, "k": [[1, 1], [2, 1]], "alpha": ["1/2", "1/2"],
                             "beta": 0.1, "h": [0, 0]}))
    code, out = run(capsys, "validate", "--spec", str(p))
    assert code == 2 and "error" in json.loads(out)
    assert run(capsys, "solve", "--spec", str(tmp_path / "missing.json"))[0] == 2


def test_solve(capsys, fig1, tmp_path):
    code, out = run(capsys, "solve", "--spec", fig1, "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0 and doc["regime"] == "subcritical"
    assert shape(doc) == golden("solve.json")
    assert json.loads((tmp_path / "report.json").read_text()) == doc


def test_solve_plus_boundary_supercritical(capsys, tmp_path):
    p = tmp_path / "s.json"
    save_spec(figure_one_spec(beta=0.7, h=0.0), p)
    code, out = run(capsys, "solve", "--spec", str(p), "--boundary", "plus")
    doc = json.loads(out)
    assert code == 0 and doc["fixed_point"]["regime"] == "boundary-plus"
    assert all(m > 0.5 for m in doc["magnetization"])


def test_boundary_file(capsys, tmp_path):
    p = tmp_path / "s.json"
    save_spec(regular_spec(3, 0.2, 0.1), p)
    b = tmp_path / "b.json"
    b.write_text(json.dumps({"boundary": [0.5]}))
    code, out = run(capsys, "solve", "--spec", str(p), "--boundary", "file", "--boundary-file", str(b))
    assert code == 0
    assert json.loads(out)["magnetization"][0] == pytest.approx(0.1939666644448761, abs=1e-10)
    assert run(capsys, "solve", "--spec", str(p), "--boundary", "file")[0] == 2


@pytest.mark.parametrize("flag", [["--tol", "0"], ["--tol", "-1"], ["--seed", "-3"], ["--threads", "0"]])
def test_bad_flags_exit_2(capsys, fig1, flag):
    assert main(["solve", "--spec", fig1, *flag]) == 2


def test_sweep(capsys, tmp_path):
    p = tmp_path / "s.json"
    save_spec(figure_one_spec(beta=0.3, h=0.0), p)
    code, out = run(capsys, "sweep", "--spec", str(p), "--param", "beta", "--from", "0.3",
                    "--to", "0.7", "--points", "5", "--out", str(tmp_path / "o"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# schema_version=1 manifest=manifest.json beta_c=")
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == golden("sweep_columns.json")
    assert [r["side"] for r in rows] == ["below", "below", "below", "above", "above"]
    assert float(rows[0]["S_0"]) == 0.0
    assert float(rows[-1]["S_1"]) > 0.5
    assert (tmp_path / "o" / "sweep.csv").read_text() == out


def test_generate(capsys, fig1, tmp_path):
    code, out = run(capsys, "generate", "--spec", fig1, "--N", "40", "--seed", "5",
                    "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0 and doc["regular"] and doc["edges"] == 60
    assert shape(doc) == golden("generate.json")
    assert (tmp_path / "graph.txt").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == [5] and "graph.txt" in man["outputs"]


def test_generate_infeasible(capsys, fig1):
    assert run(capsys, "generate", "--spec", fig1, "--N", "21", "--seed", "1")[0] == 3


def test_generate_draws_seed(capsys, fig1):
    assert main(["generate", "--spec", fig1, "--N", "20"]) == 0
    err = capsys.readouterr().err
    assert err.startswith("seed: ")


@pytest.mark.parametrize("suite", ["trees", "inequalities", "spectral"])
def test_verify(capsys, suite, tmp_path):
    code, out = run(capsys, "verify", "--suite", suite, "--seed", "1", "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert doc["suites"][suite]["failed"] == 0
    doc["suites"] = {"spectral": doc["suites"].pop(suite)}
    assert shape(doc) == golden("verify.json")


def test_verify_failure_exit_5(capsys, monkeypatch):
    from multibethe import cli

    monkeypatch.setitem(cli.SUITES, "spectral", lambda seed: [{"kind": "x", "passed": False}])
    code, out = run(capsys, "verify", "--suite", "spectral", "--seed", "0")
    assert code == 5 and json.loads(out)["failures"][0]["suite"] == "spectral"


def test_unknown_command():
    assert main(["frobnicate"]) == 2
