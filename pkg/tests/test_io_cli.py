import json
import math

import numpy as np
import pytest

from degenlab import cli
from degenlab._io import dumps, write_csv


def test_dumps_is_deterministic_and_lossless():
    obj = {"b": np.float64(0.1), "a": [1, np.int64(2), 1 + 2j], "c": {"z": np.nan, "y": True}}
    text = dumps(obj)
    assert text == dumps(dict(reversed(list(obj.items()))))
    back = json.loads(text)
    assert back["b"] == 0.1 and back["a"] == [1, 2, [1.0, 2.0]]
    assert back["c"] == {"y": True, "z": None}
    assert text.index('"a"') < text.index('"b"')


def test_dumps_round_trips_floats():
    xs = [math.pi, 1e-300, -2.5e17, 1.0]
    assert json.loads(dumps(xs)) == xs
    assert "1.0" in dumps([1.0])


def test_csv_formatting(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [(0.1, True), (2, "x")])
    assert p.read_text() == "a,b\n0.10000000000000001,true\n2,x\n"


def _run(tmp_path, command, cfg, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    return cli.main([command, "--config", str(path), "--out", str(out), *extra]), out


def test_weight_command(tmp_path):
    code, out = _run(tmp_path, "weight", {"weight": "constant", "depth": 6})
    assert code == 0
    rep = json.loads((out / "weight_report.json").read_text())
    assert rep["profile"]["a2"] == pytest.approx(1.0)
    man = json.loads((out / "weight_manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 0


def test_qest_identity(tmp_path):
    code, out = _run(tmp_path, "qest", {"N": 64, "B": "identity", "probes": 32})
    assert code == 0
    rep = json.loads((out / "qest_report.json").read_text())
    assert rep["sup"] == pytest.approx(0.5, rel=0.02)
    assert (out / "qest_probes.csv").exists()


def test_reports_are_reproducible(tmp_path):
    cfg = {"kind": "dirichlet", "weight": "power", "A": "random", "N": 32, "export_t": [0, 0.5]}
    code1, out = _run(tmp_path, "bvp", cfg)
    first = {p.name: p.read_bytes() for p in out.iterdir() if "manifest" not in p.name}
    code2, out = _run(tmp_path, "bvp", cfg)
    second = {p.name: p.read_bytes() for p in out.iterdir() if "manifest" not in p.name}
    assert code1 == code2 == 0
    assert first == second and "bvp_solution.csv" in first


def test_seed_override_changes_random_inputs(tmp_path):
    cfg = {"weight": {"kind": "random-dyadic", "depth": 6}, "depth": 6}
    _, out = _run(tmp_path, "weight", cfg, "--seed", "1")
    a = (out / "weight_report.json").read_text()
    _, out = _run(tmp_path, "weight", cfg, "--seed", "2")
    assert (out / "weight_report.json").read_text() != a
    assert json.loads((out / "weight_manifest.json").read_text())["seed"] == 2


def test_malformed_json_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"N": 32,,}')
    assert cli.main(["spec", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "malformed JSON" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,field", [
    ({"N": "big"}, "N"),
    ({"N": 32, "colour": 1}, "colour"),
    ({"B": {"kind": "nope"}}, "B"),
    ({"command": "bvp"}, "command"),
])
def test_invalid_fields_are_named(tmp_path, capsys, cfg, field):
    code, _ = _run(tmp_path, "spec", cfg)
    assert code == 1
    assert f"'{field}'" in capsys.readouterr().err


def test_missing_required_and_negative_seed(tmp_path, capsys):
    code, _ = _run(tmp_path, "bvp", {"N": 16})
    assert code == 1 and "kind" in capsys.readouterr().err
    code, _ = _run(tmp_path, "weight", {}, "--seed", "-3")
    assert code == 1 and "'seed'" in capsys.readouterr().err


def test_precondition_failure_exits_2(tmp_path):
    cfg = {"N": 16, "B": {"kind": "constant", "matrix": [[1, 0], [0, -1]]}}
    code, out = _run(tmp_path, "spec", cfg)
    assert code == 2
    assert json.loads((out / "spec_manifest.json").read_text())["status"] != "ok"


def test_suite_subset(tmp_path):
    code, out = _run(tmp_path, "suite", {"profile": "smoke", "ids": [2, 4]})
    assert code == 0
    lines = (out / "suite_suite.csv").read_text().splitlines()
    assert lines[0] == "id,value,bound,pass" and len(lines) == 3


def test_csv_report_format(tmp_path):
    code, out = _run(tmp_path, "weight", {"weight": "power", "depth": 8, "format": "csv", "output": "pw"})
    assert code == 0
    rows = (out / "pw_report.csv").read_text().splitlines()
    assert rows[0] == "key,value" and any(r.startswith("profile.a2,") for r in rows)
