import json
import math

import pytest

from oukl import cli

ANTI3 = [[0.0, -1.0, 2.0], [1.0, 0.0, -0.5], [-2.0, 0.5, 0.0]]


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, cfg, *extra):
    out = tmp_path / "report.json"
    code = cli.main(["--config", write(tmp_path, cfg), "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_recurrence_rotation_passes(tmp_path):
    code, rep = run(tmp_path, {"seed": 0, "suite": "recurrence", "model": {"N": 2, "B": [[0, -1], [1, 0]]},
                               "params": {"expected": "recurrent"}})
    assert code == cli.EXIT_OK and rep["pass"]
    verdict = [r for r in rep["records"] if r["name"] == "verdict"][0]
    assert verdict["value"] == "recurrent"
    assert all(r["anchor"] for r in rep["records"])
    assert rep["version"] and rep["config"]["model"]["N"] == 2


def test_wrong_expectation_exits_one(tmp_path):
    code, rep = run(tmp_path, {"seed": 0, "suite": "recurrence", "model": {"B": [[0, -1], [1, 0]]},
                               "params": {"expected": "transient"}})
    assert code == cli.EXIT_FAIL and not rep["pass"]


def test_nilpotent_flagged_not_hr(tmp_path):
    code, rep = run(tmp_path, {"seed": 0, "suite": "recurrence", "model": {"B": [[0, 1], [0, 0]]}})
    hr = [r for r in rep["records"] if r["name"] == "hr_classify"][0]
    assert hr["value"] is False and code == cli.EXIT_OK


@pytest.mark.parametrize(
    "cfg, field",
    [
        ({"seed": 0, "suite": "recurrence", "model": {"B": [[0, -1, 3], [1, 0]]}}, "model.B"),
        ({"seed": 0, "suite": "recurrence", "model": {"B": [[0, 1, 2], [1, 0, 3]]}}, "model.B"),
        ({"seed": 0, "suite": "recurrence", "model": {"B": [["a"]]}}, "model.B"),
        ({"seed": 0, "suite": "recurrence", "model": {"N": 3, "B": [[0]]}}, "model.N"),
        ({"seed": 0, "suite": "recurrence", "model": {"B": [[0]], "Q": [[-1]]}}, "model.Q"),
        ({"suite": "recurrence", "model": {"B": [[0]]}}, "seed"),
        ({"seed": -1, "suite": "recurrence", "model": {"B": [[0]]}}, "seed"),
        ({"seed": 0, "suite": "nope", "model": {"B": [[0]]}}, "suite"),
        ({"seed": 0, "suite": "harnack", "model": {"B": [[1, 0], [0, 1]]}}, "model.B"),
        ({"seed": 0, "suite": "simulate", "model": {"B": [[0]]}, "mc": {"step": -1}}, "mc.step"),
        ({"seed": 0, "suite": "liouville", "model": {"B": [[0, -1], [1, 0]]}}, "model.B"),
    ],
)
def test_config_errors(tmp_path, capsys, cfg, field):
    code, _ = run(tmp_path, cfg)
    assert code == cli.EXIT_CONFIG
    diag = json.loads(capsys.readouterr().err)
    assert diag["error"] == "config" and diag["field"] == field


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["--config", str(tmp_path / "bad.json")]) == cli.EXIT_CONFIG


def test_internal_error_exit_code(tmp_path, capsys, monkeypatch):
    def boom(cfg):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "recurrence", boom)
    code, _ = run(tmp_path, {"seed": 0, "suite": "recurrence", "model": {"B": [[0]]}})
    assert code == cli.EXIT_INTERNAL
    assert json.loads(capsys.readouterr().err)["type"] == "RuntimeError"


def test_seed_and_suite_overrides(tmp_path):
    cfg = {"suite": "simulate", "model": {"B": [[0]]}}
    code, rep = run(tmp_path, cfg, "--seed", "5", "--suite", "recurrence")
    assert code == cli.EXIT_OK and rep["config"]["seed"] == 5 and rep["suite"] == "recurrence"


def test_mvf_check_normalization(tmp_path):
    code, rep = run(tmp_path, {"seed": 0, "suite": "mvf-check", "model": {"B": [[0, -1], [1, 0]]},
                               "params": {"n_pairs": 1, "families": ["constant"]}})
    assert code == cli.EXIT_OK
    norm = [r for r in rep["records"] if r["name"].startswith("normalization")]
    assert len(norm) == 3 and all(r["value"] <= r["tolerance"] for r in norm)


def test_liouville_csv(tmp_path):
    csv_path = tmp_path / "rows.csv"
    code, rep = run(tmp_path, {"seed": 1, "suite": "liouville", "model": {"B": ANTI3}}, "--csv", str(csv_path))
    assert code == cli.EXIT_OK
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "member,x1,x2,x3,t,u,gap"
    assert len(lines) == 1 + 2 * 5 * 400
    assert len([r for r in rep["records"]]) == 10


def test_simulate_and_determinism(tmp_path):
    cfg = {"seed": 3, "suite": "simulate", "model": {"B": [[0, -1], [1, 0]]},
           "mc": {"n_paths": 300, "step": 0.01, "horizon": 2.0},
           "params": {"x0": [1.5, 0.0], "ball": {"center": [0, 0], "radius": 1.0}, "path_horizon": 0.5}}
    csv_path = tmp_path / "path.csv"
    code, a = run(tmp_path, cfg, "--csv", str(csv_path))
    _, b = run(tmp_path, cfg)
    assert code == cli.EXIT_OK
    assert cli.canonical(a) == cli.canonical(b)
    assert csv_path.read_text().splitlines()[0] == "t,x1,x2"


def test_float_serialization_round_trips():
    values = [0.1, 1 / 3, 1e-300, 2.0**-1074, 123456789.123456789, -0.0, 10.0]
    text = cli.to_json({"v": values, "n": [math.nan, math.inf]})
    back = json.loads(text)
    assert back["v"] == values and all(isinstance(v, float) for v in back["v"])
    assert back["n"] == ["nan", "inf"]


def test_canonical_ignores_timing():
    a = {"records": [], "pass": True, "timing": {"seconds": 1.0}}
    b = {"records": [], "pass": True, "timing": {"seconds": 2.0}}
    assert cli.canonical(a) == cli.canonical(b)
