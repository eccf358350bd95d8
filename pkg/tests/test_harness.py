import copy
import json
import re

import numpy as np
import pytest
import yaml

from usvnav.harness import sim as sim_mod
from usvnav.harness.cli import main
from usvnav.harness.outputs import emit_outputs, read_csv, replay
from usvnav.harness.scenario import (
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
    parse_scenario,
    shipped_scenarios,
)
from usvnav.harness.sim import COLUMNS, rmse_position, run

SHIPPED = {p.stem: p for p in shipped_scenarios()}


@pytest.fixture(scope="module")
def straight_run():
    return run(load_scenario(SHIPPED["straight_goal"]))


def raw(name):
    return yaml.safe_load(SHIPPED[name].read_text())


def test_shipped_scenarios_present():
    assert {"two_gates", "straight_goal", "obstacle_field"} <= set(SHIPPED)


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_shipped_scenarios_validate(name):
    sc = load_scenario(SHIPPED[name])
    assert sc.name == name and sc.seed >= 0


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d["vessel"].__setitem__("m", -5.0), "vessel.m"),
        (lambda d: d["behavior"].__setitem__("tree", {"sequence": ["fly_away"]}), "behavior.tree"),
        (lambda d: d.pop("seed"), "seed"),
        (lambda d: d.__setitem__("version", 7), "version"),
        (lambda d: d["sim"].__setitem__("dt", 0.0), "sim.dt"),
        (lambda d: d["sensors"]["gnss"].__setitem__("sigma", -1), "sensors.gnss.sigma"),
    ],
)
def test_validation_errors_name_the_field(mutate, where):
    d = copy.deepcopy(raw("straight_goal"))
    mutate(d)
    with pytest.raises(ScenarioValidationError) as e:
        parse_scenario(d)
    assert e.value.path == where
    assert str(e.value).startswith(where)


def test_parse_errors_are_distinct(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: [1,\n")
    with pytest.raises(ScenarioParseError):
        load_scenario(bad)
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "missing.yaml")


def test_straight_goal_arrives(straight_run):
    m = straight_run.metrics
    assert straight_run.success and m["completed"]
    assert m["completion_time"] < 40.0
    x, y = straight_run.log.column("x"), straight_run.log.column("y")
    k = int(np.searchsorted(straight_run.log.column("t"), m["completion_time"]))
    assert np.hypot(x[k] - 20.0, y[k]) < 1.5


def test_log_shape_and_time(straight_run):
    rows = straight_run.log.rows
    sc = straight_run.scenario
    assert len(rows) == round(sc.duration / sc.dt) + 1
    t = straight_run.log.column("t")
    np.testing.assert_allclose(np.diff(t), sc.dt, atol=1e-12)
    assert all(len(r) == len(COLUMNS) for r in rows)


def test_outputs(straight_run, tmp_path):
    paths = emit_outputs(straight_run, tmp_path / "out")
    assert all(p.exists() for p in paths.values())
    sc = straight_run.scenario
    lines = paths["log"].read_text().splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    assert len(lines) - 1 == round(sc.duration / sc.dt) + 1

    metrics = json.loads(paths["metrics"].read_text())
    cols = read_csv(paths["log"])
    again = rmse_position(cols["x"], cols["y"], cols["est_x"], cols["est_y"])
    assert abs(again - metrics["rmse_position"]) < 1e-9
    for key in ("rmse_position", "completed", "min_clearance", "sim_duration"):
        assert key in metrics

    svg = paths["plot"].read_text()
    classes = re.findall(r'<polyline class="(\w+)"', svg)
    assert classes.count("truth") == 1 and classes.count("ekf") == 1
    assert classes.count("plan") == len(straight_run.log.paths)


def test_replay(straight_run, tmp_path):
    paths = emit_outputs(straight_run, tmp_path)
    summary = replay(paths["log"], plot=True)
    assert summary["rows"] == len(straight_run.log.rows)
    assert summary["rmse_position"] == pytest.approx(straight_run.metrics["rmse_position"], abs=1e-12)
    assert (tmp_path / "log.svg").exists()


def test_determinism(tmp_path):
    sc = load_scenario(SHIPPED["straight_goal"])
    a = emit_outputs(run(sc, duration=10.0), tmp_path / "a")["log"].read_bytes()
    b = emit_outputs(run(sc, duration=10.0), tmp_path / "b")["log"].read_bytes()
    c = emit_outputs(run(sc, seed=99, duration=10.0), tmp_path / "c")["log"].read_bytes()
    assert a == b
    assert a != c


def test_module_error_fails_run_without_crash(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("follower exploded")

    monkeypatch.setattr(sim_mod, "track", boom)
    res = run(load_scenario(SHIPPED["straight_goal"]), duration=2.0)
    assert not res.success
    assert "follower exploded" in res.metrics["error"]


@pytest.mark.parametrize("name", ["two_gates", "obstacle_field"])
def test_shipped_scenarios_succeed(name):
    res = run(load_scenario(SHIPPED[name]))
    m = res.metrics
    assert res.success, m
    if m["min_clearance"] is not None:
        assert m["min_clearance"] > m["hull_half_width"]


def test_two_gates_crossed_in_order():
    m = run(load_scenario(SHIPPED["two_gates"])).metrics
    assert [g["gate"] for g in m["gate_crossings"]] == [0, 1]
    assert m["gate_crossings"][0]["time"] < m["gate_crossings"][1]["time"]


def test_cli_validate(capsys, tmp_path):
    assert main(["validate", str(SHIPPED["two_gates"])]) == 0
    bad = tmp_path / "bad.yaml"
    d = raw("straight_goal")
    d["vessel"]["m"] = -1
    bad.write_text(yaml.safe_dump(d))
    assert main(["validate", str(bad)]) == 2
    assert "vessel.m" in capsys.readouterr().err


def test_cli_run_exit_codes(tmp_path):
    assert main(["run", str(SHIPPED["straight_goal"]), "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "log.csv").exists()
    # far too short to finish the task
    assert main(["run", str(SHIPPED["straight_goal"]), "--out", str(tmp_path / "short"), "--duration", "3"]) == 1
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2


def test_cli_replay(tmp_path, capsys):
    main(["run", str(SHIPPED["straight_goal"]), "--out", str(tmp_path), "--duration", "2"])
    capsys.readouterr()
    assert main(["replay", str(tmp_path / "log.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 101


def test_exponent_without_dot_is_a_number():
    d = raw("straight_goal")
    d["ekf"] = {"q": {"q_pos": "1e-4"}}
    assert parse_scenario(d).ekf.q.q_pos == 1e-4
    d["ekf"] = {"q": {"q_pos": "lots"}}
    with pytest.raises(ScenarioValidationError):
        parse_scenario(d)
