import csv
import json

import numpy as np
import pytest

from opalloc import cli, io
from opalloc.model import JointScenario, RobotModel, TaskCost, TaskTransition
from opalloc.simulator import GeneratorConfig, generate_scenario
from opalloc.whittle import state_labels, whittle_indices_adaptive_greedy


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def scen(tmp_path):
    p = tmp_path / "s.json"
    assert run("generate", "--robots", 3, "--operators", 1, "--seed", 4, "--gamma", 0.95, "--out", p) == 0
    return p


def write_scenario(path, robots, M=1, gamma=0.95):
    io.save_scenario(path, JointScenario(robots, M, gamma))
    return path


def test_generate_layout_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "sub" / "b.json"
    assert run("generate", "--robots", 4, "--seed", 11, "--out", a) == 0
    assert run("generate", "--robots", 4, "--seed", 11, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    d = json.loads(a.read_text())
    assert d["format_version"] == 1 and len(d["robots"]) == 4
    assert all(len(r["tasks"]) == 7 and len(r["costs"]) == 7 for r in d["robots"])
    assert d["manifest"]["seed"] == 11 and d["manifest"]["command"] == "generate"
    side = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert "timestamp" in side and side["outputs"] == [str(a)]
    assert not [p for p in tmp_path.rglob("*.tmp")]


def test_generate_from_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"robots": 2, "waypoints": 3, "zone_mix": 1.0, "seed": 1}))
    out = tmp_path / "s.json"
    assert run("generate", "--config", cfg, "--out", out) == 0
    sc = io.load_scenario(out)
    assert sc.K == 2 and all(t.kind == "type1" for r in sc.robots for t in r.tasks)
    cfg.write_text(json.dumps({"robotz": 2}))
    assert run("generate", "--config", cfg, "--out", out) == 2


def test_generate_rejects_empty_fleet(tmp_path, capsys):
    assert run("generate", "--robots", 0, "--out", tmp_path / "x.json") == 2
    assert "robots" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_scenario_roundtrip_lossless(tmp_path):
    sc = generate_scenario(GeneratorConfig(robots=3, operators=2, seed=5))
    p = tmp_path / "s.json"
    io.save_scenario(p, sc)
    assert io.load_scenario(p) == sc


def test_check_exit_codes(tmp_path):
    t1 = RobotModel([TaskTransition.type1(0.4, 0.3, 0.7)] * 3, [TaskCost(2, 4)] * 3, 0.75)
    p = write_scenario(tmp_path / "t1.json", [t1, t1])
    out = tmp_path / "v.json"
    assert run("check", p, "--method", "theorem", "--out", out) == 0
    v = json.loads(out.read_text())
    assert v["indexable"] and v["robots"][0]["theorem"]["per_task"][0]["pass"]
    t2 = RobotModel([TaskTransition.type2(0.3, 0.3, 0.3, 0.1)], [TaskCost(2, 4)], 0.75)
    p2 = write_scenario(tmp_path / "t2.json", [t2])
    assert run("check", p2, "--method", "theorem") == 3
    assert run("check", p2, "--method", "both", "--out", out) == 0
    v = json.loads(out.read_text())
    assert v["robots"][0]["agree"] is False and v["defects"] == []


def test_check_bad_inputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("check", bad) == 2
    assert run("check", tmp_path / "missing.json") == 2
    bad.write_text(json.dumps({"format_version": 99, "robots": []}))
    assert run("check", bad) == 2
    bad.write_text(json.dumps({"format_version": 1, "gamma": 0.9, "operators": 1, "robots": [
        {"tasks": [{"p0": 0.9, "q0": 0.9, "p1n0": 0.1, "q1n0": 0, "p1n1": 0.1, "q1n1": 0.1}],
         "costs": [{"rho": 1, "phi": 1}]}]}))
    assert run("check", bad) == 2


def test_solve_tables(tmp_path, scen):
    out = tmp_path / "t.json"
    assert run("solve", scen, "--oracle", "--out", out) == 0
    tabs = io.load_tables(out)
    sc = io.load_scenario(scen)
    for t, r in zip(tabs, sc.robots):
        assert t.w[r.goal_index] == 0.0
        ref = whittle_indices_adaptive_greedy(r, sc.gamma)
        assert np.array_equal(t.w, ref.w) and t.rounds == ref.rounds
    d = json.loads(out.read_text())
    assert d["robots"][0]["states"] == state_labels(sc.robots[0])
    assert d["manifest"]["oracle"]["max_abs_diff"][0] <= 1e-6


def test_solve_refuses_non_indexable(tmp_path, scen, monkeypatch):
    monkeypatch.setattr(cli, "_robot_indexable", lambda r, g: False)
    out = tmp_path / "t.json"
    assert run("solve", scen, "--out", out) == 3 and not out.exists()
    assert run("solve", scen, "--force", "--out", out) == 0
    assert all(t.warning for t in io.load_tables(out))


def test_solve_oracle_mismatch(tmp_path, scen, monkeypatch):
    real = cli.whittle_indices_bisection
    monkeypatch.setattr(cli, "whittle_indices_bisection", lambda r, g, tol: real(r, g, tol=tol) + 1e-3)
    assert run("solve", scen, "--oracle", "--out", tmp_path / "t.json") == 4


def read_csv(p):
    with open(p) as fh:
        return list(csv.reader(fh))


def test_simulate_rows_and_determinism(tmp_path):
    s = tmp_path / "k9.json"
    assert run("generate", "--robots", 9, "--operators", 3, "--seed", 2, "--out", s) == 0
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("simulate", s, "--policies", "whittle,reactive", "--iterations", 300, "--out", a) == 0
    assert run("simulate", s, "--policies", "whittle,reactive", "--iterations", 300, "--out", b,
               "--threads", 2) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_csv(a)
    assert rows[0] == ["policy", "K", "M", "mean_cost_per_robot", "std", "timed_out"]
    assert [r[0] for r in rows[1:]] == ["whittle", "reactive"]
    assert float(rows[1][3]) <= float(rows[2][3])
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["format_version"] == 1 and len(rep["reports"]) == 2


def test_simulate_refuses_large_optimal(tmp_path):
    s = tmp_path / "k25.json"
    assert run("generate", "--robots", 25, "--operators", 2, "--seed", 2, "--out", s) == 0
    out = tmp_path / "o.csv"
    assert run("simulate", s, "--policies", "optimal", "--iterations", 10, "--out", out) == 0
    rows = read_csv(out)
    assert rows[1][:3] == ["optimal", "25", "2"] and rows[1][3] == "" and rows[1][5] == "false"
    rep = json.loads((tmp_path / "o.json").read_text())
    assert rep["reports"][0]["error"].startswith("refused")


def test_simulate_unknown_policy(tmp_path, scen):
    assert run("simulate", scen, "--policies", "whittle,psychic", "--out", tmp_path / "x.csv") == 2


def test_bench_csv(tmp_path, scen):
    out = tmp_path / "b.csv"
    assert run("bench", scen, "--policies", "whittle,myopic1", "--operators", "1,2,3", "--calls", 50,
               "--warmup", 5, "--repeats", 1, "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["policy", "K", "M", "precompute_s", "per_decision_s"]
    assert [(r[0], r[2]) for r in rows[1:]] == [(p, m) for m in "123" for p in ("whittle", "myopic1")]
    assert run("bench", scen, "--operators", "9", "--out", out) == 2
