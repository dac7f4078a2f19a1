"""JSON and CSV persistence with atomic writes and run manifests."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .indexability import IndexabilityVerdict
from .model import JointScenario, ModelError, RobotModel, TaskCost, TaskTransition, validate_scenario
from .whittle import IndexTable

FORMAT_VERSION = 1
SIMULATE_COLUMNS = ["policy", "K", "M", "mean_cost_per_robot", "std", "timed_out"]
BENCH_COLUMNS = ["policy", "K", "M", "precompute_s", "per_decision_s"]


class InputError(ValueError):
    """Unreadable or invalid input file."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifests


def manifest(command: str, config: dict, seed, inputs=()) -> dict:
    """Manifest embedded in outputs.

    It carries nothing that varies between identical reruns, so the same
    command writes the same bytes wherever the output goes.
    """
    return {"command": command, "config": config, "seed": seed, "tool_version": tool_version(),
            "inputs": [str(p) for p in inputs]}


def write_sidecar_manifest(out_path, man: dict, outputs=()) -> Path:
    """Full manifest (output paths and wall-clock timestamp) next to ``out_path``."""
    side = Path(str(out_path) + ".manifest.json")
    outs = [str(p) for p in outputs] or [str(out_path)]
    write_json(side, dict(man, outputs=outs, timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z")))
    return side


# ---------------------------------------------------------------------------
# scenarios


def task_to_dict(tr: TaskTransition) -> dict:
    return {"type": tr.kind, "p0": tr.p0, "q0": tr.q0, "p1n0": tr.p1n0, "q1n0": tr.q1n0,
            "p1n1": tr.p1n1, "q1n1": tr.q1n1}


def scenario_to_dict(sc: JointScenario, man: dict | None = None) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "gamma": sc.gamma,
        "operators": sc.operators,
        "seed": sc.seed,
        "robots": [{
            "tasks": [task_to_dict(t) for t in r.tasks],
            "costs": [{"rho": c.rho, "phi": c.phi} for c in r.costs],
            "teleop_surcharge": r.teleop_surcharge,
        } for r in sc.robots],
    }
    if man is not None:
        d["manifest"] = man
    return d


def scenario_from_dict(d: dict) -> JointScenario:
    try:
        if d.get("format_version") != FORMAT_VERSION:
            raise InputError(f"unsupported format_version {d.get('format_version')!r}")
        robots = []
        for r in d["robots"]:
            tasks = [TaskTransition(float(t["p0"]), float(t["q0"]), float(t["p1n0"]), float(t["q1n0"]),
                                    float(t["p1n1"]), float(t["q1n1"]), kind=str(t.get("type", "general")))
                     for t in r["tasks"]]
            costs = [TaskCost(float(c["rho"]), float(c["phi"])) for c in r["costs"]]
            robots.append(RobotModel(tasks, costs, float(r.get("teleop_surcharge", 0.0))))
        sc = JointScenario(robots, int(d["operators"]), float(d["gamma"]), int(d.get("seed", 0)))
    except InputError:
        raise
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise InputError(f"invalid scenario: {exc}") from exc
    problems = validate_scenario(sc)
    if problems:
        raise InputError("invalid scenario: " + "; ".join(problems))
    return sc


def save_scenario(path, sc: JointScenario, man: dict | None = None) -> None:
    write_json(path, scenario_to_dict(sc, man))


def load_scenario(path) -> JointScenario:
    d = read_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object")
    return scenario_from_dict(d)


# ---------------------------------------------------------------------------
# index tables and verdicts


def table_to_dict(tab: IndexTable, labels: list[str]) -> dict:
    return {"states": labels, "w": tab.w.tolist(),
            "rounds": [{"lambda": lam, "states": list(ys)} for lam, ys in tab.rounds],
            "warning": tab.warning}


def table_from_dict(d: dict) -> IndexTable:
    return IndexTable(np.array(d["w"], dtype=float),
                      [(float(r["lambda"]), [int(y) for y in r["states"]]) for r in d["rounds"]],
                      d.get("warning"))


def save_tables(path, tables: list[IndexTable], labels: list[list[str]], gamma: float, man: dict | None = None):
    d = {"format_version": FORMAT_VERSION, "gamma": gamma,
         "robots": [table_to_dict(t, lab) for t, lab in zip(tables, labels)]}
    if man is not None:
        d["manifest"] = man
    write_json(path, d)


def load_tables(path) -> list[IndexTable]:
    d = read_json(path)
    try:
        return [table_from_dict(r) for r in d["robots"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid index table file: {exc}") from exc


def verdict_to_dict(v: IndexabilityVerdict) -> dict:
    d = v.to_dict()
    d["per_task"] = [{"task": n, "alpha1": a, "beta0": b, "pass": ok} for n, a, b, ok in v.per_task]
    d["violations"] = [{"state": x, "lambda": lam} for x, lam in v.violations]
    if d["lambda_grid"] is not None:
        g = d.pop("lambda_grid")
        d["lambda_grid"] = {"min": g[0], "max": g[-1], "points": len(g)}
    return d


# ---------------------------------------------------------------------------
# CSV


def csv_text(columns: list[str], rows: list[dict]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return "" if v is None else v


def simulate_rows(reports) -> list[dict]:
    return [{"policy": r.policy, "K": r.K, "M": r.M, "mean_cost_per_robot": r.mean_cost_per_robot,
             "std": r.std_cost_per_robot, "timed_out": r.timed_out} for r in reports]


def bench_rows(rows) -> list[dict]:
    return [{"policy": r.policy, "K": r.K, "M": r.M, "precompute_s": r.precompute_s,
             "per_decision_s": r.per_decision_s} for r in rows]
