"""Command-line entry point: ``opalloc {generate,check,solve,simulate,bench}``.

Exit codes: 0 success (or indexable), 2 input error, 3 non-indexable,
4 index oracle mismatch.

Scenario JSON::

    {"format_version": 1, "gamma": 0.99, "operators": 1, "seed": 0,
     "robots": [{"tasks": [{"type": "type1", "p0": ..., "q0": ..., "p1n0": ...,
                            "q1n0": ..., "p1n1": ..., "q1n1": ...}, ...],
                 "costs": [{"rho": 2.0, "phi": 4.0}, ...],
                 "teleop_surcharge": 0.75}],
     "manifest": {...}}

Simulate CSV columns: policy,K,M,mean_cost_per_robot,std,timed_out
Bench CSV columns:    policy,K,M,precompute_s,per_decision_s
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .indexability import numeric_verify, theorem_check
from .joint import DEFAULT_STATE_CAP, StateSpaceTooLarge
from .model import JointScenario, ModelError
from .policies import ConfigurationError, POLICY_NAMES, canonical_name, make_policy
from .simulator import (GeneratorConfig, GeneratorError, RolloutReport, benchmark_decision_time, evaluate,
                        generate_scenario, machine_info)
from .whittle import NonIndexableError, state_labels, whittle_indices_adaptive_greedy, whittle_indices_bisection

EXIT_OK, EXIT_INPUT, EXIT_NONINDEXABLE, EXIT_ORACLE = 0, 2, 3, 4
ORACLE_TOL = 1e-6

log = logging.getLogger("opalloc")


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _load(path) -> JointScenario:
    try:
        return io.load_scenario(path)
    except io.InputError as exc:
        raise CliError(str(exc)) from exc


def _with_gamma(sc: JointScenario, gamma) -> JointScenario:
    if gamma is None:
        return sc
    if not 0.0 < gamma < 1.0:
        raise CliError("--gamma must lie in (0, 1)")
    return dataclasses.replace(sc, gamma=gamma)


def _with_operators(sc: JointScenario, m: int) -> JointScenario:
    if not 1 <= m <= sc.K:
        raise CliError(f"operators must be in [1, {sc.K}]")
    return dataclasses.replace(sc, operators=m)


def _policies(text: str) -> list[str]:
    try:
        return [canonical_name(p) for p in text.split(",") if p.strip()]
    except ConfigurationError as exc:
        raise CliError(str(exc)) from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"expected comma-separated integers, got {text!r}") from exc


def _finish(out, man, outputs=()):
    io.write_sidecar_manifest(out, man, outputs)


# ---------------------------------------------------------------------------
# generate


_GEN_FLAGS = {"robots": "robots", "operators": "operators", "waypoints": "waypoints",
              "zone_mix": "zone_mix", "gamma": "gamma", "seed": "seed"}


def cmd_generate(args) -> int:
    cfg = {}
    if args.config:
        raw = io.read_json(args.config)
        if not isinstance(raw, dict):
            raise CliError(f"config {args.config} must be a JSON object")
        cfg.update(raw)
    for attr, key in _GEN_FLAGS.items():
        v = getattr(args, attr)
        if v is not None:
            cfg[key] = v
    if args.unbounded:
        cfg["bounded"] = False
    known = {f.name for f in dataclasses.fields(GeneratorConfig)}
    extra = set(cfg) - known
    if extra:
        raise CliError(f"unknown config keys: {', '.join(sorted(extra))}")
    try:
        gc = GeneratorConfig(**cfg)
        sc = generate_scenario(gc, instance=args.instance)
    except (ModelError, GeneratorError, TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc
    snapshot = dataclasses.asdict(gc)
    snapshot["instance"] = args.instance
    man = io.manifest("generate", snapshot, gc.seed, [args.config] if args.config else [])
    io.save_scenario(args.out, sc, man)
    _finish(args.out, man)
    print(f"wrote {args.out}: K={sc.K} M={sc.M} waypoints={gc.waypoints}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def _check_robot(method, gamma, n_points):
    def run(robot):
        out = {}
        if method in ("theorem", "both"):
            out["theorem"] = theorem_check(robot, gamma)
        if method in ("numeric", "both"):
            out["numeric"] = numeric_verify(robot, gamma, n_points=n_points)
        return out
    return run


def cmd_check(args) -> int:
    sc = _with_gamma(_load(args.scenario), args.gamma)
    results = _pmap(_check_robot(args.method, sc.gamma, args.grid_points), sc.robots, args.threads)
    robots, defects = [], []
    indexable = True
    for k, res in enumerate(results):
        entry = {"robot": k}
        for m, v in res.items():
            entry[m] = io.verdict_to_dict(v)
        if args.method == "both":
            t, n = res["theorem"].indexable, res["numeric"].indexable
            entry["agree"] = t == n
            if t and not n:
                defects.append(k)
            ok = t or n
        else:
            ok = next(iter(res.values())).indexable
        entry["indexable"] = ok
        indexable &= ok
        robots.append(entry)
    man = io.manifest("check", {"method": args.method, "gamma": sc.gamma, "grid_points": args.grid_points},
                      sc.seed, [args.scenario])
    doc = {"format_version": io.FORMAT_VERSION, "method": args.method, "indexable": indexable,
           "defects": defects, "robots": robots, "manifest": man}
    if args.out:
        io.write_json(args.out, doc)
        _finish(args.out, man)
    n_ok = sum(r["indexable"] for r in robots)
    print(f"{n_ok}/{len(robots)} robots indexable ({args.method})")
    for k in defects:
        print(f"robot {k}: sufficient condition holds but the numeric sweep found a violation", file=sys.stderr)
    return EXIT_OK if indexable else EXIT_NONINDEXABLE


# ---------------------------------------------------------------------------
# solve


def _robot_indexable(robot, gamma) -> bool:
    return theorem_check(robot, gamma).indexable or numeric_verify(robot, gamma).indexable


def cmd_solve(args) -> int:
    sc = _with_gamma(_load(args.scenario), args.gamma)
    ok = _pmap(lambda r: _robot_indexable(r, sc.gamma), sc.robots, args.threads)
    bad = [k for k, v in enumerate(ok) if not v]
    if bad:
        msg = f"robots {bad} are not indexable"
        if not args.force:
            print(msg + "; use --force to compute indices anyway", file=sys.stderr)
            return EXIT_NONINDEXABLE
        log.warning("%s; computing indices anyway (--force)", msg)
    tables = _pmap(lambda r: whittle_indices_adaptive_greedy(r, sc.gamma), sc.robots, args.threads)
    for k in bad:
        tables[k].warning = tables[k].warning or "robot failed the indexability checks; solved with --force"
    code = EXIT_OK
    oracle = None
    if args.oracle:
        try:
            ref = _pmap(lambda r: whittle_indices_bisection(r, sc.gamma, tol=1e-9), sc.robots, args.threads)
        except NonIndexableError as exc:
            print(f"oracle failed: {exc}", file=sys.stderr)
            return EXIT_ORACLE
        diffs = [float(np.max(np.abs(t.w - b))) for t, b in zip(tables, ref)]
        oracle = {"tolerance": ORACLE_TOL, "max_abs_diff": diffs}
        worst = max(diffs)
        print(f"oracle: max |greedy - bisection| = {worst:.3e}")
        if worst > ORACLE_TOL:
            print(f"index oracle mismatch above {ORACLE_TOL:g}", file=sys.stderr)
            code = EXIT_ORACLE
    man = io.manifest("solve", {"gamma": sc.gamma, "force": args.force, "oracle": args.oracle}, sc.seed,
                      [args.scenario])
    if oracle is not None:
        man["oracle"] = oracle
    io.save_tables(args.out, tables, [state_labels(r) for r in sc.robots], sc.gamma, man)
    _finish(args.out, man)
    print(f"wrote {args.out}: {len(tables)} index tables")
    return code


# ---------------------------------------------------------------------------
# simulate


def _json_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json") if p.suffix.lower() == ".csv" else Path(str(p) + ".json")


def cmd_simulate(args) -> int:
    sc = _with_gamma(_load(args.scenario), args.gamma)
    if args.operators is not None:
        sc = _with_operators(sc, args.operators)
    names = _policies(args.policies)
    seed = sc.seed if args.seed is None else args.seed
    if args.iterations < 1:
        raise CliError("--iterations must be at least 1")

    def one(name):
        try:
            pol = make_policy(name, sc, cap=args.cap)
        except StateSpaceTooLarge as exc:
            return RolloutReport(name, sc.K, sc.M, args.iterations, error=f"refused: {exc}")
        except Exception as exc:  # precompute failure flags the row, run continues
            return RolloutReport(name, sc.K, sc.M, args.iterations, error=f"{type(exc).__name__}: {exc}")
        return evaluate(sc, [pol], iterations=args.iterations, per_rollout_timeout=args.timeout, seed=seed)[0]

    reports = _pmap(one, names, args.threads)
    for r in reports:
        if r.error:
            print(f"{r.policy}: {r.error}", file=sys.stderr)
    json_out = _json_path(args.out)
    man = io.manifest("simulate", {"policies": names, "iterations": args.iterations, "timeout": args.timeout,
                                   "operators": sc.M, "gamma": sc.gamma, "cap": args.cap},
                      seed, [args.scenario])
    io.atomic_write_text(args.out, io.csv_text(io.SIMULATE_COLUMNS, io.simulate_rows(reports)))
    # timing fields vary run to run; they live only in the JSON report
    io.write_json(json_out, {"format_version": io.FORMAT_VERSION, "reports": [r.to_dict() for r in reports],
                             "manifest": man})
    _finish(args.out, man, [args.out, json_out])
    for r in reports:
        if r.error is None and not r.timed_out:
            print(f"{r.policy:>9s}  mean/robot {r.mean_cost_per_robot:.4f}  std {r.std_cost_per_robot:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    sc = _with_gamma(_load(args.scenario), args.gamma)
    names = _policies(args.policies)
    ms = _int_list(args.operators) if args.operators else [sc.M]
    seed = sc.seed if args.seed is None else args.seed
    rows = []
    for m in ms:
        scm = _with_operators(sc, m)
        for name in names:
            try:
                pol = make_policy(name, scm, cap=args.cap)
            except StateSpaceTooLarge as exc:
                print(f"{name} K={sc.K} M={m}: refused: {exc}", file=sys.stderr)
                continue
            rows.extend(benchmark_decision_time(scm, [pol], calls=args.calls, warmup=args.warmup, seed=seed,
                                                time_budget=args.time_budget, repeats=args.repeats))
    man = io.manifest("bench", {"policies": names, "operators": ms, "calls": args.calls, "warmup": args.warmup,
                                "repeats": args.repeats, "machine": machine_info()},
                      seed, [args.scenario])
    io.atomic_write_text(args.out, io.csv_text(io.BENCH_COLUMNS, io.bench_rows(rows)))
    _finish(args.out, man)
    for r in rows:
        print(f"{r.policy:>9s} K={r.K} M={r.M}  precompute {r.precompute_s:.3e}s  decision {r.per_decision_s:.3e}s")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opalloc", description="Operator allocation for robot fleets.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--gamma", type=float, default=None, help="override the discount factor")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker threads (results are order-stable)")

    g = sub.add_parser("generate", help="sample a random scenario")
    g.add_argument("--config", help="JSON file with generator settings; flags override it")
    g.add_argument("--out", required=True)
    g.add_argument("--robots", type=int)
    g.add_argument("--operators", type=int)
    g.add_argument("--waypoints", type=int)
    g.add_argument("--zone-mix", dest="zone_mix", type=float, help="probability a task is Type-1")
    g.add_argument("--gamma", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--instance", type=int, default=0)
    g.add_argument("--unbounded", action="store_true", help="drop the Type-2 indexability bounds")
    g.set_defaults(fn=cmd_generate)

    c = sub.add_parser("check", help="indexability verdict per robot")
    c.add_argument("scenario")
    c.add_argument("--method", choices=("theorem", "numeric", "both"), default="both")
    c.add_argument("--grid-points", dest="grid_points", type=int, default=400)
    c.add_argument("--out")
    common(c)
    c.set_defaults(fn=cmd_check)

    s = sub.add_parser("solve", help="compute Whittle index tables")
    s.add_argument("scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="solve even if a robot fails the indexability checks")
    s.add_argument("--oracle", action="store_true", help="cross-check against bisection")
    common(s)
    s.set_defaults(fn=cmd_solve)

    m = sub.add_parser("simulate", help="Monte Carlo policy evaluation")
    m.add_argument("scenario")
    m.add_argument("--out", required=True, help="CSV path; a JSON report is written alongside")
    m.add_argument("--policies", default="whittle,reactive", help=f"comma list from {','.join(POLICY_NAMES)}")
    m.add_argument("--iterations", type=int, default=500)
    m.add_argument("--timeout", type=float, default=10.0, help="seconds per rollout")
    m.add_argument("--seed", type=int)
    m.add_argument("--operators", type=int, help="override the number of operators")
    m.add_argument("--cap", type=int, default=DEFAULT_STATE_CAP, help="joint state cap for the optimal policy")
    common(m)
    m.set_defaults(fn=cmd_simulate)

    b = sub.add_parser("bench", help="precompute and per-decision timing")
    b.add_argument("scenario")
    b.add_argument("--out", required=True)
    b.add_argument("--policies", default="whittle,reactive,benefit,myopic1,myopic2")
    b.add_argument("--operators", help="comma list of operator counts, default from the scenario")
    b.add_argument("--calls", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=100)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--time-budget", dest="time_budget", type=float, default=None)
    b.add_argument("--seed", type=int)
    b.add_argument("--cap", type=int, default=DEFAULT_STATE_CAP)
    common(b, threads=False)
    b.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("opalloc: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"opalloc: {exc}", file=sys.stderr)
        return exc.code
    except io.InputError as exc:
        print(f"opalloc: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
