"""Compiled vs numpy backends on the two hot loops: rollouts and the joint DP.

    python3 benchmarks/bench_kernels.py [--robots 4] [--operators 2] [--iterations 4096]

Both backends run on the same inputs; the script checks that they agree
before reporting timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from opalloc import kernels
from opalloc.joint import solve_joint
from opalloc.policies import WhittlePolicy
from opalloc.simulator import GeneratorConfig, generate_scenario, run_rollouts


def _best(fn, repeats):
    out, best = None, float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--robots", type=int, default=4)
    ap.add_argument("--operators", type=int, default=2)
    ap.add_argument("--iterations", type=int, default=4096)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    if "compiled" not in kernels.available():
        print("compiled extension not built; only the python backend is available")
        return 1
    sc = generate_scenario(GeneratorConfig(robots=args.robots, operators=args.operators, gamma=0.95,
                                           seed=args.seed))
    pol = WhittlePolicy(sc)
    res = {}
    for be in ("compiled", "python"):
        roll, t_roll = _best(lambda: run_rollouts(sc, pol, args.iterations, seed=args.seed, backend=be),
                             args.repeats)
        dp, t_dp = _best(lambda: solve_joint(sc, backend=be), 1 if be == "python" else args.repeats)
        res[be] = (roll, t_roll, dp, t_dp)

    (rc, trc, dc, tdc), (rp, trp, dpp, tdp) = res["compiled"], res["python"]
    roll_diff = float(np.max(np.abs(rc.costs - rp.costs)))
    dp_diff = float(np.max(np.abs(dc.V - dpp.V)))
    same_actions = bool(np.array_equal(dc.action, dpp.action))
    print(f"K={sc.K} M={sc.M} gamma={sc.gamma} rollouts={args.iterations}")
    print(f"{'kernel':<10}{'compiled_s':>12}{'python_s':>12}{'speedup':>10}")
    print(f"{'rollouts':<10}{trc:>12.4f}{trp:>12.4f}{trp / trc:>10.1f}")
    print(f"{'joint_dp':<10}{tdc:>12.4f}{tdp:>12.4f}{tdp / tdc:>10.1f}")
    print(f"max |cost diff| {roll_diff:.2e}   max |V diff| {dp_diff:.2e}   identical actions {same_actions}")
    return 0 if roll_diff < 1e-9 and dp_diff < 1e-8 and same_actions else 1


if __name__ == "__main__":
    raise SystemExit(main())
