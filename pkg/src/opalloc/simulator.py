"""Scenario generation, Monte Carlo rollouts and timing of allocation policies."""
from __future__ import annotations

import math
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .indexability import type2_bound_arrays
from .joint import FleetArrays, strides
from .model import JointScenario, ModelError, RobotModel, TaskCost, TaskTransition, validate
from .policies import Policy, make_policy
from .rng import RolloutStream, generator, iteration_key, stream_code

TABLE_I = {
    "r0": (0.2, 0.5),
    "q0_type1": (0.2, 0.5),
    "q0_type2_low": 0.1,
    "r1n0": (0.1, 0.4),
    "q1n1": (0.1, 0.9),
}


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    robots: int = 3
    operators: int = 1
    waypoints: int = 7
    zone_mix: float = 0.5          # probability that a task is Type-1
    gamma: float = 0.99
    seed: int = 0
    rho: float = 2.0
    phi: float = 4.0
    teleop_surcharge: float = 0.75
    bounded: bool = True           # apply the Type-2 indexability bounds
    ranges: dict = field(default_factory=lambda: dict(TABLE_I))
    max_retries: int = 1000

    def check(self) -> None:
        if self.robots < 1:
            raise ModelError("robots must be at least 1")
        if not 1 <= self.operators <= self.robots:
            raise ModelError(f"operators must be in [1, {self.robots}]")
        if self.waypoints < 1:
            raise ModelError("waypoints must be at least 1")
        if not 0.0 <= self.zone_mix <= 1.0:
            raise ModelError("zone_mix must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ModelError("gamma must lie in (0, 1)")
        for key, v in self.ranges.items():
            lo, hi = (v, v) if np.isscalar(v) else v
            if not 0.0 <= lo <= hi <= 1.0:
                raise ModelError(f"range {key} must lie inside [0, 1]")


def sample_type1(rng, cfg: GeneratorConfig) -> TaskTransition:
    r0 = rng.uniform(*cfg.ranges["r0"])
    q0 = rng.uniform(*cfg.ranges["q0_type1"])
    p1 = 1.0 - rng.uniform(*cfg.ranges["r1n0"])
    return TaskTransition.type1(1.0 - r0 - q0, q0, p1)


def sample_type2(rng, cfg: GeneratorConfig) -> TaskTransition:
    """Fault-with-reset task; with ``cfg.bounded`` the draws respect the indexability bounds."""
    g = cfg.gamma
    q0_lo = cfg.ranges["q0_type2_low"]
    q1_lo, q1_hi = cfg.ranges["q1n1"]
    for _ in range(cfg.max_retries):
        r0 = rng.uniform(*cfg.ranges["r0"])
        p1 = 1.0 - rng.uniform(*cfg.ranges["r1n0"])
        hi = 1.0 - r0
        if cfg.bounded:
            hi = min(hi, (1.0 - g * r0) / (g * (1.0 + g * p1)))
        if hi < q0_lo:
            continue
        q0 = rng.uniform(q0_lo, hi)
        p0 = max(1.0 - r0 - q0, 0.0)
        lo = q1_lo
        if cfg.bounded:
            lo = max(type2_bound_arrays(p0, q0, p1, g)[0], q1_lo)
        if lo > q1_hi:
            continue
        return TaskTransition.type2(p0, q0, p1, rng.uniform(lo, q1_hi))
    raise GeneratorError("no feasible Type-2 draw after the retry budget")


def generate_robot(rng, cfg: GeneratorConfig) -> RobotModel:
    tasks = [sample_type1(rng, cfg) if rng.random() < cfg.zone_mix else sample_type2(rng, cfg)
             for _ in range(cfg.waypoints)]
    costs = [TaskCost(cfg.rho, cfg.phi)] * cfg.waypoints
    return RobotModel(tasks, costs, cfg.teleop_surcharge)


def generate_scenario(config: GeneratorConfig, rng=None, instance: int = 0) -> JointScenario:
    """Random fleet following the city-zone protocol; every robot passes validation."""
    config.check()
    rng = rng if rng is not None else generator(config.seed, "scenario", instance)
    robots = []
    for _ in range(config.robots):
        robot = generate_robot(rng, config)
        problems = validate(robot)
        if problems:
            raise GeneratorError("; ".join(problems))
        robots.append(robot)
    return JointScenario(robots, config.operators, config.gamma, config.seed)


def survey_robot(rng, rho: float = 2.0, phi: float = 4.0, teleop_surcharge: float = 0.75) -> RobotModel:
    """Single-task fault-with-reset robot with no indexability bounds.

    ``(p0, q0)`` is uniform on the probability simplex and ``p1n0``, ``q1n1``
    are uniform on [0, 1].  Used for indexability surveys.
    """
    p0, q0, _ = rng.dirichlet((1.0, 1.0, 1.0))
    p1 = rng.uniform(0.0, 1.0)
    q1n1 = rng.uniform(0.0, 1.0)
    while q1n1 == 0.0:
        q1n1 = rng.uniform(0.0, 1.0)
    return RobotModel([TaskTransition.type2(p0, q0, p1, q1n1)], [TaskCost(rho, phi)], teleop_surcharge)


# ---------------------------------------------------------------------------
# rollouts


def horizon_cap(K: int, cmax: float, gamma: float, eps_tail: float = 1e-6) -> int:
    if cmax <= 0.0:
        return 1
    return max(1, math.ceil(math.log(eps_tail * (1.0 - gamma) / (K * cmax)) / math.log(gamma)))


def tail_bound(T: int, K: int, cmax: float, gamma: float) -> float:
    return gamma ** T * K * cmax / (1.0 - gamma)


@dataclass
class RolloutBatch:
    costs: np.ndarray
    steps: np.ndarray
    truncated: np.ndarray
    horizon: int
    tail_bound: float
    elapsed_s: float = 0.0
    timed_out: bool = False


def _start(scenario, start) -> np.ndarray:
    if start is None:
        return np.zeros(scenario.K, dtype=np.int64)
    return np.asarray(start, dtype=np.int64)


def _python_rollouts(policy: Policy, fleet: FleetArrays, seed, instance, iters, start, gamma, T,
                     timeout: Optional[float]):
    n = len(iters)
    costs = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    trunc = np.zeros(n, dtype=np.uint8)
    K = fleet.K
    kk = np.arange(K)
    for j, it in enumerate(iters):
        t0 = time.perf_counter()
        stream = RolloutStream(seed, instance, int(it))
        x = start.copy()
        disc, total, t = 1.0, 0.0, 0
        while (x != fleet.goal).any():
            if t >= T:
                trunc[j] = 1
                break
            a = policy.decide(x, tie_keys=stream.tie(t, K))
            c = 0.0
            for k in range(K):
                c += fleet.cost[k, x[k], a[k]]
            total += disc * c
            u = stream.env(t, K)
            cm = fleet.cum[kk, x, a]
            o = np.where(u < cm[:, 0], 0, np.where(u < cm[:, 1], 1, 2))
            x = np.where(x != fleet.goal, fleet.succ[kk, x, a, o], x)
            disc *= gamma
            t += 1
            if timeout is not None and time.perf_counter() - t0 > timeout:
                return costs[:j], steps[:j], trunc[:j], True
        costs[j], steps[j] = total, t
    return costs, steps, trunc, False


def run_rollouts(scenario: JointScenario, policy: Policy, iterations: int, seed: int = 0, instance: int = 0,
                 start=None, backend: Optional[str] = None, per_rollout_timeout: Optional[float] = None,
                 chunk: int = 2048, key_salt: int = 0, first: int = 0,
                 python_loop: bool = False) -> RolloutBatch:
    """Run ``iterations`` rollouts; draws depend only on (seed, instance, iteration, t, robot).

    Policies with a score table or joint table run inside the rollout kernel;
    others (or any policy when ``python_loop`` is set) call ``decide`` each step.
    """
    fleet = policy.fleet
    start = _start(scenario, start)
    T = horizon_cap(scenario.K, scenario.max_cost, scenario.gamma)
    tb = tail_bound(T, scenario.K, scenario.max_cost, scenario.gamma)
    mod = kernels.get(backend)
    table = policy.score_table()
    sol = policy.joint_solution()
    t0 = time.perf_counter()
    parts = []
    timed_out = False
    if python_loop or (table is None and sol is None):
        iters = np.arange(first, first + iterations, dtype=np.int64)
        c, s, tr, timed_out = _python_rollouts(policy, fleet, seed ^ key_salt, instance, iters, start,
                                               scenario.gamma, T, per_rollout_timeout)
        parts.append((c, s, tr))
    else:
        for lo in range(first, first + iterations, chunk):
            hi = min(first + iterations, lo + chunk)
            keys = iteration_key(seed ^ key_salt, instance, np.arange(lo, hi, dtype=np.uint64))
            tc = time.perf_counter()
            if sol is not None:
                out = mod.rollout_joint(fleet.succ, fleet.cum, fleet.cost, fleet.goal, strides(fleet),
                                        sol.action, sol.allocs.astype(np.int64) @ (1 << np.arange(fleet.K)),
                                        keys, start, float(scenario.gamma), T)
            else:
                out = mod.rollout_scores(fleet.succ, fleet.cum, fleet.cost, fleet.goal,
                                         np.ascontiguousarray(table, dtype=float), int(policy.M),
                                         int(policy.random_ties), keys, start, float(scenario.gamma), T)
            parts.append(out)
            if per_rollout_timeout is not None and (time.perf_counter() - tc) / (hi - lo) > per_rollout_timeout:
                timed_out = True
                break
    costs = np.concatenate([p[0] for p in parts])
    steps = np.concatenate([p[1] for p in parts])
    trunc = np.concatenate([p[2] for p in parts]).astype(bool)
    return RolloutBatch(costs, steps, trunc, T, tb, time.perf_counter() - t0, timed_out)


def rollout(scenario: JointScenario, policy: Policy, seed: int = 0, instance: int = 0, iteration: int = 0,
            start=None, backend: Optional[str] = None) -> float:
    """Discounted total cost of a single trajectory."""
    b = run_rollouts(scenario, policy, 1, seed, instance, start, backend, first=iteration)
    return float(b.costs[0])


@dataclass
class RolloutReport:
    policy: str
    K: int
    M: int
    iterations: int
    mean_cost: float = float("nan")
    std_cost: float = float("nan")
    mean_cost_per_robot: float = float("nan")
    std_cost_per_robot: float = float("nan")
    stderr: float = float("nan")
    mean_decision_s: float = float("nan")
    precompute_s: float = float("nan")
    truncated: int = 0
    tail_bound: float = 0.0
    timed_out: bool = False
    error: Optional[str] = None
    costs: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self, with_costs: bool = False) -> dict:
        d = asdict(self)
        d.pop("costs")
        if with_costs and self.costs is not None:
            d["costs"] = self.costs.tolist()
        return d


def _stats(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return mean, math.sqrt(var)


def evaluate(scenario: JointScenario, policies: Sequence, iterations: int = 500, per_rollout_timeout: Optional[float] = 10.0,
             seed: int = 0, instance: int = 0, common_random_numbers: bool = True,
             backend: Optional[str] = None, keep_costs: bool = False) -> list[RolloutReport]:
    """Evaluate each policy on the same scenario.

    ``policies`` holds names or :class:`Policy` objects.  With common random
    numbers every policy sees the same environment noise for a given
    iteration; otherwise each policy gets its own stream.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    reports = []
    for p in policies:
        name = p if isinstance(p, str) else p.name
        rep = RolloutReport(name, scenario.K, scenario.M, iterations)
        try:
            pol = make_policy(p, scenario) if isinstance(p, str) else p
        except Exception as exc:  # precompute failure is reported, not raised
            rep.error = f"{type(exc).__name__}: {exc}"
            reports.append(rep)
            continue
        rep.policy = pol.name
        salt = 0 if common_random_numbers else stream_code(pol.name)
        b = run_rollouts(scenario, pol, iterations, seed, instance, backend=backend,
                         per_rollout_timeout=per_rollout_timeout, key_salt=salt)
        rep.precompute_s = pol.precompute_s
        rep.tail_bound = b.tail_bound
        if b.timed_out:
            rep.timed_out = True
            reports.append(rep)
            continue
        mean, std = _stats(b.costs)
        rep.mean_cost, rep.std_cost = mean, std
        rep.mean_cost_per_robot, rep.std_cost_per_robot = mean / scenario.K, std / scenario.K
        rep.stderr = std / math.sqrt(iterations)
        rep.mean_decision_s = b.elapsed_s / max(int(b.steps.sum()), 1)
        rep.truncated = int(b.truncated.sum())
        if keep_costs:
            rep.costs = b.costs
        reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# timing


@dataclass
class BenchRow:
    policy: str
    K: int
    M: int
    precompute_s: float
    per_decision_s: float
    calls: int


def machine_info() -> dict:
    return {"python": platform.python_version(), "machine": platform.machine(),
            "processor": platform.processor(), "system": platform.system()}


def random_joint_states(scenario: JointScenario, n: int, rng) -> np.ndarray:
    """Uniform joint states that are not all at Goal."""
    S = np.array([r.n_states for r in scenario.robots])
    X = (rng.random((n, scenario.K)) * S).astype(np.int64)
    all_goal = (X == S - 1).all(axis=1)
    X[all_goal, 0] = 0
    return X


def benchmark_decision_time(scenario: JointScenario, policies: Sequence, calls: int = 1000, warmup: int = 100,
                            seed: int = 0, time_budget: Optional[float] = None, repeats: int = 1) -> list[BenchRow]:
    """One-time precompute and mean single-decision latency for each policy.

    Decisions are timed on uniformly random joint states after ``warmup``
    discarded calls.  With ``repeats > 1`` the timed block is run several
    times and the fastest block mean is kept, which filters scheduler noise.
    ``time_budget`` (seconds) caps each timed block for slow policies; at
    least ten calls are always timed.
    """
    rows = []
    for p in policies:
        pol = make_policy(p, scenario) if isinstance(p, str) else p
        rng = generator(seed, "bench", stream_code(pol.name))
        X = random_joint_states(scenario, warmup + calls, rng)
        keys = rng.random((warmup + calls, scenario.K))
        w0 = time.perf_counter()
        for i in range(warmup):
            pol.decide(X[i], tie_keys=keys[i])
            if time_budget is not None and time.perf_counter() - w0 > time_budget:
                break
        best, n_best = math.inf, 0
        for _ in range(max(1, repeats)):
            n = 0
            t0 = time.perf_counter()
            for i in range(warmup, warmup + calls):
                pol.decide(X[i], tie_keys=keys[i])
                n += 1
                if time_budget is not None and n >= 10 and time.perf_counter() - t0 > time_budget:
                    break
            dt = (time.perf_counter() - t0) / n
            if dt < best:
                best, n_best = dt, n
        rows.append(BenchRow(pol.name, scenario.K, scenario.M, pol.precompute_s, best, n_best))
    return rows
