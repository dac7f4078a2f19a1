"""Operator allocation policies over the joint fleet state.

Every policy maps a joint state (one local state index per robot) to a 0/1
allocation vector with at most ``M`` ones that never selects a robot sitting
at Goal.  Policies that reduce to "rank robots by a per-state score" expose
that score table so the rollout kernels can run them without calling back
into Python.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .joint import FleetArrays, JointSolution, allocations, solve_joint, DEFAULT_STATE_CAP
from .model import JointScenario, OperatingState
from .whittle import IndexTable, all_passive_values, benefit, whittle_indices_adaptive_greedy


class ConfigurationError(ValueError):
    pass


POLICY_NAMES = ("whittle", "optimal", "reactive", "myopic1", "myopic2", "benefit")
_ALIASES = {"index": "whittle", "myopic": "myopic1", "myopic-1": "myopic1", "myopic-2": "myopic2",
            "greedy1": "myopic1", "greedy2": "myopic2"}


def canonical_name(name: str) -> str:
    n = name.strip().lower()
    n = _ALIASES.get(n, n)
    if n not in POLICY_NAMES:
        raise ConfigurationError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    return n


def to_local(scenario: JointScenario, state) -> np.ndarray:
    """Joint state as local indices; accepts OperatingState lists or index arrays."""
    if len(state) != scenario.K:
        raise ConfigurationError(f"joint state has {len(state)} entries, fleet has {scenario.K} robots")
    if len(state) and isinstance(state[0], OperatingState):
        return np.array([r.state_index(s) for r, s in zip(scenario.robots, state)], dtype=np.int64)
    return np.asarray(state, dtype=np.int64)


def top_m(score: np.ndarray, eligible: np.ndarray, M: int, keys: np.ndarray) -> np.ndarray:
    """Pick up to ``M`` eligible robots by descending score, ties by ascending key."""
    K = score.shape[0]
    s = np.where(eligible, score, -np.inf)
    order = np.lexsort((keys, -s))[:M]
    a = np.zeros(K, dtype=np.int64)
    a[order] = eligible[order]
    return a


def whittle_policy_decide(tables: Sequence, state: Sequence[int], M: int, rng=None,
                          tie_keys: Optional[np.ndarray] = None, goal: Optional[Sequence[int]] = None) -> np.ndarray:
    """Operators go to the robots with the largest strictly positive current index."""
    K = len(state)
    w = np.empty(K)
    for k, (tab, x) in enumerate(zip(tables, state)):
        vec = tab.w if isinstance(tab, IndexTable) else np.asarray(tab)
        if not 0 <= x < len(vec) or np.isnan(vec[x]):
            raise ConfigurationError(f"no index for robot {k} state {x}")
        w[k] = vec[x]
    elig = w > 0.0
    if goal is not None:
        elig &= np.asarray(state) != np.asarray(goal)
    keys = tie_keys if tie_keys is not None else (rng or np.random.default_rng()).random(K)
    return top_m(w, elig, M, keys)


def reactive_decide(state: Sequence[OperatingState], M: int, rng=None,
                    tie_keys: Optional[np.ndarray] = None) -> np.ndarray:
    """Operators go to faulted robots; a uniformly random subset if there are more than ``M``."""
    fault = np.array([(not s.is_goal) and s.fault == 1 for s in state])
    keys = tie_keys if tie_keys is not None else (rng or np.random.default_rng()).random(len(state))
    return top_m(fault.astype(float), fault, M, keys)


def benefit_decide(b0_tables: Sequence[np.ndarray], state: Sequence[int], M: int) -> np.ndarray:
    """Most negative benefit-at-zero first, robots with a nonnegative value excluded."""
    b = np.array([np.asarray(t)[x] for t, x in zip(b0_tables, state)])
    K = b.shape[0]
    return top_m(-b, b < 0.0, M, np.arange(K, dtype=float))


# ---------------------------------------------------------------------------


class Policy:
    name = "base"
    random_ties = False

    def __init__(self, scenario: JointScenario):
        self.scenario = scenario
        self.fleet = FleetArrays.from_scenario(scenario)
        self.M = scenario.operators
        self.precompute_s = 0.0

    def score_table(self) -> Optional[np.ndarray]:
        """``(K, Smax)`` priority table for kernel rollouts, or None."""
        return None

    def joint_solution(self) -> Optional[JointSolution]:
        return None

    def decide(self, x: np.ndarray, tie_keys: Optional[np.ndarray] = None, rng=None) -> np.ndarray:
        raise NotImplementedError

    def _keys(self, tie_keys, rng):
        if tie_keys is not None:
            return tie_keys
        if self.random_ties:
            return (rng or np.random.default_rng()).random(self.fleet.K)
        return np.arange(self.fleet.K, dtype=float)

    def _decide_from_scores(self, x, tie_keys, rng):
        x = np.asarray(x, dtype=np.int64)
        table = self.score_table()
        sc = table[np.arange(x.size), x]
        elig = (sc > 0.0) & (x != self.fleet.goal)
        return top_m(sc, elig, self.M, self._keys(tie_keys, rng))


class WhittlePolicy(Policy):
    name = "whittle"
    random_ties = True

    def __init__(self, scenario, tables=None):
        super().__init__(scenario)
        t0 = time.perf_counter()
        self.tables = tables if tables is not None else [
            whittle_indices_adaptive_greedy(r, scenario.gamma) for r in scenario.robots]
        self.precompute_s = time.perf_counter() - t0
        self._scores = np.zeros(self.fleet.goal.shape + (self.fleet.cost.shape[1],))
        for k, tab in enumerate(self.tables):
            self._scores[k, :len(tab.w)] = tab.w

    def score_table(self):
        return self._scores

    def decide(self, x, tie_keys=None, rng=None):
        return self._decide_from_scores(x, tie_keys, rng)


class ReactivePolicy(Policy):
    name = "reactive"
    random_ties = True

    def __init__(self, scenario):
        super().__init__(scenario)
        self._scores = self.fleet.fault.astype(float)

    def score_table(self):
        return self._scores

    def decide(self, x, tie_keys=None, rng=None):
        return self._decide_from_scores(x, tie_keys, rng)


class BenefitPolicy(Policy):
    name = "benefit"

    def __init__(self, scenario):
        super().__init__(scenario)
        t0 = time.perf_counter()
        self.b0 = [benefit(r, scenario.gamma, 0.0) for r in scenario.robots]
        self.precompute_s = time.perf_counter() - t0
        self._scores = np.zeros_like(self.fleet.cost[..., 0])
        for k, b in enumerate(self.b0):
            self._scores[k, :len(b)] = -b

    def score_table(self):
        return self._scores

    def decide(self, x, tie_keys=None, rng=None):
        return self._decide_from_scores(x, None, rng)


class FixedPolicy(Policy):
    """Static per-robot action tables; with ``M >= K`` every robot follows its own table."""

    name = "fixed"

    def __init__(self, scenario, actions: Sequence[Sequence[int]]):
        super().__init__(scenario)
        if len(actions) != scenario.K:
            raise ConfigurationError("need one action table per robot")
        self._scores = np.zeros_like(self.fleet.cost[..., 0])
        for k, a in enumerate(actions):
            a = np.asarray(a, dtype=float)
            if a.shape[0] != scenario.robots[k].n_states or not np.isin(a, (0.0, 1.0)).all():
                raise ConfigurationError(f"action table {k} must be 0/1 over all {scenario.robots[k].n_states} states")
            self._scores[k, :a.shape[0]] = a

    def score_table(self):
        return self._scores

    def decide(self, x, tie_keys=None, rng=None):
        return self._decide_from_scores(x, None, rng)


class OptimalPolicy(Policy):
    name = "optimal"

    def __init__(self, scenario, cap: int = DEFAULT_STATE_CAP, backend: Optional[str] = None):
        super().__init__(scenario)
        t0 = time.perf_counter()
        self.solution = solve_joint(scenario, cap=cap, backend=backend)
        self.precompute_s = time.perf_counter() - t0

    def joint_solution(self):
        return self.solution

    def decide(self, x, tie_keys=None, rng=None):
        return self.solution.decide(np.asarray(x, dtype=np.int64))


class MyopicPolicy(Policy):
    """Look-ahead of ``depth`` steps with the all-passive cost-to-go at the horizon.

    Decisions enumerate every feasible allocation (and, for two steps, every
    joint successor state) and take the first minimiser in allocation order.
    ``ops`` counts one-step look-ahead evaluations for instrumentation.
    """

    def __init__(self, scenario, depth: int = 1):
        if depth not in (1, 2):
            raise ConfigurationError("myopic depth must be 1 or 2")
        super().__init__(scenario)
        self.depth = depth
        self.name = f"myopic{depth}"
        t0 = time.perf_counter()
        fl, g = self.fleet, scenario.gamma
        K, Smax = fl.goal.shape[0], fl.cost.shape[1]
        V0 = np.zeros((K, Smax))
        for k, r in enumerate(scenario.robots):
            V0[k, :r.n_states] = all_passive_values(r, g)
        kk = np.arange(K)[:, None, None, None]
        ev = (fl.prob * V0[kk, fl.succ]).sum(axis=3)  # (K, Smax, 2)
        Q = fl.cost + g * ev
        self.h = Q[..., 0]                 # passive one-step value
        self.delta = Q[..., 1] - Q[..., 0]  # extra cost of assisting
        self.allocs = allocations(K, self.M).astype(np.int64)
        self.tol = 1e-11 * (1.0 + K * float(fl.cost.max()) / (1.0 - g))
        self.ops = 0
        self.precompute_s = time.perf_counter() - t0

    def score_table(self):
        # the one-step cost is separable across robots, so ranking by -delta is exact
        return -self.delta if self.depth == 1 else None

    def _feasible(self, x):
        at_goal = x == self.fleet.goal
        return ~(self.allocs[:, at_goal] == 1).any(axis=1)

    def _g1_all(self, X):
        """Min over allocations of the one-step cost, for a batch of joint states ``X``."""
        K = X.shape[1]
        kk = np.arange(K)[None, :]
        H = self.h[kk, X].sum(axis=1)
        D = self.delta[kk, X]
        G = H[:, None] + D @ self.allocs.T
        at_goal = X == self.fleet.goal[None, :]
        infeas = (at_goal.astype(np.int64) @ self.allocs.T) > 0
        G = np.where(infeas, np.inf, G)
        self.ops += int((~infeas).sum())
        return G

    def values(self, x) -> np.ndarray:
        """Look-ahead cost of every allocation at joint state ``x`` (inf if infeasible)."""
        x = np.asarray(x, dtype=np.int64)
        if self.depth == 1:
            return self._g1_all(x[None])[0]
        fl, g = self.fleet, self.scenario.gamma
        K = x.size
        feas = self._feasible(x)
        out = np.full(self.allocs.shape[0], np.inf)
        for ai in np.nonzero(feas)[0]:
            a = self.allocs[ai]
            opts = []
            for k in range(K):
                pr = fl.prob[k, x[k], a[k]]
                sc = fl.succ[k, x[k], a[k]]
                keep = pr > 0.0
                # merge duplicates (Goal self-loop lists the same successor)
                u, inv = np.unique(sc[keep], return_inverse=True)
                opts.append((u, np.bincount(inv, weights=pr[keep])))
            grids = np.meshgrid(*[o[0] for o in opts], indexing="ij")
            pgrids = np.meshgrid(*[o[1] for o in opts], indexing="ij")
            X = np.stack([gr.ravel() for gr in grids], axis=1)
            P = np.prod(np.stack([pg.ravel() for pg in pgrids], axis=1), axis=1)
            inner = self._g1_all(X).min(axis=1)
            c = fl.cost[np.arange(K), x, a].sum()
            out[ai] = c + g * float(P @ inner)
        return out

    def decide(self, x, tie_keys=None, rng=None):
        vals = self.values(x)
        best = vals.min()
        return self.allocs[int(np.argmax(vals <= best + self.tol))].copy()


def make_policy(name: str, scenario: JointScenario, cap: int = DEFAULT_STATE_CAP,
                backend: Optional[str] = None) -> Policy:
    n = canonical_name(name)
    if n == "whittle":
        return WhittlePolicy(scenario)
    if n == "optimal":
        return OptimalPolicy(scenario, cap=cap, backend=backend)
    if n == "reactive":
        return ReactivePolicy(scenario)
    if n == "benefit":
        return BenefitPolicy(scenario)
    return MyopicPolicy(scenario, depth=int(n[-1]))


def myopic_decide(scenario: JointScenario, state, l: int) -> np.ndarray:
    return MyopicPolicy(scenario, l).decide(to_local(scenario, state))


def optimal_joint_policy(scenario: JointScenario, cap: int = DEFAULT_STATE_CAP) -> OptimalPolicy:
    return OptimalPolicy(scenario, cap=cap)
