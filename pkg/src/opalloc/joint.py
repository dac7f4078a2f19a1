"""Fleet-level arrays, the joint product encoding and the exact joint dynamic program."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import ArmArrays, JointScenario

DEFAULT_STATE_CAP = 1_000_000


class StateSpaceTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class FleetArrays:
    """Per-robot arm arrays padded to a common state count.

    ``cum[k, i, a]`` holds ``(p, p+q)`` so a uniform draw ``u`` advances when
    ``u < p``, toggles when ``u < p+q`` and stays otherwise.
    """

    succ: np.ndarray   # (K, Smax, 2, 3) int64
    cum: np.ndarray    # (K, Smax, 2, 2)
    prob: np.ndarray   # (K, Smax, 2, 3)
    cost: np.ndarray   # (K, Smax, 2)
    goal: np.ndarray   # (K,) int64
    fault: np.ndarray  # (K, Smax) bool

    @classmethod
    def from_scenario(cls, scenario: JointScenario) -> "FleetArrays":
        return cls.from_arms([r.arrays() for r in scenario.robots])

    @classmethod
    def from_arms(cls, arms: list[ArmArrays]) -> "FleetArrays":
        K = len(arms)
        Smax = max(a.n_states for a in arms)
        succ = np.zeros((K, Smax, 2, 3), dtype=np.int64)
        prob = np.zeros((K, Smax, 2, 3))
        cost = np.zeros((K, Smax, 2))
        fault = np.zeros((K, Smax), dtype=bool)
        goal = np.zeros(K, dtype=np.int64)
        for k, a in enumerate(arms):
            S = a.n_states
            succ[k, :S], prob[k, :S], cost[k, :S], fault[k, :S] = a.succ, a.prob, a.cost, a.fault
            # padding rows behave like Goal
            succ[k, S:] = a.goal
            prob[k, S:, :, 2] = 1.0
            goal[k] = a.goal
        cum = np.stack([prob[..., 0], prob[..., 0] + prob[..., 1]], axis=-1)
        return cls(succ, cum, prob, cost, goal, fault)

    @property
    def K(self) -> int:
        return self.goal.shape[0]

    @property
    def radix(self) -> np.ndarray:
        return self.goal + 1


def product_size(scenario_or_fleet) -> int:
    fl = scenario_or_fleet if isinstance(scenario_or_fleet, FleetArrays) else FleetArrays.from_scenario(scenario_or_fleet)
    return int(np.prod(fl.radix.astype(object)))


def allocations(K: int, M: int) -> np.ndarray:
    """All binary vectors with at most ``M`` ones, by size and then lexicographically."""
    rows = [np.zeros(K, dtype=np.int8)]
    for m in range(1, min(M, K) + 1):
        for combo in itertools.combinations(range(K), m):
            a = np.zeros(K, dtype=np.int8)
            a[list(combo)] = 1
            rows.append(a)
    return np.array(rows, dtype=np.int8)


def encode(fleet: FleetArrays, local) -> np.ndarray:
    local = np.asarray(local, dtype=np.int64)
    return np.ravel_multi_index(tuple(np.moveaxis(local, -1, 0)), tuple(fleet.radix))


def decode(fleet: FleetArrays, code) -> np.ndarray:
    return np.stack(np.unravel_index(np.asarray(code), tuple(fleet.radix)), axis=-1)


def strides(fleet: FleetArrays) -> np.ndarray:
    r = fleet.radix
    s = np.ones(fleet.K, dtype=np.int64)
    for k in range(fleet.K - 2, -1, -1):
        s[k] = s[k + 1] * r[k + 1]
    return s


def tie_tol(fleet: FleetArrays, gamma: float) -> float:
    return 1e-11 * (1.0 + fleet.K * float(fleet.cost.max()) / (1.0 - gamma))


@dataclass
class JointSolution:
    V: np.ndarray          # (prod S_k,) optimal values
    action: np.ndarray     # (prod S_k,) index into ``allocs``
    allocs: np.ndarray     # (A, K)
    fleet: FleetArrays
    gamma: float

    def decide(self, local) -> np.ndarray:
        return self.allocs[self.action[encode(self.fleet, local)]].astype(np.int64)

    def value(self, local) -> float:
        return float(self.V[encode(self.fleet, local)])


def _block_order(fleet: FleetArrays):
    n_tasks = fleet.goal // 2
    ranges = [range(n + 1) for n in n_tasks]
    taus = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, fleet.K)
    order = np.argsort(-taus.sum(axis=1), kind="stable")
    return taus[order], n_tasks


def solve_joint(scenario: JointScenario, cap: int = DEFAULT_STATE_CAP, backend: str | None = None) -> JointSolution:
    """Exact optimal values and decisions of the joint problem.

    Task indices never decrease, so joint states are grouped into blocks that
    share a task vector.  Blocks are solved from the most advanced backwards;
    inside a block only the fault flags move, giving a small MDP that policy
    iteration solves exactly.  Ties between allocations go to the earliest in
    :func:`allocations` order.
    """
    fleet = FleetArrays.from_scenario(scenario)
    size = product_size(fleet)
    if size > cap:
        raise StateSpaceTooLarge(f"joint state space has {size} states, cap is {cap}; use the index policy")
    K = fleet.K
    allocs = allocations(K, scenario.operators)
    masks = allocs.astype(np.int64) @ (1 << np.arange(K, dtype=np.int64))
    V = np.zeros(size)
    action = np.zeros(size, dtype=np.int64)
    taus, _ = _block_order(fleet)
    kernels.get(backend).joint_dp(fleet.prob, fleet.cost, fleet.goal, strides(fleet), taus, masks,
                                  float(scenario.gamma), tie_tol(fleet, scenario.gamma), V, action)
    return JointSolution(V, action, allocs, fleet, scenario.gamma)


def dense_value_iteration(scenario: JointScenario, eps: float = 1e-9, max_iter: int = 2_000_000):
    """Reference solver: plain value iteration over the full product space.

    Only meant for tiny fleets; it builds the joint successor lists explicitly.
    """
    fleet = FleetArrays.from_scenario(scenario)
    size = product_size(fleet)
    g, K = scenario.gamma, fleet.K
    allocs = allocations(K, scenario.operators)
    states = decode(fleet, np.arange(size))  # (size, K)
    at_goal = states == fleet.goal[None, :]
    feasible = ~((allocs[None, :, :] == 1) & at_goal[:, None, :]).any(axis=2)  # (size, A)
    outcomes = np.array(list(itertools.product(range(3), repeat=K)), dtype=np.int64)
    kk = np.arange(K)
    Qc = np.zeros((size, allocs.shape[0]))
    succ_codes = np.zeros((size, allocs.shape[0], outcomes.shape[0]), dtype=np.int64)
    succ_prob = np.ones((size, allocs.shape[0], outcomes.shape[0]))
    for ai, a in enumerate(allocs):
        a = a.astype(np.int64)
        Qc[:, ai] = fleet.cost[kk[None, :], states, a[None, :]].sum(axis=1)
        nxt = fleet.succ[kk[None, None, :], states[:, None, :], a[None, None, :], outcomes[None, :, :]]
        pr = fleet.prob[kk[None, None, :], states[:, None, :], a[None, None, :], outcomes[None, :, :]]
        succ_codes[:, ai] = encode(fleet, nxt)
        succ_prob[:, ai] = pr.prod(axis=2)
    Qc = np.where(feasible, Qc, np.inf)
    V = np.zeros(size)
    stop = eps * (1.0 - g) / (2.0 * g)
    for _ in range(max_iter):
        Vn = (Qc + g * (succ_prob * V[succ_codes]).sum(axis=2)).min(axis=1)
        if np.max(np.abs(Vn - V)) <= stop:
            return Vn
        V = Vn
    raise RuntimeError("dense value iteration did not converge")
