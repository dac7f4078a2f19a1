"""Single-robot controlled Markov chain and the multi-robot scenario container.

A robot works through ``N`` tasks.  While on task ``n`` it is either in the
normal internal state (``s=0``) or stuck in a fault (``s=1``); after the last
task it sits in the absorbing goal state.  States are enumerated canonically

    (1,0), (1,1), (2,0), (2,1), ..., (N,0), (N,1), Goal

so the local index of ``(n, s)`` is ``2*(n-1) + s`` and Goal is ``2*N``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PASSIVE = 0
ACTIVE = 1


class InvalidStateError(ValueError):
    pass


class ModelError(ValueError):
    """Raised when a model or scenario violates its structural invariants."""


@dataclass(frozen=True)
class OperatingState:
    """``task`` is 1-based; ``task=None`` is the goal state."""

    task: Optional[int]
    fault: int = 0

    @property
    def is_goal(self) -> bool:
        return self.task is None

    def __str__(self):
        return "G" if self.task is None else f"({self.task},{self.fault})"

    @classmethod
    def parse(cls, text: str) -> "OperatingState":
        text = text.strip()
        if text in ("G", "Goal", "(G,0)"):
            return GOAL
        n, s = text.strip("()").split(",")
        return cls(int(n), int(s))


GOAL = OperatingState(None, 0)


@dataclass(frozen=True)
class TaskTransition:
    """Transition probabilities for one task.

    ``p`` is the probability of completing the task in one step and ``q`` the
    probability of toggling the internal state.  Under autonomous operation a
    faulted robot never moves, so only the normal-state autonomous pair is
    stored.
    """

    p0: float
    q0: float
    p1n0: float
    q1n0: float
    p1n1: float
    q1n1: float
    kind: str = "general"

    @property
    def r0(self) -> float:
        return 1.0 - self.p0 - self.q0

    @property
    def r1n0(self) -> float:
        return 1.0 - self.p1n0 - self.q1n0

    @property
    def r1n1(self) -> float:
        return 1.0 - self.p1n1 - self.q1n1

    def pq(self, fault: int, action: int) -> tuple[float, float]:
        if action == PASSIVE:
            return (self.p0, self.q0) if fault == 0 else (0.0, 0.0)
        return (self.p1n0, self.q1n0) if fault == 0 else (self.p1n1, self.q1n1)

    def violations(self, task: int) -> list[str]:
        out = []
        for name in ("p0", "q0", "p1n0", "q1n0", "p1n1", "q1n1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not np.isfinite(v):
                out.append(f"probability {name} out of [0,1] at task {task}")
        for a, b in (("p0", "q0"), ("p1n0", "q1n0"), ("p1n1", "q1n1")):
            if getattr(self, a) + getattr(self, b) > 1.0 + 1e-12:
                out.append(f"row sum at task {task} ({a}+{b} > 1)")
        if not self.p1n1 + self.q1n1 > 0.0:
            out.append(f"A2 at task {task}")
        return out

    @classmethod
    def type1(cls, p0, q0, p1) -> "TaskTransition":
        """Fault with continuation: teleoperation succeeds equally from both flags."""
        return cls(p0, q0, p1, 0.0, p1, 0.0, kind="type1")

    @classmethod
    def type2(cls, p0, q0, p1, q1n1) -> "TaskTransition":
        """Fault with reset: the operator can only clear the fault."""
        return cls(p0, q0, p1, 0.0, 0.0, q1n1, kind="type2")


@dataclass(frozen=True)
class TaskCost:
    rho: float
    phi: float


@dataclass(frozen=True)
class RobotModel:
    tasks: tuple[TaskTransition, ...]
    costs: tuple[TaskCost, ...]
    teleop_surcharge: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "costs", tuple(self.costs))

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_states(self) -> int:
        return 2 * len(self.tasks) + 1

    @property
    def goal_index(self) -> int:
        return 2 * len(self.tasks)

    @property
    def max_cost(self) -> float:
        c = [max(tc.rho, tc.phi) for tc in self.costs]
        return max(c, default=0.0) + self.teleop_surcharge

    def state_index(self, state: OperatingState) -> int:
        if state.is_goal:
            return self.goal_index
        if not (1 <= state.task <= self.n_tasks) or state.fault not in (0, 1):
            raise InvalidStateError(f"state {state} invalid for a {self.n_tasks}-task robot")
        return 2 * (state.task - 1) + state.fault

    def state_at(self, index: int) -> OperatingState:
        if index == self.goal_index:
            return GOAL
        if not 0 <= index < self.goal_index:
            raise InvalidStateError(f"state index {index} out of range")
        return OperatingState(index // 2 + 1, index % 2)

    def arrays(self) -> "ArmArrays":
        return ArmArrays.from_model(self)


@dataclass(frozen=True)
class JointScenario:
    robots: tuple[RobotModel, ...]
    operators: int
    gamma: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        if len(self.robots) < 1:
            raise ModelError("a scenario needs at least one robot")
        if not 1 <= self.operators <= len(self.robots):
            raise ModelError(f"operators must be in [1, K={len(self.robots)}], got {self.operators}")
        if not 0.0 < self.gamma < 1.0:
            raise ModelError(f"gamma must lie in (0,1), got {self.gamma}")

    @property
    def K(self) -> int:
        return len(self.robots)

    @property
    def M(self) -> int:
        return self.operators

    @property
    def max_cost(self) -> float:
        return max(r.max_cost for r in self.robots)


def _check_state(model: RobotModel, state: OperatingState) -> None:
    model.state_index(state)


def transition_distribution(model: RobotModel, state: OperatingState, action: int):
    """Successor distribution as a list of ``(OperatingState, probability)``.

    Outcomes are listed in the order advance, toggle, stay; zero-probability
    outcomes are dropped.
    """
    _check_state(model, state)
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action}")
    if state.is_goal:
        return [(GOAL, 1.0)]
    n, s = state.task, state.fault
    p, q = model.tasks[n - 1].pq(s, action)
    nxt = GOAL if n == model.n_tasks else OperatingState(n + 1, 0)
    out = [(nxt, p), (OperatingState(n, 1 - s), q), (state, 1.0 - p - q)]
    return [(x, pr) for x, pr in out if pr > 0.0]


def step_cost(model: RobotModel, state: OperatingState, action: int) -> float:
    _check_state(model, state)
    if state.is_goal:
        return 0.0
    c = model.costs[state.task - 1]
    base = c.phi if state.fault else c.rho
    return base + (model.teleop_surcharge if action else 0.0)


def enumerate_states(model: RobotModel) -> list[OperatingState]:
    return [model.state_at(i) for i in range(model.n_states)]


def validate(model: RobotModel) -> list[str]:
    """Every violated invariant of ``model``; an empty list means the model is valid."""
    out = []
    if len(model.tasks) == 0:
        out.append("model has no tasks")
    if len(model.tasks) != len(model.costs):
        out.append(f"length mismatch: {len(model.tasks)} tasks vs {len(model.costs)} costs")
    for n, tr in enumerate(model.tasks, start=1):
        out.extend(tr.violations(n))
    for n, c in enumerate(model.costs, start=1):
        if not (c.rho >= 0 and c.phi >= 0):
            out.append(f"negative cost at task {n}")
    if not model.teleop_surcharge >= 0:
        out.append("negative teleoperation surcharge")
    return out


def validate_scenario(scenario: JointScenario) -> list[str]:
    out = []
    for k, robot in enumerate(scenario.robots):
        out.extend(f"robot {k}: {v}" for v in validate(robot))
    return out


@dataclass(frozen=True)
class ArmArrays:
    """Dense array form of one robot used by the numeric kernels.

    ``succ[i, a, o]`` / ``prob[i, a, o]`` give the successor local index and its
    probability for outcome ``o`` in (advance, toggle, stay).
    """

    succ: np.ndarray
    prob: np.ndarray
    cost: np.ndarray
    goal: int
    fault: np.ndarray = field(repr=False)

    @classmethod
    def from_model(cls, model: RobotModel) -> "ArmArrays":
        S = model.n_states
        succ = np.zeros((S, 2, 3), dtype=np.int64)
        prob = np.zeros((S, 2, 3))
        cost = np.zeros((S, 2))
        fault = np.zeros(S, dtype=bool)
        for i in range(S):
            x = model.state_at(i)
            for a in (0, 1):
                cost[i, a] = step_cost(model, x, a)
                if x.is_goal:
                    succ[i, a] = i
                    prob[i, a] = (0.0, 0.0, 1.0)
                    continue
                p, q = model.tasks[x.task - 1].pq(x.fault, a)
                succ[i, a] = (2 * x.task, i ^ 1, i)
                prob[i, a] = (p, q, 1.0 - p - q)
            fault[i] = (not x.is_goal) and x.fault == 1
        return cls(succ, prob, cost, S - 1, fault)

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    def matrix(self, action: int) -> np.ndarray:
        """Full transition matrix under a constant action."""
        S = self.n_states
        T = np.zeros((S, S))
        for o in range(3):
            np.add.at(T, (np.arange(S), self.succ[:, action, o]), self.prob[:, action, o])
        return T

    def policy_matrix(self, policy: Sequence[int]) -> np.ndarray:
        S = self.n_states
        pol = np.asarray(policy, dtype=np.int64)
        T = np.zeros((S, S))
        rows = np.arange(S)
        for o in range(3):
            np.add.at(T, (rows, self.succ[rows, pol, o]), self.prob[rows, pol, o])
        return T
