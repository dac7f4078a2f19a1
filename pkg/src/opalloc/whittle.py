"""Single-arm machinery: the penalised MDP, policy evaluation and Whittle indices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .model import ArmArrays, OperatingState, RobotModel

log = logging.getLogger(__name__)

VI_EPS = 1e-9
DELTA_N_TOL = 1e-9


class NonConvergenceError(RuntimeError):
    pass


class DegenerateModelError(RuntimeError):
    pass


class NonIndexableError(RuntimeError):
    pass


def _arrays(model) -> ArmArrays:
    return model if isinstance(model, ArmArrays) else model.arrays()


def tie_tolerance(arr: ArmArrays, gamma: float, lam) -> np.ndarray:
    """Benefit magnitudes below this are treated as exact ties (passive wins)."""
    scale = (float(arr.cost.max()) + np.abs(lam)) / (1.0 - gamma)
    return 1e-13 * (1.0 + scale)


def _q_values(arr: ArmArrays, gamma: float, lam: np.ndarray, V: np.ndarray) -> np.ndarray:
    # V: (L, S) -> Q: (L, S, 2)
    nxt = V[:, arr.succ]  # (L, S, 2, 3)
    ev = np.einsum("lsao,sao->lsa", nxt, arr.prob)
    return arr.cost[None] + lam[:, None, None] * np.array([0.0, 1.0]) + gamma * ev


GOAL_FREE = True


def _bellman(arr: ArmArrays, Q: np.ndarray) -> np.ndarray:
    V = Q.min(axis=2)
    if not GOAL_FREE:
        V[:, arr.goal] = Q[:, arr.goal, 0]
    return V


def solve_arm_exact(arr: ArmArrays, gamma: float, lam) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and Q-values for a batch of penalties.

    Task ``n`` only exits to task ``n+1`` (or Goal), so working backwards each
    ``{(n,0),(n,1)}`` pair is a two-state MDP with a known terminal value.  All
    four stationary policies of that pair are evaluated in closed form and the
    componentwise minimum is the optimal value.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    L, S = lam.shape[0], arr.n_states
    V = np.zeros((L, S))
    g = gamma
    if GOAL_FREE:
        V[:, arr.goal] = np.minimum(lam, 0.0) / (1.0 - gamma)
    for z in range(S - 3, -1, -2):
        e, zp = z + 1, z + 2
        vzp = V[:, zp]
        best_z = np.full(L, np.inf)
        best_e = np.full(L, np.inf)
        for i in (0, 1):
            pz, qz, rz = arr.prob[z, i]
            bz = arr.cost[z, i] + lam * i + g * pz * vzp
            for j in (0, 1):
                pe, qe, re = arr.prob[e, j]
                be = arr.cost[e, j] + lam * j + g * pe * vzp
                det = (1.0 - g * rz) * (1.0 - g * re) - g * g * qz * qe
                vz = (bz * (1.0 - g * re) + g * qz * be) / det
                ve = ((1.0 - g * rz) * be + g * qe * bz) / det
                np.minimum(best_z, vz, out=best_z)
                np.minimum(best_e, ve, out=best_e)
        V[:, z] = best_z
        V[:, e] = best_e
    return V, _q_values(arr, gamma, lam, V)


def value_iteration(arr: ArmArrays, gamma: float, lam: float, eps: float = VI_EPS,
                    max_iter: int = 1_000_000) -> np.ndarray:
    """Plain value iteration, stopped once the sup-norm change is below eps(1-g)/(2g)."""
    lam_a = np.array([float(lam)])
    V = np.zeros((1, arr.n_states))
    stop = eps * (1.0 - gamma) / (2.0 * gamma)
    for _ in range(max_iter):
        Vn = _bellman(arr, _q_values(arr, gamma, lam_a, V))
        if np.max(np.abs(Vn - V)) <= stop:
            return Vn[0]
        V = Vn
    raise NonConvergenceError(f"value iteration did not converge in {max_iter} sweeps")


def _active_mask(arr: ArmArrays, gamma: float, lam, Q: np.ndarray) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    B = Q[..., 1] - Q[..., 0]
    return B < -tie_tolerance(arr, gamma, lam)[:, None]


def greedy_policy(arr: ArmArrays, gamma: float, lam, Q: np.ndarray) -> np.ndarray:
    """Argmin of Q with ties (within round-off) resolved towards passive; Goal is always 0."""
    pol = _active_mask(arr, gamma, lam, Q).astype(np.int64)
    if not GOAL_FREE:
        pol[:, arr.goal] = 0
    return pol


def solve_single_arm(model, gamma: float, lam: float, method: str = "exact"):
    """Value vector and optimal policy of the arm penalised by ``lam`` per active step.

    ``method="vi"`` uses value iteration instead of the exact backward solve;
    both satisfy the Bellman equation to within ``VI_EPS``.
    """
    arr = _arrays(model)
    lam_a = np.array([float(lam)])
    if method == "exact":
        V, Q = solve_arm_exact(arr, gamma, lam_a)
    elif method == "vi":
        V = value_iteration(arr, gamma, lam)[None]
        Q = _q_values(arr, gamma, lam_a, V)
    else:
        raise ValueError(f"unknown method {method!r}")
    return V[0], greedy_policy(arr, gamma, lam_a, Q)[0]


def bellman_residual(model, gamma: float, lam: float, V: np.ndarray) -> float:
    arr = _arrays(model)
    lam_a = np.array([float(lam)])
    Q = _q_values(arr, gamma, lam_a, np.asarray(V, dtype=float)[None])
    return float(np.max(np.abs(_bellman(arr, Q)[0] - V)))


def benefit(model, gamma: float, lam: float, state=None):
    """``Q(x,1) - Q(x,0)`` at penalty ``lam``; a vector over all states if ``state`` is None."""
    arr = _arrays(model)
    lam_a = np.array([float(lam)])
    _, Q = solve_arm_exact(arr, gamma, lam_a)
    B = Q[0, :, 1] - Q[0, :, 0]
    if state is None:
        return B
    idx = state if isinstance(state, (int, np.integer)) else model.state_index(state)
    return float(B[idx])


def passive_sets(arr: ArmArrays, gamma: float, lambdas) -> np.ndarray:
    """Boolean matrix ``[lambda, state]``: True where ``B_lambda(x) >= 0``.

    Goal belongs to the passive set exactly when ``lambda >= 0``.
    """
    lam = np.asarray(lambdas, dtype=float)
    _, Q = solve_arm_exact(arr, gamma, lam)
    return ~_active_mask(arr, gamma, lam, Q)


# ---------------------------------------------------------------------------
# policy evaluation


def policy_transition_matrix(model, policy: Sequence[int]) -> np.ndarray:
    return _arrays(model).policy_matrix(policy)


@dataclass
class PolicyEvaluation:
    D: np.ndarray
    N: np.ndarray
    residual: float = 0.0


def evaluate_policy(model, policy: Sequence[int], gamma: float) -> PolicyEvaluation:
    """Discounted cost ``D`` and discounted active-step count ``N`` of a fixed arm policy."""
    arr = _arrays(model)
    pol = np.asarray(policy, dtype=np.int64)
    S = arr.n_states
    A = np.eye(S) - gamma * arr.policy_matrix(pol)
    rhs = np.column_stack([arr.cost[np.arange(S), pol], pol.astype(float)])
    lu = lu_factor(A)
    sol = lu_solve(lu, rhs)
    res = float(np.max(np.abs(A @ sol - rhs)))
    assert res <= 1e-10 * (1.0 + np.abs(rhs).max()), f"policy evaluation residual {res}"
    return PolicyEvaluation(sol[:, 0], sol[:, 1], res)


def all_passive_values(model, gamma: float) -> np.ndarray:
    arr = _arrays(model)
    return evaluate_policy(arr, np.zeros(arr.n_states, dtype=np.int64), gamma).D


# ---------------------------------------------------------------------------
# Whittle indices


@dataclass
class IndexTable:
    """Whittle index of every state in canonical order, plus the audit log of rounds."""

    w: np.ndarray
    rounds: list = field(default_factory=list)  # [(lambda*, [state indices])]
    warning: Optional[str] = None

    def __getitem__(self, i):
        return self.w[i]

    def __len__(self):
        return len(self.w)

    def monotone(self, tol: float = 1e-9) -> bool:
        lams = [lam for lam, _ in self.rounds]
        return all(b >= a - tol * (1 + abs(a)) for a, b in zip(lams, lams[1:]))


def _policy_vector(S: int, goal: int, passive: Sequence[int]) -> np.ndarray:
    pol = np.ones(S, dtype=np.int64)
    pol[list(passive)] = 0
    if not GOAL_FREE:
        pol[goal] = 0
    return pol


def _batch_evaluate(arr: ArmArrays, gamma: float, policies: np.ndarray):
    # policies: (m, S) -> D, N each (m, S)
    m, S = policies.shape
    rows = np.arange(S)
    A = np.broadcast_to(np.eye(S), (m, S, S)).copy()
    for o in range(3):
        succ = arr.succ[rows[None, :], policies, o]
        pr = arr.prob[rows[None, :], policies, o]
        np.add.at(A, (np.arange(m)[:, None], rows[None, :], succ), -gamma * pr)
    rhs = np.stack([arr.cost[rows[None, :], policies], policies.astype(float)], axis=2)
    sol = np.linalg.solve(A, rhs)
    return sol[..., 0], sol[..., 1]


def whittle_indices_adaptive_greedy(model, gamma: float) -> IndexTable:
    """Whittle indices by the adaptive greedy scheme.

    Starting from the all-active policy, each round finds, for every state
    ``y`` not yet passive, the smallest penalty at which switching ``y`` to
    passive breaks even, absorbs the minimisers into the passive set and
    assigns them that penalty as their index.  Goal is pinned at index 0.
    """
    arr = _arrays(model)
    S, goal = arr.n_states, arr.goal
    w = np.full(S, np.nan)
    passive: list[int] = []
    rounds = []
    remaining = [x for x in range(S)]
    D_P, N_P = _batch_evaluate(arr, gamma, _policy_vector(S, goal, passive)[None])
    D_P, N_P = D_P[0], N_P[0]
    while remaining:
        cands = [y for y in remaining if y != goal or GOAL_FREE]
        mu = {}
        if cands:
            pols = np.stack([_policy_vector(S, goal, passive + [y]) for y in cands])
            D_Y, N_Y = _batch_evaluate(arr, gamma, pols)
            for c, y in enumerate(cands):
                dN = N_P - N_Y[c]
                mask = dN > DELTA_N_TOL
                if mask.any():
                    mu[y] = float(np.min(-(D_P[mask] - D_Y[c][mask]) / dN[mask]))
        if goal in remaining and not GOAL_FREE:
            mu[goal] = 0.0
        if not mu:
            raise DegenerateModelError("no remaining state changes the active-step count")
        lam_star = min(mu.values()) + 0.0
        tol = 1e-9 * (1.0 + abs(lam_star))
        Y = sorted(y for y, v in mu.items() if v <= lam_star + tol)
        for y in Y:
            w[y] = lam_star
            remaining.remove(y)
        passive.extend(Y)
        rounds.append((lam_star, Y))
        if remaining:
            D_P, N_P = _batch_evaluate(arr, gamma, _policy_vector(S, goal, passive)[None])
            D_P, N_P = D_P[0], N_P[0]
    table = IndexTable(w, rounds)
    if not table.monotone():
        table.warning = "non-monotone round penalties: arm may not be indexable"
        log.warning(table.warning)
    return table


def lambda_bracket(arr: ArmArrays, gamma: float) -> tuple[float, float]:
    c = 2.0 * float(arr.cost.max()) / (1.0 - gamma)
    c = max(c, 1.0)
    return -c, c


def whittle_indices_bisection(model, gamma: float, tol: float = 1e-8,
                              n_probe: int = 16) -> np.ndarray:
    """Whittle indices of all states by bisecting each state's passive-set membership.

    All states are bisected simultaneously: each step solves the arm once per
    state at that state's own midpoint penalty.
    """
    arr = _arrays(model)
    S = arr.n_states
    lo_v, hi_v = lambda_bracket(arr, gamma)
    # probe the bracket so a non-monotone membership pattern is caught
    grid = np.linspace(lo_v, hi_v, n_probe)
    P = passive_sets(arr, gamma, grid)
    for x in range(S):
        col = P[:, x]
        first = np.argmax(col) if col.any() else len(col)
        if not col[first:].all():
            raise NonIndexableError(f"passive membership of state {x} is not monotone in lambda")
    lo = np.full(S, lo_v)
    hi = np.full(S, hi_v)
    for _ in range(60):
        if not passive_sets(arr, gamma, lo)[np.arange(S), np.arange(S)].any():
            break
        lo = np.where(passive_sets(arr, gamma, lo)[np.arange(S), np.arange(S)], 2 * lo, lo)
    for _ in range(60):
        inside = passive_sets(arr, gamma, hi)[np.arange(S), np.arange(S)]
        if inside.all():
            break
        hi = np.where(inside, hi, 2 * hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        ok = passive_sets(arr, gamma, mid)[np.arange(S), np.arange(S)]
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return 0.5 * (lo + hi)


def whittle_index_bisection(model, gamma: float, state, tol: float = 1e-8) -> float:
    idx = state if isinstance(state, (int, np.integer)) else model.state_index(state)
    return float(whittle_indices_bisection(model, gamma, tol)[idx])


def state_labels(model: RobotModel) -> list[str]:
    return [str(model.state_at(i)) for i in range(model.n_states)]


