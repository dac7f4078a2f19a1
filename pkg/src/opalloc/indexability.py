"""Closed-form indexability conditions and a brute-force passive-set sweep."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import RobotModel, TaskTransition
from .whittle import _arrays, lambda_bracket, passive_sets, solve_arm_exact, greedy_policy


class DegenerateCoefficientError(ArithmeticError):
    pass


class NotType1Error(ValueError):
    pass


class NotType2Error(ValueError):
    pass


class StraddleError(RuntimeError):
    """The finite-difference interval crosses a policy switch point."""


@dataclass(frozen=True)
class CoefficientSet:
    alpha1: float
    beta0: float
    beta1: float
    b01: float
    b11: float
    alpha0: float = 1.0
    b00: float = 1.0
    b10: float = 1.0


def _check(name, den):
    den = np.asarray(den)
    if np.any(np.abs(den) < 1e-300) or not np.all(np.isfinite(den)):
        raise DegenerateCoefficientError(f"denominator of {name} vanishes")
    return den


def coefficient_arrays(p0, q0, p1n0, q1n0, p1n1, q1n1, gamma) -> dict:
    """Vectorised coefficient family; arguments broadcast against each other."""
    g = np.asarray(gamma, dtype=float)
    p0, q0, p1n0, q1n0, p1n1, q1n1 = (np.asarray(v, dtype=float) for v in (p0, q0, p1n0, q1n0, p1n1, q1n1))
    r0 = 1.0 - p0 - q0
    r1n0 = 1.0 - p1n0 - q1n0
    r1n1 = 1.0 - p1n1 - q1n1
    d_fault = _check("alpha1", 1.0 - g * r1n1)
    den = _check("alpha1", 1.0 - g * r1n1 - g * r0 + g * g * r1n1 * r0 - g * g * q0 * q1n1)
    inner = g * r1n0 + g * g * q1n0 * q1n1 / d_fault - 1.0
    alpha1 = 1.0 + g * q1n0 / d_fault + g * q0 * inner / den
    beta0 = (g * (p1n0 - p0) + g * g * (p0 * r1n0 - p1n0 * r0)) / _check("beta0", 1.0 - g * r0)
    # the nested form of beta1 does not satisfy the identity below; the expanded one does
    beta1 = g * (1.0 - g) * (q0 - q1n0 + r0 - r1n0 + g * q0 * q1n1 - g * q1n0 * q1n1
                             - g * q0 * r1n0 + g * q1n0 * r0 - g * r0 * r1n1 + g * r1n0 * r1n1) / den
    b01 = (1.0 - g * r0) / _check("b01", 1.0 - g * r1n0)
    den11 = _check("b11", 1.0 - g * r1n1 - g * r1n0 + g * g * r1n1 * r1n0 - g * g * q1n1 * q1n0)
    b11 = den / den11
    return dict(alpha1=alpha1, beta0=beta0, beta1=beta1, b01=b01, b11=b11)


def coefficients(tr: TaskTransition, gamma: float) -> CoefficientSet:
    if not 0.0 < gamma < 1.0:
        raise DegenerateCoefficientError(f"gamma must lie in (0,1), got {gamma}")
    c = coefficient_arrays(tr.p0, tr.q0, tr.p1n0, tr.q1n0, tr.p1n1, tr.q1n1, gamma)
    return CoefficientSet(**{k: float(v) for k, v in c.items()})


def condition_arrays(c: dict, gamma) -> np.ndarray:
    return (c["alpha1"] >= 0.0) & (c["beta0"] / (1.0 - np.asarray(gamma)) >= -1.0)


@dataclass
class IndexabilityVerdict:
    method: str
    indexable: bool
    per_task: list = field(default_factory=list)  # (task, alpha1, beta0, passed)
    lambda_grid: Optional[list] = None
    violations: list = field(default_factory=list)  # (state index, lambda)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def theorem_check(model: RobotModel, gamma: float) -> IndexabilityVerdict:
    """Sufficient closed-form test: every task needs alpha1 >= 0 and beta0/(1-gamma) >= -1."""
    rows = []
    for n, tr in enumerate(model.tasks, start=1):
        c = coefficients(tr, gamma)
        ok = bool(c.alpha1 >= 0.0 and c.beta0 / (1.0 - gamma) >= -1.0)
        rows.append((n, c.alpha1, c.beta0, ok))
    return IndexabilityVerdict("theorem", all(r[3] for r in rows), rows)


def _is_type1(tr: TaskTransition, tol=1e-12) -> bool:
    return abs(tr.p1n1 - tr.p1n0) <= tol and abs(tr.q1n0) <= tol and abs(tr.q1n1) <= tol


def _is_type2(tr: TaskTransition, tol=1e-12) -> bool:
    return abs(tr.q1n0) <= tol and abs(tr.p1n1) <= tol


def type1_coefficients(tr: TaskTransition, gamma: float) -> tuple[float, float]:
    """Simplified ``(alpha1, beta0)`` for the fault-with-continuation shape."""
    if not _is_type1(tr):
        raise NotType1Error("task needs p1n1 == p1n0 and q1n0 == q1n1 == 0")
    g, r0, r1, q0 = gamma, tr.r0, tr.r1n0, tr.q0
    alpha1 = 1.0 - g * q0 / (1.0 - g * r0)
    beta0 = (g * (1.0 - g) * (r0 - r1) + g * q0 * (1.0 - g * r1)) / (1.0 - g * r0)
    return alpha1, beta0


def type2_bounds(tr: TaskTransition, gamma: float) -> tuple[float, float]:
    """Raw ``(q1n1_min, q0_max)`` for the fault-with-reset shape (not clamped)."""
    if not _is_type2(tr):
        raise NotType2Error("task needs q1n0 == 0 and p1n1 == 0")
    return type2_bound_arrays(tr.p0, tr.q0, tr.p1n0, gamma)


def type2_bound_arrays(p0, q0, p1n0, gamma):
    g = gamma
    r0 = 1.0 - np.asarray(p0) - np.asarray(q0)
    den = _check("q1n1_min", 1.0 - g * r0 - g * q0)
    q1n1_min = 1.0 - 1.0 / g + g * q0 * p1n0 / den
    q0_max = (1.0 - g * r0) / (g * (1.0 + g * p1n0))
    if np.ndim(q1n1_min) == 0:
        return float(q1n1_min), float(q0_max)
    return q1n1_min, q0_max


# ---------------------------------------------------------------------------
# numeric sweep


def default_grid(model, gamma: float, n_points: int = 400) -> np.ndarray:
    lo, hi = lambda_bracket(_arrays(model), gamma)
    return np.linspace(lo, hi, n_points)


def _containment_failures(P: np.ndarray) -> list[tuple[int, int]]:
    bad = P[:-1] & ~P[1:]
    return [(int(i), int(x)) for i, x in zip(*np.nonzero(bad))]


def numeric_verify(model, gamma: float, lambda_grid=None, n_points: int = 400,
                   refine: int = 10) -> IndexabilityVerdict:
    """Check that the passive set only grows along an increasing penalty grid.

    Each apparent failure is re-examined on a ``refine``-times finer grid over
    the neighbouring cells and reported only if it persists there.
    """
    arr = _arrays(model)
    grid = default_grid(arr, gamma, n_points) if lambda_grid is None else np.asarray(lambda_grid, float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be strictly increasing with at least two points")
    P = passive_sets(arr, gamma, grid)
    notes = []
    if P[0].any() or not P[-1].all():
        notes.append("grid does not bracket every index: passive set is not empty at the lowest "
                     "penalty or not full at the highest")
    violations = []
    for i, x in _containment_failures(P):
        a, b = grid[max(i - 1, 0)], grid[min(i + 2, grid.size - 1)]
        fine = np.linspace(a, b, refine * (min(i + 2, grid.size - 1) - max(i - 1, 0)) + 1)
        Pf = passive_sets(arr, gamma, fine)[:, x]
        drops = np.nonzero(Pf[:-1] & ~Pf[1:])[0]
        if drops.size:
            violations.append((x, float(fine[drops[0]])))
    return IndexabilityVerdict("numeric", not violations, [], grid.tolist(), violations, notes)


# ---------------------------------------------------------------------------
# finite-difference probes


def _probe_setup(model, gamma, lam, h):
    arr = _arrays(model)
    if h is None:
        h = 1e-4 * (1.0 + abs(lam))
    lams = np.array([lam, lam + h], dtype=float)
    V, Q = solve_arm_exact(arr, gamma, lams)
    pol = greedy_policy(arr, gamma, lams, Q)
    if np.any(pol[0] != pol[1]):
        raise StraddleError(f"optimal policy changes inside [{lam}, {lam + h}]")
    return arr, h, V, Q


def benefit_derivative_probe(model, gamma: float, lam: float, state: int, h: Optional[float] = None) -> float:
    """Forward-difference slope of the benefit ``Q(x,1)-Q(x,0)`` in the penalty."""
    _, h, _, Q = _probe_setup(model, gamma, lam, h)
    B = Q[:, state, 1] - Q[:, state, 0]
    return float((B[1] - B[0]) / h)


def value_derivative_probe(model, gamma: float, lam: float, state: int, h: Optional[float] = None) -> float:
    """Forward-difference slope of the optimal value in the penalty."""
    _, h, V, _ = _probe_setup(model, gamma, lam, h)
    return float((V[1, state] - V[0, state]) / h)

