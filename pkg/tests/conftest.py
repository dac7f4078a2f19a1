import numpy as np
import pytest
from hypothesis import strategies as st

from opalloc.model import JointScenario, RobotModel, TaskCost, TaskTransition


def simplex_pair(rng):
    p, q, _ = rng.dirichlet((1.0, 1.0, 1.0))
    return float(p), float(q)


def random_task(rng, kind=None):
    """General, type1 or type2 task with every outcome probability nonzero-ish."""
    kind = kind or rng.choice(["general", "type1", "type2"])
    p0, q0 = simplex_pair(rng)
    if kind == "type1":
        return TaskTransition.type1(p0, q0, rng.uniform(0.05, 1.0))
    if kind == "type2":
        return TaskTransition.type2(p0, q0, rng.uniform(0.0, 1.0), rng.uniform(0.05, 1.0))
    a, b = simplex_pair(rng)
    c, d = simplex_pair(rng)
    if c + d < 0.05:
        d = 0.05
    return TaskTransition(p0, q0, a, b, c, d)


def random_robot(rng, n_tasks=None, kind=None, costs="table"):
    n = n_tasks or int(rng.integers(1, 5))
    tasks = [random_task(rng, kind) for _ in range(n)]
    if costs == "table":
        cs = [TaskCost(2.0, 4.0)] * n
        sur = 0.75
    else:
        cs = [TaskCost(rng.uniform(0.1, 5.0), rng.uniform(0.1, 8.0)) for _ in range(n)]
        sur = rng.uniform(0.0, 2.0)
    return RobotModel(tasks, cs, sur)


def random_scenario(rng, K, M, n_tasks=None, gamma=0.95, kind="type1"):
    return JointScenario([random_robot(rng, n_tasks, kind) for _ in range(K)], M, gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


prob = st.floats(0.0, 1.0, allow_nan=False)
gammas = st.floats(0.05, 0.995)


@st.composite
def pairs(draw, min_sum=0.0):
    p = draw(prob)
    q = draw(st.floats(0.0, 1.0 - p))
    if p + q < min_sum:
        q = min_sum - p
    return p, q


@st.composite
def tasks(draw):
    p0, q0 = draw(pairs())
    p1n0, q1n0 = draw(pairs())
    p1n1, q1n1 = draw(pairs(min_sum=1e-3))
    return TaskTransition(p0, q0, p1n0, q1n0, p1n1, q1n1)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
