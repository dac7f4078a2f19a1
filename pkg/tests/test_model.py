import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opalloc.model import (GOAL, InvalidStateError, JointScenario, ModelError, OperatingState, RobotModel,
                           TaskCost, TaskTransition, enumerate_states, step_cost, transition_distribution,
                           validate)
from opalloc.simulator import TABLE_I, GeneratorConfig, generate_robot

from conftest import random_robot, tasks


def one_task(tr, rho=2.0, phi=4.0, sur=0.75):
    return RobotModel([tr], [TaskCost(rho, phi)], sur)


def test_goal_absorbs_under_both_modes():
    m = one_task(TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3))
    for a in (0, 1):
        assert transition_distribution(m, GOAL, a) == [(GOAL, 1.0)]
        assert step_cost(m, GOAL, a) == 0.0


def test_fault_stays_put_without_operator():
    tr = TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3)
    m = RobotModel([tr] * 3, [TaskCost(2, 4)] * 3, 0.75)
    assert transition_distribution(m, OperatingState(3, 1), 0) == [(OperatingState(3, 1), 1.0)]


def test_normal_state_readout():
    m = one_task(TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3))
    d = transition_distribution(m, OperatingState(1, 0), 0)
    assert d[0] == (GOAL, 0.4)
    assert d[1] == (OperatingState(1, 1), 0.25)
    assert d[2][0] == OperatingState(1, 0) and d[2][1] == pytest.approx(0.35, abs=1e-15)


def test_intermediate_task_advances_to_next():
    tr = TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3)
    m = RobotModel([tr] * 2, [TaskCost(2, 4)] * 2, 0.75)
    assert transition_distribution(m, OperatingState(1, 1), 1)[0] == (OperatingState(2, 0), 0.6)


def test_step_costs():
    m = RobotModel([TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3)] * 2, [TaskCost(2.0, 4.0)] * 2, 0.75)
    assert step_cost(m, OperatingState(1, 1), 1) == 4.75
    assert step_cost(m, OperatingState(2, 0), 0) == 2.0
    assert step_cost(m, OperatingState(2, 0), 1) == 2.75
    assert step_cost(m, OperatingState(2, 1), 0) == 4.0


def test_invalid_states_raise():
    m = one_task(TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3))
    with pytest.raises(InvalidStateError):
        transition_distribution(m, OperatingState(2, 0), 0)
    with pytest.raises(InvalidStateError):
        step_cost(m, OperatingState(1, 2), 0)
    with pytest.raises(InvalidStateError):
        m.state_at(5)


def test_enumeration_order():
    m1 = one_task(TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3))
    assert enumerate_states(m1) == [OperatingState(1, 0), OperatingState(1, 1), GOAL]
    m7 = RobotModel([m1.tasks[0]] * 7, [m1.costs[0]] * 7, 0.75)
    assert len(enumerate_states(m7)) == 15
    m3 = RobotModel([m1.tasks[0]] * 3, [m1.costs[0]] * 3, 0.75)
    assert enumerate_states(m3).index(GOAL) == 6
    for i, x in enumerate(enumerate_states(m7)):
        assert m7.state_index(x) == i


def test_state_parse_roundtrip():
    for text in ("(3,1)", "G"):
        assert str(OperatingState.parse(text)) == text


def test_validate_reports_violations():
    good = TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3)
    no_a2 = TaskTransition(0.4, 0.25, 0.5, 0.1, 0.0, 0.0)
    m = RobotModel([good, no_a2], [TaskCost(2, 4)] * 2, 0.75)
    assert validate(m) == ["A2 at task 2"]
    bad_row = TaskTransition(0.7, 0.5, 0.5, 0.1, 0.6, 0.3)
    assert any("row sum at task 1" in v for v in validate(one_task(bad_row)))
    mism = RobotModel([good, good], [TaskCost(2, 4)], 0.75)
    assert any("length mismatch" in v for v in validate(mism))
    assert any("negative cost" in v for v in validate(one_task(good, rho=-1)))


def test_sampled_models_validate():
    rng = np.random.default_rng(0)
    cfg = GeneratorConfig(robots=1)
    for _ in range(1000):
        assert validate(generate_robot(rng, cfg)) == []


def test_scenario_invariants():
    m = one_task(TaskTransition(0.4, 0.25, 0.5, 0.1, 0.6, 0.3))
    with pytest.raises(ModelError):
        JointScenario([m], 2, 0.9)
    with pytest.raises(ModelError):
        JointScenario([m], 1, 1.0)
    with pytest.raises(ModelError):
        JointScenario([], 1, 0.9)


@settings(max_examples=200, deadline=None)
@given(tr=tasks(), n=st.integers(1, 4))
def test_distributions_are_stochastic(tr, n):
    m = RobotModel([tr] * n, [TaskCost(2.0, 4.0)] * n, 0.75)
    for x in enumerate_states(m):
        for a in (0, 1):
            d = transition_distribution(m, x, a)
            assert all(p >= 0 for _, p in d)
            assert abs(sum(p for _, p in d) - 1.0) <= 1e-12
            if not x.is_goal and x.fault == 1 and a == 0:
                assert d == [(x, 1.0)]
            if not x.is_goal:
                assert step_cost(m, x, 1) - step_cost(m, x, 0) == pytest.approx(0.75)


def test_arrays_match_distribution(rng):
    for _ in range(20):
        m = random_robot(rng, costs="random")
        arr = m.arrays()
        for i, x in enumerate(enumerate_states(m)):
            for a in (0, 1):
                dense = np.zeros(m.n_states)
                for y, p in transition_distribution(m, x, a):
                    dense[m.state_index(y)] += p
                np.testing.assert_allclose(arr.matrix(a)[i], dense, atol=1e-15)
                assert arr.cost[i, a] == step_cost(m, x, a)
