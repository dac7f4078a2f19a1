"""Operator allocation for fleets of semi-autonomous robots via Whittle indices."""
from .model import (InvalidStateError, JointScenario, ModelError, OperatingState, RobotModel, TaskCost,
                    TaskTransition, enumerate_states, step_cost, transition_distribution)
from .whittle import IndexTable, whittle_indices_adaptive_greedy, whittle_indices_bisection
from .indexability import IndexabilityVerdict, numeric_verify, theorem_check
from .policies import make_policy
from .simulator import GeneratorConfig, evaluate, generate_scenario

__all__ = [
    "InvalidStateError", "JointScenario", "ModelError", "OperatingState", "RobotModel", "TaskCost",
    "TaskTransition", "enumerate_states", "step_cost", "transition_distribution", "IndexTable",
    "whittle_indices_adaptive_greedy", "whittle_indices_bisection", "IndexabilityVerdict", "numeric_verify",
    "theorem_check", "make_policy", "GeneratorConfig", "evaluate", "generate_scenario",
]
