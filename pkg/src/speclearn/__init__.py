"""Learn control policies from composable task specifications.

Specifications built from ``achieve``, ``ensuring``, sequencing and choice
are compiled to task monitors (finite automata with real-valued
registers).  Training runs augmented random search on the product of the
environment and the monitor, using a shaped reward that credits partial
progress through the monitor.
"""

from .ars import ArsConfig, CurvePoint, TrainResult, evaluate, train
from .augmented import (
    AugmentedAction,
    AugmentedMDP,
    AugmentedRollout,
    AugmentedState,
    ShapingConstants,
    compute_shaping,
    project_policy,
)
from .bench import SUITE, run_benchmark, sample_complexity_report
from .envs import CartPoleEnv, GridEnv, PointRobotEnv, builtin_predicates, point_robot_step
from .lang import (
    AtomicPredicateDecl,
    PredicateRegistry,
    SpecSyntaxError,
    parse_spec,
    parse_spec_file,
    print_spec,
    register_predicate,
)
from .monitor import TaskMonitor, compile_spec, longest_path_depths, to_dot, validate_monitor
from .policy import PolicyModuleSet, act, load_policy, save_policy
from .semantics import Rollout, eval_bool, eval_quant

__version__ = "0.1.0"

__all__ = [
    "ArsConfig", "CurvePoint", "TrainResult", "evaluate", "train",
    "AugmentedAction", "AugmentedMDP", "AugmentedRollout", "AugmentedState", "ShapingConstants",
    "compute_shaping", "project_policy",
    "SUITE", "run_benchmark", "sample_complexity_report",
    "CartPoleEnv", "GridEnv", "PointRobotEnv", "builtin_predicates", "point_robot_step",
    "AtomicPredicateDecl", "PredicateRegistry", "SpecSyntaxError", "parse_spec", "parse_spec_file",
    "print_spec", "register_predicate",
    "TaskMonitor", "compile_spec", "longest_path_depths", "to_dot", "validate_monitor",
    "PolicyModuleSet", "act", "load_policy", "save_policy",
    "Rollout", "eval_bool", "eval_quant",
]
