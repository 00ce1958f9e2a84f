"""Semi-Lagrangian dynamic programming for infinite-horizon discounted control."""

from .cost import (
    ControlSequence,
    Trajectory,
    brute_force_value,
    continuous_cost_oracle,
    discrete_cost,
    euler_rollout,
    tail_length,
)
from .errors import (
    ConvergenceError,
    EnumerationLimitError,
    InvalidArgumentError,
    InvalidStepError,
    OutOfDomainError,
    SlhjbError,
)
from .expr import differentiate, parse_expression
from .interp import NodalField, interpolate, sample_function
from .mesh import BoxDomain, SimplicialMesh, build_uniform_mesh, clamp_to_domain, locate
from .policy import greedy_control, synthesize_trajectory
from .problem import (
    ControlSet,
    ManufacturedProblem,
    Problem,
    ProblemBounds,
    make_manufactured,
    sample_control_set,
    validate_problem,
)
from .solver import BellmanOperator, SolveConfig, ValueFunction, bellman_apply, lipschitz_estimate, solve_fixed_point
from .study import RefinementSchedule, error_against_reference, fixed_k_blowup_test, run_refinement_study

__version__ = "0.1.0"
