"""Near-optimal AC optimal power flow with discrete (all-or-nothing) demands on radial networks"""
from .core import (Reporter, Failure, StageFailure, DiscOpfError, InstanceError, SchemaError, TopologyError,
                   SignError, AssumptionError, InfeasibleError, NumericalFailure, LimitExceeded)
from .functions import scoped
from .handler import Handler, Not, print_failure, log_failure, exit_code
from .config import SolverSettings
from .model import (User, UserKind, Line, Bus, ObjectiveSpec, RadialInstance, PowerFlowState, validate_instance,
                    rotation_angle, rotate_instance, unrotate_state, evaluate_objective)
from .sweep import SweepMode, FeasibilityReport, forward_backward_sweep, check_feasibility
from .conic import RelaxationSpec, SolveOutcome, solve_relaxation, restore_exactness
from .gufp import GufpInstance, SeparableStepFunction, solve_gufp
from .qptas import GuessMode, QptasConfig, QptasResult, qptas_solve, reduce_to_gufp
from .oracle import OracleResult, brute_force_opf, brute_force_gufp
from .fileio import parse_instance, emit_instance, read_instance, write_instance, parse_gufp, emit_gufp
from .generate import generate_instance

# Anything that starts with an _ or is not imported here is internal API
# and may change in minor/patch versions.

__version__ = '0.1.0'
