"""Adaptive-sampling inexact stochastic SQP for equality-constrained problems."""
from ._accel import JIT_ENABLED
from .bench import (
    ProfileSpec,
    RunConfig,
    RunRecord,
    performance_profile,
    read_runs,
    run_experiment,
    select_profile_point,
    write_runs,
)
from .kkt import (
    KktRhs,
    KktSolution,
    KktSystem,
    TerminationCase,
    direct_solve,
    least_squares_multipliers,
    minres_solve,
)
from .problems import get_synthetic, load_libsvm
from .sampling import SamplingController
from .sqp import SqpParams, initial_state, sqp_step

__version__ = "0.1.0"
