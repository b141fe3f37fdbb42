"""Age of Incorrect Information with a preemptive transmitter and random delay."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Deterministic,
    Explicit,
    Geometric,
    Linear,
    Logarithmic,
    Quadratic,
    SourceModel,
    Table,
    ValidationError,
    Zipf,
)
from .mdp import State, TruncationConfig, build_truncated, transitions  # noqa: E402
from .policies import (  # noqa: E402
    LazyThreshold,
    RandomPolicy,
    StrongPreemptive,
    TablePolicy,
    ThresholdPreemptive,
    WeakPreemptive,
    equal_on_reachable,
)
from .solvers import (  # noqa: E402
    ConvergenceError,
    MultichainError,
    SolveResult,
    discounted_vi,
    policy_evaluation,
    policy_improvement,
    policy_iteration,
    rvi,
    stationary_distribution,
)
from .sim import SimConfig, SimResult, empirical_kernel_check, sample_path, simulate  # noqa: E402
