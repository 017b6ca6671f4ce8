"""Variance-reduced Q-learning and instance-dependent complexity for tabular MDPs."""
from .complexity import (
    ComplexityReport,
    complexity_report,
    max_nu_over_optimal,
    min_sample_size,
    nu_matrix,
    optimal_policy_set,
    optimality_gap,
    rho_matrix,
    sigma_matrix,
)
from .errors import (
    BudgetError,
    ConvergenceError,
    DegenerateInstanceError,
    DimensionError,
    EnumerationOverflow,
    PreconditionError,
    ScheduleError,
    ValidationError,
    VRQLError,
)
from .example import example1_mdp, example1_qstar, paper_budget
from .experiment import (
    ExperimentConfig,
    ExperimentRow,
    epoch_trace_experiment,
    fit_loglog_slope,
    scaling_experiment,
)
from .lowerbound import (
    hellinger_mdp,
    local_minimax_bound,
    perturb_rewards,
    perturb_transitions,
    verify_separation,
    verify_lemma3,
)
from .mdp import (
    TabularMDP,
    bellman_optimality,
    greedy_policy,
    load_mdp,
    random_mdp,
    resolvent_matrix,
    save_mdp,
    solve_optimal_q,
)
from .sampling import SeededSampler, derive_seed, empirical_bellman, monte_carlo_bellman
from .solvers import (
    EpochSchedule,
    RunRecord,
    StepSize,
    make_schedule,
    run_epoch,
    standard_q_learning,
    vr_q_learning,
    vr_q_learning_with_budget,
)

__version__ = "0.1.0"
