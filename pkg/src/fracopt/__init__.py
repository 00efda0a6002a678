"""Numerical toolkit for multi-order Caputo fractional optimal control."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    ExpressionDomainError,
    ExpressionError,
    ExpressionSyntaxError,
    FracoptError,
    SolverError,
)
from .fde_solvers import (
    TerminalData,
    VariationalInit,
    VectorField,
    solve_adjoint,
    solve_caputo_ivp,
    solve_variational,
)
from .fracops import (
    caputo_derivative,
    frac_integral,
    integration_by_parts_residual,
    rl_derivative,
)
from .grids import MultiOrder, OperatorFamily, OperatorKind, SampledPath, Side, TimeGrid
from .pmp import (
    ConstantsEstimate,
    NeedleOutcome,
    NeedleVariation,
    PmpSolution,
    SweepConfig,
    continuity_bound,
    estimate_constants,
    forward_backward_sweep,
    hamiltonian,
    maximize_hamiltonian,
    needle_experiment,
    objective_value,
    pmp_residual,
)
from .problems import (
    ControlSet,
    ExprNode,
    ProblemSpec,
    SolverSettings,
    builtin_problem,
    builtin_problems,
    eval_expression,
    load_problem_config,
    parse_expression,
    to_source,
)
from .specfun import (
    GronwallInstance,
    MittagLefflerParams,
    gamma_fn,
    gronwall_bound,
    mittag_leffler,
)

__version__ = "0.1.0"
