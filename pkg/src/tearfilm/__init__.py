"""Tear-film thinning with osmolarity feedback: solver, equilibria and analysis."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ConstantSbar,
    DomainError,
    ModelParams,
    SolutionState,
    StepSbar,
    TableSbar,
    TanhSbar,
    compute_fluid_mass,
    compute_salt_mass,
    fig2_sbar,
)
from .integrator import EventKind, RunResult, StepController, integrate  # noqa: E402
from .moving_mesh import FIXED_MESH, MeshPolicy, MonitorWeights  # noqa: E402
from .equilibrium import (  # noqa: E402
    ContinuationSettings,
    EquilibriumProblem,
    continue_branch,
    find_critical_parameter,
    solve_equilibrium,
)
from .analysis import (  # noqa: E402
    Regime,
    check_maximum_principle,
    classify_regime,
    fit_thinning_rate,
    solve_bound_fixed_point,
)
