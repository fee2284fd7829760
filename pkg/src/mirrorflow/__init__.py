"""Mirror-descent flows, reparameterizations, and minimum-norm experiments."""

from .errors import (
    ConditionError,
    DegenerateInputError,
    DomainError,
    DomainExitError,
    GridMismatchError,
    MirrorFlowError,
    NoConvergenceError,
    NumericalError,
    SingularConstraintError,
    StepTooLargeError,
    UnsupportedTemperatureError,
)
from .potentials import (
    DualPotential,
    Potential,
    bregman_divergence,
    bregman_momentum,
    dual_momentum,
    exp_tau,
    get_dual,
    get_potential,
    log_tau,
    tempered_divergence,
    tempered_potential,
)
from .geometry import (
    Constraint,
    bregman_project_simplex,
    get_constraint,
    projection_matrix,
    reparam_projection_matrix,
    simplex_constraint,
)
from .flows import (
    FlowProblem,
    Trajectory,
    integrate_cmd,
    integrate_dual,
    step_eg_approximated,
    step_eg_normalized,
    step_md_explicit,
    step_md_implicit,
    step_prod,
    step_projected_then_bregman,
)
from .reparam import (
    ReparamMap,
    ReparamTriple,
    check_condition,
    check_triple,
    compose,
    equivalence_report,
    get_triple,
    invert,
    power_map,
    registered_triple_names,
    reparam_flow,
    reparam_flow_constrained,
    run_equivalence,
)
from .minnorm import (
    PmState,
    RegressionInstance,
    kkt_residuals,
    make_instance,
    min_norm_oracle,
    norm_2mt,
    norm_sweep,
    tempered_egu_pm_flow,
    tempered_reparam_pm_flow,
)

__version__ = "0.1.0"
