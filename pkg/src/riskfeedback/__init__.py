"""Risk-averse feedback control synthesis for parabolic systems with
random coefficients: tensorized Legendre chaos machinery, entropic-risk
operator assembly, backward Riccati sweeps, and the outer solve loop
with an open-loop baseline and Monte Carlo validation harness."""

from .fem import ActuatorSet, FemMatrices, Mesh1D, assemble, build_mesh, h_norm
from .galerkin import (
    ControlTrajectory,
    GalerkinSystem,
    PceTrajectory,
    TimeGrid,
    assemble_system,
    forward_solve,
    sample_path_solve,
    surrogate_ensemble,
    surrogate_eval,
    tracking_error,
)
from .pce import (
    IndexSet,
    basis_matrix,
    legendre_table,
    legendre_value,
    multiplication_matrix,
    tensor_value,
    total_degree_set,
)
from .riccati import (
    RiccatiSolution,
    closed_loop_solve,
    feedback_control,
    solve_dre,
)
from .risk import (
    RiskAdjustedOperators,
    SampleNodeSet,
    WeightField,
    assemble_operators,
    entropic_risk,
    exponential_tilt_weights,
    monte_carlo_nodes,
    objective,
    sample_pairing_matrix,
    squared_tracking_errors,
    tensor_gauss_nodes,
    weighted_covariance_matrix,
)
from .sqp import (
    ControlProblem,
    SqpReport,
    SqpResult,
    control_inner,
    control_norm,
    initial_expansion,
    reduced_gradient,
    run_openloop_gd,
    run_sqp,
)

__version__ = "0.1.0"
