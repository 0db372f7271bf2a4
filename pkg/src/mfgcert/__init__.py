"""Anti-monotonicity certification for mean field game master equations.

The package computes the full constant ledger of the anti-monotone
well-posedness regime (threshold matrices, Hessian bounds, decay
constants), classifies and falsifies monotonicity notions for terminal
costs and Hamiltonians, and verifies the resulting a-priori estimates
against a d=1 mean field game solver with a linear-quadratic closed-form
oracle.
"""

from .measures import EmpiricalMeasure, make_empirical, moments, wq_distance
from .models import (
    ModelSpec,
    QuadraticParams,
    RegularityConstants,
    eval_g_derivs,
    eval_h_derivs,
    lions_derivative_fd,
)
from .monotonicity import (
    FieldDerivs,
    MonotonicityEstimate,
    VecLambda,
    antimono_functional,
    classify_quadratic,
    displacement_functional,
    hamiltonian_displacement_functional,
    lasry_lions_functional,
    mc_certify,
    mc_classify,
    quadratic_field,
)
from .config import RunConfig, parse_config
from .certify import (
    ConditionMatrices,
    ConstantLedger,
    SpectralReport,
    certify_wellposedness,
    condition_matrices,
    construct_example72,
    derived_h_bounds,
    exp_decay_bound,
    spectral,
    theta1,
    theta3_lxx,
    xp_threshold,
)
from .solver import (
    FlowTrace,
    MfgSolution,
    RiccatiSolution,
    XmuProfile,
    estimate_xmu_lipschitz,
    estimate_xmu_profile,
    flow_to_csv,
    hessian_bound_check,
    master_residual,
    riccati_oracle,
    simulate_fbsde,
    simulate_linearized_flow,
    solution_to_csv,
    solve_mfg,
)

__version__ = "0.1.0"
