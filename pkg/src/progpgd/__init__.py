"""Greedy rank-one (PGD) solvers for convex minimisation on tensor-product grids."""
from .functionals import (
    EllipticityResult,
    Functional,
    LpApproximation,
    PenalizedFunctional,
    PenaltySpec,
    PLaplacian,
    PLaplacianSpec,
    QuadraticFunctional,
    QuadraticOperatorSpec,
    dirichlet_difference,
    ellipticity_check,
    identity_operator,
    kronecker_sum_operator,
    laplacian_operator,
    make_lp_approx,
    make_p_laplacian,
    make_penalized,
    make_quadratic,
    stiffness_1d,
    uniform_grid_space,
)
from .oracles import (
    OracleConfig,
    OracleNotConverged,
    dense_minimize,
    fd_grad_check,
    scalar_ellipticity_scan,
    truncated_svd,
)
from .solver import (
    ConvergenceReport,
    DegenerateTermError,
    IterationRecord,
    NumericalFailure,
    SolverConfig,
    StrategySchedule,
    a_posteriori_bound,
    coeff_update,
    dim_update,
    parse_schedule,
    pgd_solve,
    rank_one_correction,
)
from .tensor_core import (
    DenseCapError,
    DenseTensor,
    RankOneTensor,
    SeparatedTensor,
    SpaceMismatchError,
    TensorSpace,
    discrete_lp_norm,
    minimal_subspace_ranks,
    to_dense,
    weighted_inner,
)

__all__ = [
    "EllipticityResult",
    "Functional",
    "LpApproximation",
    "PenalizedFunctional",
    "PenaltySpec",
    "PLaplacian",
    "PLaplacianSpec",
    "QuadraticFunctional",
    "QuadraticOperatorSpec",
    "dirichlet_difference",
    "ellipticity_check",
    "identity_operator",
    "kronecker_sum_operator",
    "laplacian_operator",
    "make_lp_approx",
    "make_p_laplacian",
    "make_penalized",
    "make_quadratic",
    "stiffness_1d",
    "uniform_grid_space",
    "OracleConfig",
    "OracleNotConverged",
    "dense_minimize",
    "fd_grad_check",
    "scalar_ellipticity_scan",
    "truncated_svd",
    "ConvergenceReport",
    "DegenerateTermError",
    "IterationRecord",
    "NumericalFailure",
    "SolverConfig",
    "StrategySchedule",
    "a_posteriori_bound",
    "coeff_update",
    "dim_update",
    "parse_schedule",
    "pgd_solve",
    "rank_one_correction",
    "DenseCapError",
    "DenseTensor",
    "RankOneTensor",
    "SeparatedTensor",
    "SpaceMismatchError",
    "TensorSpace",
    "discrete_lp_norm",
    "minimal_subspace_ranks",
    "to_dense",
    "weighted_inner",
]

__version__ = "0.1.0"
