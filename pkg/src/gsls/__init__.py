"""Localized LQR controllers for graph symmetric systems via system level synthesis."""
from .errors import (
    DegenerateGraph,
    DegenerateResponse,
    GslsError,
    IllConditioned,
    InvalidArg,
    SolverFailure,
    Unstabilizable,
    Unstable,
    UnstableClosedLoop,
)
from .gss import GraphSymmetricSystem, check_quadratic_invariance, generate_random_gss, verify_graph_symmetric
from .lqr import (
    FilterResponse,
    SpectralResponse,
    centralized_solution,
    dense_h2_cost,
    diagonal_projection,
    h2_cost,
    optimal_responses,
    solve_dare_scalar,
)
from .sls import Residual, achieved_cost, hinf_norm, is_stabilizing, l1_induced_norm, residual
from .spectral import (
    Gmd,
    HopTapVector,
    eval_graph_filter,
    generate_random_gmd,
    spectral_to_taps,
    vandermonde_projection_matrices,
)
from .synthesis import (
    SynthesisConfig,
    SynthesisOutcome,
    naive_projection,
    robust_projection,
    robust_sls_synthesize,
    suboptimality_bound,
    truncate,
)

__version__ = "0.1.0"
