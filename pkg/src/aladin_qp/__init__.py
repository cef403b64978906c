"""Sparse convex QP solver built on an augmented-Lagrangian splitting
iteration, with a linear-quadratic MPC front end and a real-time
receding-horizon controller."""

from .barrier import (BarrierDomainError, BarrierParams, barrier_hessian_diag,
                      phi, step9b_params)
from .mpc import (ChainConfig, DivergenceError, InitialStateMap, MpcProblem,
                  SparseQP, StageIndex, assemble_sparse_qp,
                  build_chain_benchmark, riccati_solve, update_initial_state)
from .oracle import (DenseQP, InfeasibleError, OracleSolution, kkt_residuals,
                     projected_gradient_reference, solve_reference)
from .realtime import (ClosedLoopTrace, ExactController, RtConfig,
                       RtController, performance_loss, reference_closed_loop,
                       shift_warm_start, simulate_closed_loop, weighted_norm)
from .solver import (IterateState, NumericalError, SolveResult, SolveStatus,
                     SolverConfig, TraceRecord, active_set_guess, init_state,
                     iterate, project_box, refresh_curvature, residuals, solve)
from .sparse import (FactorizationError, LdltFactorization, SparseMatrix,
                     ldlt_factor, ldlt_solve, spmv)

__version__ = "0.1.0"

__all__ = [
    "BarrierDomainError", "BarrierParams", "barrier_hessian_diag", "phi",
    "step9b_params",
    "ChainConfig", "DivergenceError", "InitialStateMap", "MpcProblem",
    "SparseQP", "StageIndex", "assemble_sparse_qp", "build_chain_benchmark",
    "riccati_solve", "update_initial_state",
    "DenseQP", "InfeasibleError", "OracleSolution", "kkt_residuals",
    "projected_gradient_reference", "solve_reference",
    "ClosedLoopTrace", "ExactController", "RtConfig", "RtController",
    "performance_loss", "reference_closed_loop", "shift_warm_start",
    "simulate_closed_loop", "weighted_norm",
    "IterateState", "NumericalError", "SolveResult", "SolveStatus",
    "SolverConfig", "TraceRecord", "active_set_guess", "init_state", "iterate",
    "project_box", "refresh_curvature", "residuals", "solve",
    "FactorizationError", "LdltFactorization", "SparseMatrix", "ldlt_factor",
    "ldlt_solve", "spmv",
]
