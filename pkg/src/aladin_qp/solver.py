"""Main splitting loop for consensus-form box QPs.

Each iteration solves two decoupled proximal problems (a pre-factorized
linear solve in y, a box projection in z), checks the primal/dual residuals,
then couples the halves through one equality-constrained KKT solve and a
damped dual update.  Whenever the iteration index is an integer power of 3
the loop additionally tries to finish early by guessing the active set, and
refreshes the diagonal curvature weights K from a relaxed log-barrier model,
which is the expensive step because it forces a KKT refactorization.

The KKT system of the coupling step is reduced by eliminating z (K is
diagonal) to the quasi-definite form [[H, E'], [E, -K^{-1}]], factorized once
per K and reused in between.

One state is owned by one solve call; concurrent solves on the same immutable
problem are safe.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as _sp

from .barrier import K_MAX, K_MIN, R_MIN, T_MAX, barrier_hessian_diag, step9b_params
from .mpc import SparseQP, StageIndex
from .sparse import (FactorizationError, LdltFactorization, SparseMatrix,
                     ldlt_factor, ldlt_solve, spmv)


class NumericalError(RuntimeError):
    """The coupling KKT solve broke down."""

    def __init__(self, iteration, message=None):
        self.iteration = int(iteration)
        super().__init__(message or f"numerical failure at iteration {iteration}")


class SolveStatus(Enum):
    CONVERGED = "Converged"
    ACTIVE_SET_SOLVED = "ActiveSetSolved"
    MAX_ITER = "MaxIter"


@dataclass
class SolverConfig:
    """Tolerances, regularizations and schedule switches.

    ``eps1``/``eps2`` regularize the smooth Hessian and the proximal weight
    (they also make the method work for degenerate QPs with a singular or
    zero objective matrix); ``theta`` damps the dual update.  ``ordering``
    picks the KKT fill-reducing permutation: "auto" uses the banded
    stage-interleaved order for MPC-structured problems and the natural
    order otherwise; "rcm" is available for general sparsity.
    """

    eps1: float = 1e-6
    eps2: float = 1e-3
    theta: float = 0.75
    tol: float = 1e-8
    max_iter: int = 100_000
    barrier_updates: bool = True
    active_set_guess: bool = True
    k_min: float = K_MIN
    k_max: float = K_MAX
    r_min: float = R_MIN
    t_max: float = T_MAX
    ordering: str = "auto"

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("eps1 and eps2 must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("iteration cap must be at least 1")
        if self.ordering not in ("auto", "natural", "rcm"):
            raise ValueError("ordering must be 'auto', 'natural' or 'rcm'")


@dataclass
class TraceRecord:
    iteration: int
    primal_res: float
    dual_res: float
    k_updated: bool
    elapsed_s: float


@dataclass
class _Workspace:
    """Constant matrices and the mutable KKT template of one solve."""

    q_sp: _sp.csc_matrix
    e_csr: _sp.csr_matrix
    kkt_mat: SparseMatrix
    kkt_diag_pos: np.ndarray
    base_order: np.ndarray | None  # stage-interleaved KKT order, if MPC-structured


@dataclass
class IterateState:
    """Live iterate of one solve call."""

    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    w: np.ndarray
    sigma: np.ndarray
    grad_f: np.ndarray
    subgrad_g: np.ndarray
    kdiag: np.ndarray
    lower_active: np.ndarray
    upper_active: np.ndarray
    dec_factor: LdltFactorization
    kkt_factor: LdltFactorization
    primal_res: float = np.inf
    dual_res: float = np.inf
    iteration: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)
    _ws: _Workspace | None = None


def project_box(xi, zl, zu) -> np.ndarray:
    """Componentwise clamp of xi onto [zl, zu]."""
    return np.clip(np.asarray(xi, dtype=float), zl, zu)


def _stage_kkt_order(st: StageIndex) -> np.ndarray:
    """Banded ordering of the stacked KKT vector [y; z] for MPC structure."""
    n_y = st.n_y
    parts = []
    for k in range(st.horizon):
        u = st.u_slice(k)
        parts.append(np.arange(u.start, u.stop, dtype=np.int64))
        dyn = st.dyn_slice(k)
        parts.append(n_y + np.arange(dyn.start, dyn.stop, dtype=np.int64))
        con = st.con_slice(k)
        parts.append(n_y + np.arange(con.start, con.stop, dtype=np.int64))
        x = st.x_slice(k + 1)
        parts.append(np.arange(x.start, x.stop, dtype=np.int64))
    return np.concatenate(parts)


def _kkt_ordering(qp: SparseQP, cfg: SolverConfig, ws: _Workspace):
    if cfg.ordering == "auto":
        return ws.base_order if ws.base_order is not None else "natural"
    return cfg.ordering


def init_state(qp: SparseQP, cfg: SolverConfig, warm=None) -> IterateState:
    """Allocate an iterate and pre-factorize the constant systems.

    Cold start is y = z = lam = 0 with unit curvature weights; a warm triple
    (y, z, lam) is carried verbatim.  Factorizes Q + Sigma = 2Q + eps2*I once
    and the reduced KKT matrix once (valid until K changes).
    """
    n_y, n_z = qp.n_y, qp.n_z
    if warm is not None:
        y0, z0, lam0 = (np.array(vec, dtype=float) for vec in warm)
        if y0.shape != (n_y,) or z0.shape != (n_z,) or lam0.shape != (n_z,):
            raise ValueError("warm-start vectors have inconsistent dimensions")
    else:
        y0, z0, lam0 = np.zeros(n_y), np.zeros(n_z), np.zeros(n_z)
    kdiag = np.ones(n_z)

    q_sp = qp.Q.to_scipy()
    eye_y = _sp.identity(n_y, format="csc")
    dec = SparseMatrix.from_scipy(_sp.tril(2.0 * q_sp + cfg.eps2 * eye_y, format="csc"))
    dec_factor = ldlt_factor(dec, ordering="natural")

    h_low = _sp.tril(q_sp + cfg.eps1 * eye_y, format="csc")
    e_sp = qp.E.to_scipy()
    kkt_sp = _sp.bmat(
        [[h_low, None], [e_sp, -_sp.identity(n_z, format="csc")]], format="csc"
    )
    kkt_mat = SparseMatrix.from_scipy(kkt_sp)
    # in the lower-triangle layout every z-column holds exactly its diagonal
    diag_pos = kkt_mat.indptr[n_y:-1]
    assert np.array_equal(kkt_mat.indices[diag_pos], n_y + np.arange(n_z))
    base_order = _stage_kkt_order(qp.stages) if qp.stages is not None else None
    ws = _Workspace(q_sp=q_sp, e_csr=e_sp.tocsr(), kkt_mat=kkt_mat,
                    kkt_diag_pos=diag_pos, base_order=base_order)
    kkt_mat.data[diag_pos] = -1.0 / kdiag
    kkt_factor = ldlt_factor(kkt_mat, ordering=_kkt_ordering(qp, cfg, ws))

    return IterateState(
        y=y0, z=z0, lam=lam0,
        v=np.zeros(n_y), w=np.zeros(n_z), sigma=np.zeros(n_y),
        grad_f=np.zeros(n_y), subgrad_g=np.zeros(n_z),
        kdiag=kdiag,
        lower_active=np.zeros(n_z, dtype=bool),
        upper_active=np.zeros(n_z, dtype=bool),
        dec_factor=dec_factor, kkt_factor=kkt_factor,
        _ws=ws,
    )


def iterate(state: IterateState, qp: SparseQP, cfg: SolverConfig) -> IterateState:
    """One pass of the main loop (without the scheduled event step).

    Computes sigma = E'lam, the decoupled minimizers v and w, and the
    residuals; if both residuals are within tolerance the state is marked
    converged and left untouched.  Otherwise performs the coupling KKT solve
    and the damped dual update.  A state already marked converged is returned
    unchanged.
    """
    if state.converged:
        return state
    y, z, lam = state.y, state.z, state.lam
    sigma = spmv(qp.E, lam, transposed=True)
    qy = spmv(qp.Q, y)
    v = ldlt_solve(state.dec_factor, qy + cfg.eps2 * y - sigma)
    w_arg = z + lam / state.kdiag
    w = np.clip(w_arg, qp.zl, qp.zu)
    state.sigma, state.v, state.w = sigma, v, w
    state.lower_active = w_arg < qp.zl
    state.upper_active = w_arg > qp.zu
    state.primal_res = float(np.linalg.norm(w - z, np.inf))
    state.dual_res = float(np.linalg.norm(qy + sigma, np.inf))
    if state.primal_res <= cfg.tol and state.dual_res <= cfg.tol:
        state.converged = True
        return state

    dyv = y - v
    grad_f = spmv(qp.Q, dyv) + cfg.eps2 * dyv - sigma
    subgrad_g = state.kdiag * (z - w) + lam
    qv = spmv(qp.Q, v)
    rhs = np.concatenate([
        qv + cfg.eps1 * v - grad_f,
        (state.kdiag * w - subgrad_g) / state.kdiag,
    ])
    sol = ldlt_solve(state.kkt_factor, rhs)
    if not np.all(np.isfinite(sol)):
        raise NumericalError(state.iteration + 1)
    y_plus = sol[:qp.n_y]
    lam_plus = sol[qp.n_y:]
    state.grad_f, state.subgrad_g = grad_f, subgrad_g
    state.y = y_plus
    state.z = spmv(qp.E, y_plus)  # consensus feasibility holds by construction
    state.lam = cfg.theta * lam_plus + (1.0 - cfg.theta) * subgrad_g
    state.iteration += 1
    return state


def residuals(state: IterateState) -> tuple[float, float]:
    """Primal and dual residuals (||w - z||_inf, ||Qy + sigma||_inf) of the
    last decoupled step."""
    return state.primal_res, state.dual_res


def refresh_curvature(state: IterateState, qp: SparseQP, cfg: SolverConfig) -> None:
    """Rebuild K from the relaxed log-barrier at the current iterate and
    refactorize the reduced KKT matrix (the expensive part).

    The margin parameters are taken at a unit-curvature probe
    w = clip(z + lam) rather than at the K-weighted projection of the last
    step: once K is very stiff, the weighted projection collapses onto z and
    would report a vanishing gap even while the dual is far from converged,
    driving the new K into its clamp and stalling (or, for theta = 0,
    freezing) the multipliers.  The unit probe stays in the box, so the
    margin keeps the barrier finite at z either way.
    """
    probe = np.clip(state.z + state.lam, qp.zl, qp.zu)
    params = step9b_params(probe, state.z, state.y, state.sigma, qp.Q,
                           r_min=cfg.r_min, t_max=cfg.t_max)
    state.kdiag = barrier_hessian_diag(params, state.z, qp.zl, qp.zu,
                                       k_min=cfg.k_min, k_max=cfg.k_max)
    ws = state._ws
    ws.kkt_mat.data[ws.kkt_diag_pos] = -1.0 / state.kdiag
    state.kkt_factor = ldlt_factor(ws.kkt_mat, pattern=state.kkt_factor)


def active_set_guess(state: IterateState, qp: SparseQP, cfg: SolverConfig):
    """Try to finish in one shot from the projection's clamp pattern.

    The guessed active set is the rows clamped in the last projection plus
    all degenerate (equality) rows.  Fixing those rows at their bounds and
    zeroing the remaining multipliers gives an equality-constrained QP whose
    KKT system is solved directly (with a tiny quasi-definite shift and two
    refinement sweeps).  The candidate is accepted only if it is primal
    feasible, correctly signed and stationary within 10x the solve tolerance;
    otherwise ``None`` is returned and the main loop continues.  Singular
    guesses are treated as unsuccessful, never as errors.
    """
    eq = qp.zl == qp.zu
    active_mask = state.lower_active | state.upper_active | eq
    active = np.flatnonzero(active_mask)
    at_upper = state.upper_active[active] & ~eq[active]
    b = np.where(at_upper, qp.zu[active], qp.zl[active])
    n_y, n_z = qp.n_y, qp.n_z
    m = active.size
    ws = state._ws
    delta = 1e-11

    e_act = ws.e_csr[active]
    kkt_sp = _sp.bmat(
        [[_sp.tril(ws.q_sp + delta * _sp.identity(n_y, format="csc"), format="csc"), None],
         [e_act.tocsc(), -delta * _sp.identity(m, format="csc")]],
        format="csc",
    )
    rhs = np.concatenate([np.zeros(n_y), b])
    try:
        mat = SparseMatrix.from_scipy(kkt_sp)
        if ws.base_order is not None:
            rank = np.full(n_z, -1, dtype=np.int64)
            rank[active] = np.arange(m, dtype=np.int64)
            base = ws.base_order
            mapped = base.copy()
            zpart = base >= n_y
            mapped[zpart] = n_y + rank[base[zpart] - n_y]
            order = mapped[(~zpart) | (mapped >= n_y)]
        else:
            order = "natural"
        fac = ldlt_factor(mat, ordering=order)
        sol = ldlt_solve(fac, rhs)
        for _ in range(2):  # refine against the unshifted KKT operator
            yc, mu = sol[:n_y], sol[n_y:]
            r_top = -(ws.q_sp @ yc + e_act.T @ mu)
            r_bot = b - e_act @ yc
            sol = sol + ldlt_solve(fac, np.concatenate([r_top, r_bot]))
    except FactorizationError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    y = sol[:n_y]
    mu = sol[n_y:]
    lam = np.zeros(n_z)
    lam[active] = mu
    z = spmv(qp.E, y)

    slack = 10.0 * cfg.tol
    if np.any(z < qp.zl - slack) or np.any(z > qp.zu + slack):
        return None
    free_eq = ~eq[active]
    if np.any(mu[at_upper & free_eq] < -slack) or np.any(mu[~at_upper & free_eq] > slack):
        return None
    stat = np.linalg.norm(spmv(qp.Q, y) + spmv(qp.E, lam, transposed=True), np.inf)
    if stat > slack:
        return None
    return y, lam, z


@dataclass
class SolveResult:
    """Primal/dual solution with the per-iteration trace."""

    y: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    w: np.ndarray
    status: SolveStatus
    iterations: int
    trace: list

    @property
    def primal_res(self):
        return self.trace[-1].primal_res if self.trace else np.inf

    @property
    def dual_res(self):
        return self.trace[-1].dual_res if self.trace else np.inf


def solve(qp: SparseQP, cfg: SolverConfig | None = None, warm=None) -> SolveResult:
    """Run the splitting loop until convergence, active-set success or the cap.

    At iteration indices 1, 3, 9, 27, ... (exact integer powers of 3) the
    active-set shortcut is attempted first and then the curvature weights are
    refreshed; with ``barrier_updates`` off the refresh happens only at the
    first event so K is updated exactly once.  The trace records every loop
    entry including the final one.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    state = init_state(qp, cfg, warm=warm)
    trace = state.trace
    t0 = time.perf_counter()
    status = SolveStatus.MAX_ITER
    for i in range(1, cfg.max_iter + 1):
        iterate(state, qp, cfg)
        if state.converged:
            trace.append(TraceRecord(i, state.primal_res, state.dual_res, False,
                                     time.perf_counter() - t0))
            status = SolveStatus.CONVERGED
            break
        k_updated = False
        if i == _next_power_of_three(i):
            if cfg.active_set_guess:
                guess = active_set_guess(state, qp, cfg)
                if guess is not None:
                    state.y, state.lam, state.z = guess
                    state.w = state.z.copy()
                    trace.append(TraceRecord(i, state.primal_res, state.dual_res,
                                             False, time.perf_counter() - t0))
                    status = SolveStatus.ACTIVE_SET_SOLVED
                    break
            if cfg.barrier_updates or i == 1:
                refresh_curvature(state, qp, cfg)
                k_updated = True
        trace.append(TraceRecord(i, state.primal_res, state.dual_res, k_updated,
                                 time.perf_counter() - t0))
    return SolveResult(y=state.y.copy(), lam=state.lam.copy(), z=state.z.copy(),
                       w=state.w.copy(), status=status, iterations=len(trace),
                       trace=trace)


def _next_power_of_three(i: int) -> int:
    p = 1
    while p < i:
        p *= 3
    return p
