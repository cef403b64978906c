"""Linear-quadratic MPC data and its consensus-form sparse QP.

The problem

    min  sum_k ||x_k||_Q^2 + ||u_k||_R^2  +  ||x_N||_P^2
    s.t. x_{k+1} = A x_k + B u_k,   c <= C x_k + D u_k <= d

is rewritten over the stacked variable y = [u_0, x_1, u_1, ..., x_N] as
min 0.5 y'Qy + G(z) s.t. Ey = z with G the indicator of a box [zl, zu]:
dynamics rows become degenerate boxes (zl == zu) and the measured state x0
enters only through the first block of bounds, so re-parameterizing the QP in
a receding-horizon loop never touches the matrices.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as _sp

from .sparse import SparseMatrix

RICCATI_DEFAULT_TOL = 1e-10
RICCATI_DEFAULT_MAX_ITER = 100_000


class DivergenceError(RuntimeError):
    """Riccati fixed-point iteration failed to converge."""


def _check_symmetric_pd(m, name):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.array_equal(m, m.T):
        raise ValueError(f"{name} must be exactly symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return m


def riccati_solve(A, B, Q, R, tol=RICCATI_DEFAULT_TOL,
                  max_iter=RICCATI_DEFAULT_MAX_ITER) -> np.ndarray:
    """Terminal weight P from the discrete-time Riccati fixed point.

    Runs the value iteration P <- A'PA + Q - A'PB (R + B'PB)^{-1} B'PA from
    P = Q and returns the first iterate whose fixed-point residual (inf-norm)
    is at most ``tol``.  Raises :class:`DivergenceError` when the iteration
    cap is hit or the iterates blow up, which signals an unstabilizable pair
    or badly scaled data.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = _check_symmetric_pd(Q, "Q")
    R = _check_symmetric_pd(R, "R")
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        G = R + B.T @ P @ B
        K = np.linalg.solve(G, BtPA)
        Pn = A.T @ P @ A + Q - BtPA.T @ K
        Pn = (Pn + Pn.T) / 2.0
        if not np.all(np.isfinite(Pn)):
            raise DivergenceError("Riccati iterates are not finite")
        if np.max(np.abs(Pn - P)) <= tol:
            return P
        P = Pn
    raise DivergenceError(f"no convergence within {max_iter} iterations")


@dataclass
class MpcProblem:
    """Data of one linear-quadratic MPC instance.

    ``A, B`` discrete dynamics; ``C, D, c, d`` two-sided stage constraints
    c <= C x + D u <= d; ``Q, R, P`` positive definite weights; ``N`` horizon;
    ``x0`` the measured state.  Values are immutable by convention; use
    :func:`dataclasses.replace` to re-parameterize.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    c: np.ndarray
    d: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int
    x0: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise ValueError("A must be square")
        if self.B.ndim != 2 or self.B.shape[0] != n_x:
            raise ValueError("B must have n_x rows")
        n_u = self.B.shape[1]
        n_c = self.C.shape[0]
        if self.C.shape != (n_c, n_x) or self.D.shape != (n_c, n_u):
            raise ValueError("C and D must have matching shapes (n_c, n_x)/(n_c, n_u)")
        if self.c.shape != (n_c,) or self.d.shape != (n_c,):
            raise ValueError("c and d must be n_c vectors")
        if not np.all(self.c < self.d):
            raise ValueError("constraint bounds must satisfy c < d componentwise")
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if self.x0.shape != (n_x,):
            raise ValueError("x0 must be an n_x vector")
        self.Q = _check_symmetric_pd(self.Q, "Q")
        self.R = _check_symmetric_pd(self.R, "R")
        self.P = _check_symmetric_pd(self.P, "P")
        if self.Q.shape[0] != n_x or self.R.shape[0] != n_u or self.P.shape[0] != n_x:
            raise ValueError("weight dimensions do not match the system")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_c(self):
        return self.C.shape[0]

    def has_strict_interior(self) -> bool:
        """True when c < 0 < d, i.e. the constraints admit the origin strictly."""
        return bool(np.all(self.c < 0) and np.all(self.d > 0))


@dataclass(frozen=True)
class StageIndex:
    """Offsets of the stage blocks inside y and z.

    y = [u_0, x_1, u_1, ..., u_{N-1}, x_N]; z stacks, per stage k, the n_x
    dynamics rows followed by the n_c inequality rows.
    """

    n_x: int
    n_u: int
    n_c: int
    horizon: int

    @property
    def n_y(self):
        return self.horizon * (self.n_u + self.n_x)

    @property
    def n_z(self):
        return self.horizon * (self.n_x + self.n_c)

    def u_slice(self, k) -> slice:
        if not 0 <= k < self.horizon:
            raise IndexError(f"control stage {k} out of range")
        off = k * (self.n_u + self.n_x)
        return slice(off, off + self.n_u)

    def x_slice(self, k) -> slice:
        if not 1 <= k <= self.horizon:
            raise IndexError(f"state stage {k} out of range")
        off = (k - 1) * (self.n_u + self.n_x) + self.n_u
        return slice(off, off + self.n_x)

    def dyn_slice(self, k) -> slice:
        if not 0 <= k < self.horizon:
            raise IndexError(f"dynamics stage {k} out of range")
        off = k * (self.n_x + self.n_c)
        return slice(off, off + self.n_x)

    def con_slice(self, k) -> slice:
        if not 0 <= k < self.horizon:
            raise IndexError(f"constraint stage {k} out of range")
        off = k * (self.n_x + self.n_c) + self.n_x
        return slice(off, off + self.n_c)


@dataclass(frozen=True)
class InitialStateMap:
    """How the measured state enters the first block of bounds."""

    A: np.ndarray
    C: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def apply(self, zl, zu, x0):
        n_x = self.A.shape[0]
        n_c = self.c.shape[0]
        ax = self.A @ x0
        cx = self.C @ x0
        zl[:n_x] = -ax
        zu[:n_x] = -ax
        zl[n_x:n_x + n_c] = self.c - cx
        zu[n_x:n_x + n_c] = self.d - cx


@dataclass
class SparseQP:
    """Consensus-form QP: min 0.5 y'Qy s.t. Ey = z, zl <= z <= zu."""

    Q: SparseMatrix
    E: SparseMatrix
    zl: np.ndarray
    zu: np.ndarray
    stages: StageIndex | None = None
    x0_map: InitialStateMap | None = None

    def __post_init__(self):
        self.zl = np.asarray(self.zl, dtype=float)
        self.zu = np.asarray(self.zu, dtype=float)
        if self.Q.nrows != self.Q.ncols:
            raise ValueError("objective matrix must be square")
        if self.E.ncols != self.Q.nrows:
            raise ValueError("E must have n_y columns")
        if self.zl.shape != (self.E.nrows,) or self.zu.shape != (self.E.nrows,):
            raise ValueError("bounds must be n_z vectors")
        if not np.all(self.zl <= self.zu):
            raise ValueError("bounds must satisfy zl <= zu componentwise")

    @property
    def n_y(self):
        return self.Q.nrows

    @property
    def n_z(self):
        return self.E.nrows


@dataclass
class ChainConfig:
    """Chained spring-mass-damper benchmark parameters."""

    n_wagons: int
    spring: float = 1.0
    damper: float = 1.0
    mass: float = 1.0
    step: float = 0.1
    position_bound: float = 5.0
    input_bound: float = 1.0

    def __post_init__(self):
        if self.n_wagons < 1:
            raise ValueError("need at least one wagon")
        if self.step <= 0 or self.mass <= 0:
            raise ValueError("step and mass must be positive")
        if self.position_bound <= 0 or self.input_bound <= 0:
            raise ValueError("bounds must be positive")


def build_chain_benchmark(cfg: ChainConfig, horizon: int, x0) -> MpcProblem:
    """Chain-of-wagons MPC instance with explicit Euler dynamics.

    State is (p_1..p_n, v_1..v_n); the first wagon is attached to a wall
    (p_0 = 0) and the last one is free (p_{n+1} = p_n), so the spring coupling
    matrix is tridiag(1, -2, 1) with the last diagonal entry -1.  Positions
    are bounded by ``position_bound`` and each input by ``input_bound``;
    Q = R = I and P solves the Riccati equation to 1e-10.
    """
    n = cfg.n_wagons
    h = cfg.step
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * n,):
        raise ValueError(f"x0 must have dimension {2 * n}")

    coupling = -2.0 * np.eye(n) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    coupling[n - 1, n - 1] = -1.0  # free right end
    A = np.block([
        [np.eye(n), h * np.eye(n)],
        [(h * cfg.spring / cfg.mass) * coupling, (1.0 - h * cfg.damper / cfg.mass) * np.eye(n)],
    ])
    B = np.vstack([np.zeros((n, n)), (h / cfg.mass) * np.eye(n)])
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = np.eye(n)  # position rows
    D = np.zeros((2 * n, n))
    D[n:, :] = np.eye(n)   # input rows
    d = np.concatenate([np.full(n, cfg.position_bound), np.full(n, cfg.input_bound)])
    c = -d
    Q = np.eye(2 * n)
    R = np.eye(n)
    P = riccati_solve(A, B, Q, R, tol=1e-10)
    problem = MpcProblem(A=A, B=B, C=C, D=D, c=c, d=d, Q=Q, R=R, P=P,
                         N=int(horizon), x0=x0)
    assert problem.has_strict_interior()
    return problem


def _dense_triplets(block, row_off, col_off):
    rows, cols = np.nonzero(block)
    return rows + row_off, cols + col_off, block[rows, cols]


def assemble_sparse_qp(p: MpcProblem) -> SparseQP:
    """Rewrite an MPC problem in consensus form.

    The objective matrix is blockdiag(R, Q, R, ..., Q, R, P) over
    y = [u_0, x_1, ..., u_{N-1}, x_N]; the coupling matrix stacks, per stage,
    the dynamics rows [A B -I] and the inequality rows [C D 0] in a staircase.
    """
    N, n_x, n_u, n_c = p.N, p.n_x, p.n_u, p.n_c
    stages = StageIndex(n_x=n_x, n_u=n_u, n_c=n_c, horizon=N)

    blocks = [p.R] + [p.Q, p.R] * (N - 1) + [p.P]
    q_mat = SparseMatrix.from_scipy(_sp.block_diag(blocks, format="csc"))

    rows, cols, vals = [], [], []
    neg_eye = -np.eye(n_x)
    for k in range(N):
        dyn, con = stages.dyn_slice(k), stages.con_slice(k)
        if k > 0:
            xk = stages.x_slice(k)
            for blk, r, ccol in ((p.A, dyn, xk), (p.C, con, xk)):
                t = _dense_triplets(blk, r.start, ccol.start)
                rows.append(t[0]); cols.append(t[1]); vals.append(t[2])
        uk = stages.u_slice(k)
        xn = stages.x_slice(k + 1)
        for blk, r, ccol in ((p.B, dyn, uk), (p.D, con, uk), (neg_eye, dyn, xn)):
            t = _dense_triplets(blk, r.start, ccol.start)
            rows.append(t[0]); cols.append(t[1]); vals.append(t[2])
    e_mat = SparseMatrix.from_triplets(
        stages.n_z, stages.n_y,
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
    )

    zl = np.zeros(stages.n_z)
    zu = np.zeros(stages.n_z)
    for k in range(1, N):
        con = stages.con_slice(k)
        zl[con] = p.c
        zu[con] = p.d
    x0_map = InitialStateMap(A=p.A, C=p.C, c=p.c, d=p.d)
    x0_map.apply(zl, zu, p.x0)
    return SparseQP(Q=q_mat, E=e_mat, zl=zl, zu=zu, stages=stages, x0_map=x0_map)


def update_initial_state(qp: SparseQP, x0) -> SparseQP:
    """New SparseQP with bounds re-parameterized for a fresh measurement.

    Only the first block of zl/zu changes; matrices (and hence any cached
    factorizations) are shared with the input.
    """
    if qp.x0_map is None:
        raise ValueError("QP does not carry an initial-state map")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (qp.x0_map.A.shape[0],):
        raise ValueError(f"x0 must have dimension {qp.x0_map.A.shape[0]}")
    zl = qp.zl.copy()
    zu = qp.zu.copy()
    qp.x0_map.apply(zl, zu, x0)
    return dataclasses.replace(qp, zl=zl, zu=zu)
