"""Brute-force reference solver for small box-constrained QPs.

Enumerates candidate active sets of min 0.5 y'Qy s.t. Ey = z, zl <= z <= zu,
solves each equality-constrained KKT system densely and keeps the best
candidate that is primal feasible with correctly signed multipliers.  For
convex data this is the exact global optimum, computed by a code path that
shares nothing with the iterative solver; it is the ground truth the solver
is certified against.  Deliberately limited to toy sizes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .sparse import SparseMatrix, spmv

SIZE_CAP = 25
DEFAULT_BUDGET = 2 ** 25


class InfeasibleError(RuntimeError):
    """No candidate active set produced a feasible point."""


@dataclass
class DenseQP:
    """Dense mirror of a consensus-form QP, capped to brute-force sizes."""

    Q: np.ndarray
    E: np.ndarray
    zl: np.ndarray
    zu: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        self.zl = np.asarray(self.zl, dtype=float)
        self.zu = np.asarray(self.zu, dtype=float)
        n_z, n_y = self.E.shape
        if self.Q.shape != (n_y, n_y):
            raise ValueError("Q must be square with E's column count")
        if self.zl.shape != (n_z,) or self.zu.shape != (n_z,):
            raise ValueError("bounds must be n_z vectors")
        if not np.all(self.zl <= self.zu):
            raise ValueError("bounds must satisfy zl <= zu")
        if n_y > SIZE_CAP or n_z > SIZE_CAP:
            raise ValueError(f"brute-force budget allows at most {SIZE_CAP} rows/cols")

    @property
    def n_y(self):
        return self.E.shape[1]

    @property
    def n_z(self):
        return self.E.shape[0]

    @classmethod
    def from_sparse(cls, qp) -> "DenseQP":
        return cls(Q=qp.Q.to_dense(), E=qp.E.to_dense(), zl=qp.zl, zu=qp.zu)


@dataclass
class OracleSolution:
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    value: float


# per-row candidate states in the enumeration
_FREE, _LOWER, _UPPER = 0, 1, 2


def solve_reference(qp: DenseQP, feas_tol=1e-9, budget=DEFAULT_BUDGET) -> OracleSolution:
    """Exact minimizer of a small convex box QP by active-set enumeration.

    Rows with zl == zu are treated as always active (sign-free multipliers);
    every inequality row is tried free, at its lower and at its upper bound.
    Candidates whose KKT system is singular, that violate the box by more
    than ``feas_tol`` (relative), or whose multipliers have the wrong sign
    are discarded.  Raises :class:`InfeasibleError` when nothing survives and
    ``ValueError`` when the enumeration would exceed ``budget`` candidates.
    """
    n_y, n_z = qp.n_y, qp.n_z
    eq = qp.zl == qp.zu
    ineq_rows = np.flatnonzero(~eq)
    eq_rows = np.flatnonzero(eq)
    if 3 ** len(ineq_rows) > budget:
        raise ValueError(
            f"enumeration over {len(ineq_rows)} inequality rows exceeds the budget")

    scale = 1.0 + np.maximum(np.abs(qp.zl), np.abs(qp.zu))
    scale[~np.isfinite(scale)] = 1.0
    best = None
    for sides in itertools.product((_FREE, _LOWER, _UPPER), repeat=len(ineq_rows)):
        sides = np.asarray(sides, dtype=np.int64)
        chosen = ineq_rows[sides != _FREE]
        active = np.concatenate([eq_rows, chosen])
        if active.size > n_y:
            continue  # dependent rows for sure; a smaller candidate covers it
        b = qp.zl[active].copy()
        upper_sel = np.concatenate(
            [np.zeros(eq_rows.size, dtype=bool), sides[sides != _FREE] == _UPPER])
        b[upper_sel] = qp.zu[active][upper_sel]
        m = active.size
        kkt = np.zeros((n_y + m, n_y + m))
        kkt[:n_y, :n_y] = qp.Q
        kkt[:n_y, n_y:] = qp.E[active].T
        kkt[n_y:, :n_y] = qp.E[active]
        rhs = np.concatenate([np.zeros(n_y), b])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            # Singular systems still carry consistent optimal faces, e.g.
            # degenerate objectives whose optimum is not at a vertex.
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        if not np.all(np.isfinite(sol)):
            continue
        if np.linalg.norm(kkt @ sol - rhs, np.inf) > feas_tol * (1.0 + np.linalg.norm(rhs, np.inf)):
            continue
        y = sol[:n_y]
        mu = sol[n_y:]
        z = qp.E @ y
        if np.any(z < qp.zl - feas_tol * scale) or np.any(z > qp.zu + feas_tol * scale):
            continue
        # Lagrangian 0.5 y'Qy + lam'(Ey - z): lower-active rows need lam <= 0,
        # upper-active rows lam >= 0; equality rows are sign-free.
        mu_ineq = mu[eq_rows.size:]
        at_upper = upper_sel[eq_rows.size:]
        if np.any(mu_ineq[at_upper] < -feas_tol) or np.any(mu_ineq[~at_upper] > feas_tol):
            continue
        value = 0.5 * float(y @ qp.Q @ y)
        if best is None or value < best.value:
            lam = np.zeros(n_z)
            lam[active] = mu
            best = OracleSolution(y=y, z=z, lam=lam, value=value)
    if best is None:
        raise InfeasibleError("no candidate active set is feasible")
    return best


def projected_gradient_reference(qp: DenseQP, iters=10 ** 6) -> tuple[np.ndarray, float]:
    """Secondary cross-check: long projected-gradient run.

    Needs a square invertible E so the feasible set is a plain box in
    z-coordinates (min 0.5 z'Mz with M = E^{-T} Q E^{-1} over [zl, zu]).
    Returns (y, objective value).
    """
    if qp.n_z != qp.n_y:
        raise ValueError("projected gradient cross-check needs a square E")
    e_inv = np.linalg.inv(qp.E)
    m = e_inv.T @ qp.Q @ e_inv
    m = (m + m.T) / 2.0
    lip = float(np.max(np.linalg.eigvalsh(m)))
    step = 1.0 if lip == 0.0 else 1.0 / lip
    z = np.clip(np.zeros(qp.n_z), qp.zl, qp.zu)
    _kernels.projected_gradient_box(m, qp.zl, qp.zu, z, step, iters)
    y = e_inv @ z
    return y, 0.5 * float(y @ qp.Q @ y)


def _mv(mat, x, transposed=False):
    if isinstance(mat, SparseMatrix):
        return spmv(mat, x, transposed=transposed)
    mat = np.asarray(mat)
    return mat.T @ x if transposed else mat @ x


def kkt_residuals(Q, E, zl, zu, y, lam) -> tuple[float, float]:
    """Stationarity and natural-map residuals of a candidate primal/dual pair.

    Returns (||Qy + E'lam||_inf, ||z - clip(z + lam, zl, zu)||_inf) with
    z = Ey; the second term is zero exactly when z is feasible, complementary
    and the multiplier signs are consistent.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    stat = float(np.linalg.norm(_mv(Q, y) + _mv(E, lam, transposed=True), np.inf))
    z = _mv(E, y)
    natural = float(np.linalg.norm(z - np.clip(z + lam, zl, zu), np.inf))
    return stat, natural
