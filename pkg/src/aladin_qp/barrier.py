"""Relaxed log-barrier machinery for the diagonal curvature weights.

The box indicator G gets a smooth stand-in Phi(r, t, z) built from shifted
logarithms -log(r - xi)/t; its diagonal Hessian supplies the curvature matrix
K of the splitting iteration.  Phi is never used as an objective, only
differentiated.  All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sparse import SparseMatrix, spmv

R_MIN = 1e-12
T_MAX = 1e12
K_MIN = 1e-8
K_MAX = 1e12


class BarrierDomainError(ValueError):
    """Barrier evaluated at or beyond its relaxation margin."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


@dataclass(frozen=True)
class BarrierParams:
    """Relaxation margin r and barrier weight t."""

    r: float
    t: float

    def __post_init__(self):
        if not self.r >= R_MIN:
            raise ValueError(f"relaxation margin must be >= {R_MIN}")
        if not 0.0 < self.t <= T_MAX:
            raise ValueError(f"barrier weight must lie in (0, {T_MAX}]")


def phi(r, t, xi) -> float:
    """Relaxed logarithmic barrier -log(r - xi)/t, defined for xi < r."""
    if t <= 0.0:
        raise ValueError("barrier weight must be positive")
    if xi >= r:
        raise BarrierDomainError(f"barrier argument {xi} outside domain (xi < {r})")
    return -math.log(r - xi) / t


def barrier_hessian_diag(params: BarrierParams, z, zl, zu,
                         k_min=K_MIN, k_max=K_MAX) -> np.ndarray:
    """Diagonal of the curvature weights K at z.

    K_ii = (1/t) [ (r - (zl_i - z_i))^{-2} + (r - (z_i - zu_i))^{-2} ],
    clamped to [k_min, k_max].  Infinite (one-sided) bounds drop their term.
    Requires zl_i - z_i < r and z_i - zu_i < r for every i, which the margin
    rule of :func:`step9b_params` guarantees at the z it was computed from.
    """
    z = np.asarray(z, dtype=float)
    zl = np.asarray(zl, dtype=float)
    zu = np.asarray(zu, dtype=float)
    lo_gap = params.r - (zl - z)
    hi_gap = params.r - (z - zu)
    bad = np.flatnonzero((lo_gap <= 0.0) | (hi_gap <= 0.0))
    if bad.size:
        i = int(bad[0])
        raise BarrierDomainError(
            f"component {i} violates the barrier margin (z={z[i]}, "
            f"box=[{zl[i]}, {zu[i]}], r={params.r})", index=i)
    base = 1.0 / lo_gap ** 2 + 1.0 / hi_gap ** 2
    return np.clip(base / params.t, k_min, k_max)


def step9b_params(w, z, y, sigma, q: SparseMatrix,
                  r_min=R_MIN, t_max=T_MAX) -> BarrierParams:
    """Margin and weight for the next curvature refresh.

    r is 11/10 of the primal residual ||w - z||_inf (so the barrier stays
    finite at the current z: w lies in the box, hence r exceeds the distance
    of every z_i to it), and t is the inverse of the larger of the primal and
    dual residuals.  Guards keep both parameters usable at exact convergence,
    where the residuals vanish.
    """
    primal = float(np.linalg.norm(np.asarray(w) - np.asarray(z), np.inf))
    dual = float(np.linalg.norm(spmv(q, y) + sigma, np.inf))
    r = max(1.1 * primal, r_min)
    t = min(1.0 / max(primal, dual, 1e-12), t_max)
    return BarrierParams(r=r, t=t)
