import numpy as np
import pytest

from aladin_qp import (ChainConfig, DenseQP, RtConfig, SparseMatrix, SparseQP,
                       build_chain_benchmark, reference_closed_loop)


def random_box_qp(rng, lp=False, n_y_max=10, n_ineq_max=7, with_eq=False):
    """Random feasible consensus-form QP around a reference point.

    Bounds are placed around E @ y_ref so the instance is always feasible;
    ``lp`` zeroes the objective matrix (degenerate, feasibility-like case).
    """
    n_y = int(rng.integers(2, n_y_max + 1))
    n_eq = int(rng.integers(0, 3)) if with_eq else 0
    n_ineq = int(rng.integers(2, n_ineq_max + 1))
    n_z = n_eq + n_ineq
    E = rng.standard_normal((n_z, n_y))
    if lp:
        Q = np.zeros((n_y, n_y))
    else:
        W = rng.standard_normal((n_y, max(1, n_y - 1)))
        Q = W @ W.T + (0.1 + rng.uniform()) * np.eye(n_y)
    y_ref = rng.standard_normal(n_y)
    z_ref = E @ y_ref
    zl = z_ref - rng.uniform(0.05, 1.5, n_z)
    zu = z_ref + rng.uniform(0.05, 1.5, n_z)
    if n_eq:
        eq_rows = rng.permutation(n_z)[:n_eq]
        zl[eq_rows] = zu[eq_rows] = z_ref[eq_rows]
    return Q, E, zl, zu


def as_pair(Q, E, zl, zu):
    """(SparseQP, DenseQP) views of the same data."""
    sq = SparseQP(Q=SparseMatrix.from_dense(Q), E=SparseMatrix.from_dense(E),
                  zl=zl, zu=zu)
    return sq, DenseQP(Q=Q, E=E, zl=zl, zu=zu)


def random_square_qp(rng, n=5, lp=False):
    """Instance with square invertible E, for projected-gradient cross-checks."""
    while True:
        E = rng.standard_normal((n, n))
        if abs(np.linalg.det(E)) > 0.1:
            break
    if lp:
        Q = np.zeros((n, n))
    else:
        W = rng.standard_normal((n, n))
        Q = W @ W.T + 0.2 * np.eye(n)
    y_ref = rng.standard_normal(n)
    z_ref = E @ y_ref
    zl = z_ref - rng.uniform(0.1, 1.0, n)
    zu = z_ref + rng.uniform(0.1, 1.0, n)
    return Q, E, zl, zu


@pytest.fixture(scope="session")
def tiny_chain():
    """One-wagon chain, short horizon: the smallest meaningful MPC instance."""
    return build_chain_benchmark(ChainConfig(n_wagons=1), 3, np.array([0.5, 0.0]))


@pytest.fixture(scope="session")
def small_chain():
    """Two wagons, horizon 8; cheap enough for closed-loop tests."""
    return build_chain_benchmark(ChainConfig(n_wagons=2), 8, np.zeros(4))


@pytest.fixture(scope="session")
def desk_chain():
    """Desk-scale tutorial instance: 10 wagons, horizon 40, x0 = 2*ones."""
    return build_chain_benchmark(ChainConfig(n_wagons=10), 40, np.full(20, 2.0))


@pytest.fixture(scope="session")
def desk_reference(desk_chain):
    """Exactly solved receding-horizon closed loop at desk scale (shared)."""
    return reference_closed_loop(desk_chain, RtConfig(sim_steps=400), desk_chain.x0)
