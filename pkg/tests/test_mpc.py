import dataclasses

import numpy as np
import pytest
import scipy.linalg

from aladin_qp import (ChainConfig, DenseQP, DivergenceError, MpcProblem,
                       assemble_sparse_qp, build_chain_benchmark, riccati_solve,
                       solve_reference, update_initial_state)

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def random_stabilizable(rng, n_x, n_u=None):
    n_u = n_u or int(rng.integers(1, n_x + 1))
    a = rng.standard_normal((n_x, n_x))
    a *= 0.85 / max(np.abs(np.linalg.eigvals(a)).max(), 1e-9)
    b = rng.standard_normal((n_x, n_u))
    w = rng.standard_normal((n_x, n_x))
    q = w @ w.T + np.eye(n_x)
    v = rng.standard_normal((n_u, n_u))
    r = v @ v.T + np.eye(n_u)
    return a, b, q, r


class TestRiccati:
    def test_zero_dynamics_gives_q(self):
        p = riccati_solve(np.zeros((1, 1)), np.ones((1, 1)), np.eye(1), np.eye(1))
        np.testing.assert_allclose(p, [[1.0]])

    def test_scalar_golden_ratio(self):
        p = riccati_solve(np.ones((1, 1)), np.ones((1, 1)), np.eye(1), np.eye(1),
                          tol=1e-12)
        assert abs(p[0, 0] - GOLDEN) <= 1e-10

    def test_zero_block_matrix_case(self):
        q = np.diag([2.0, 3.0])
        p = riccati_solve(np.zeros((2, 2)), np.array([[1.0], [0.5]]), q, np.eye(1))
        np.testing.assert_allclose(p, q)

    def test_residual_and_order_on_random_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            n_x = int(rng.integers(1, 11))
            a, b, q, r = random_stabilizable(rng, n_x)
            p = riccati_solve(a, b, q, r, tol=1e-10)
            assert np.array_equal(p, p.T)
            gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
            resid = p - (a.T @ p @ a + q - (b.T @ p @ a).T @ gain)
            assert np.abs(resid).max() <= 1e-10
            # P dominates Q up to the tolerance
            assert np.linalg.eigvalsh(p - q).min() >= -1e-10

    def test_agrees_with_scipy_dare(self):
        rng = np.random.default_rng(321)
        for _ in range(10):
            a, b, q, r = random_stabilizable(rng, 4, 2)
            p = riccati_solve(a, b, q, r, tol=1e-12)
            ref = scipy.linalg.solve_discrete_are(a, b, q, r)
            np.testing.assert_allclose(p, ref, rtol=1e-8, atol=1e-8)

    def test_divergence_raises(self):
        # B = 0 with unstable A cannot be stabilized
        with pytest.raises(DivergenceError):
            riccati_solve(2.0 * np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1),
                          max_iter=200)

    def test_rejects_indefinite_weights(self):
        with pytest.raises(ValueError, match="positive definite"):
            riccati_solve(np.eye(1), np.eye(1), -np.eye(1), np.eye(1))


class TestChainBenchmark:
    def test_single_wagon_matrices(self, tiny_chain):
        np.testing.assert_allclose(tiny_chain.A, [[1.0, 0.1], [-0.1, 0.9]])
        np.testing.assert_allclose(tiny_chain.B, [[0.0], [0.1]])

    def test_bounds_are_symmetric(self, tiny_chain):
        np.testing.assert_array_equal(tiny_chain.d, -tiny_chain.c)
        assert tiny_chain.has_strict_interior()

    def test_full_scale_dimensions(self):
        p = build_chain_benchmark(ChainConfig(n_wagons=50), 100, np.full(100, 2.0))
        assert p.n_x == 100 and p.n_u == 50 and p.n_c == 100

    def test_coupling_structure(self):
        p = build_chain_benchmark(ChainConfig(n_wagons=3), 2, np.zeros(6))
        coupling = (p.A[3:, :3] / 0.1)
        np.testing.assert_allclose(coupling, [[-2.0, 1.0, 0.0],
                                              [1.0, -2.0, 1.0],
                                              [0.0, 1.0, -1.0]])

    def test_x0_dimension_checked(self):
        with pytest.raises(ValueError, match="dimension"):
            build_chain_benchmark(ChainConfig(n_wagons=2), 3, np.zeros(3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ChainConfig(n_wagons=0)
        with pytest.raises(ValueError):
            ChainConfig(n_wagons=1, step=-0.1)


class TestAssembly:
    def test_hand_example_n1(self):
        p = MpcProblem(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[1.0]], c=[-1.0],
                       d=[1.0], Q=[[1.0]], R=[[1.0]], P=[[1.0]], N=1, x0=[0.5])
        qp = assemble_sparse_qp(p)
        np.testing.assert_array_equal(qp.E.to_dense(), [[1.0, -1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(qp.zl, [-0.5, -1.5])
        np.testing.assert_array_equal(qp.zu, [-0.5, 0.5])

    def test_dimension_formulas(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            n = int(rng.integers(1, 4))
            horizon = int(rng.integers(1, 6))
            p = build_chain_benchmark(ChainConfig(n_wagons=n), horizon, np.zeros(2 * n))
            qp = assemble_sparse_qp(p)
            assert qp.n_y == horizon * (p.n_u + p.n_x)
            assert qp.n_z == horizon * (p.n_x + p.n_c)

    def test_full_scale_variable_count(self):
        p = build_chain_benchmark(ChainConfig(n_wagons=50), 100, np.full(100, 2.0))
        assert assemble_sparse_qp(p).n_y == 15000

    def test_objective_block_structure(self, tiny_chain):
        qp = assemble_sparse_qp(tiny_chain)
        n_u, n_x, horizon = tiny_chain.n_u, tiny_chain.n_x, tiny_chain.N
        blocks = [tiny_chain.R] + [tiny_chain.Q, tiny_chain.R] * (horizon - 1) \
            + [tiny_chain.P]
        np.testing.assert_array_equal(qp.Q.to_dense(), scipy.linalg.block_diag(*blocks))
        assert qp.n_y == horizon * (n_u + n_x)

    def test_dynamics_rows_are_degenerate_boxes(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        st = qp.stages
        for k in range(st.horizon):
            dyn = qp.zl[st.dyn_slice(k)] == qp.zu[st.dyn_slice(k)]
            assert dyn.all()

    def test_staircase_blocks(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        st = qp.stages
        e = qp.E.to_dense()
        p = small_chain
        np.testing.assert_array_equal(e[st.dyn_slice(0), st.u_slice(0)], p.B)
        np.testing.assert_array_equal(e[st.dyn_slice(0), st.x_slice(1)], -np.eye(p.n_x))
        np.testing.assert_array_equal(e[st.con_slice(1), st.x_slice(1)], p.C)
        np.testing.assert_array_equal(e[st.dyn_slice(1), st.x_slice(1)], p.A)
        # nothing couples stage-0 rows to later variables
        np.testing.assert_array_equal(e[st.dyn_slice(0), st.u_slice(1)], 0.0)


class TestUpdateInitialState:
    def test_zero_state_gives_plain_bounds(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        updated = update_initial_state(qp, np.zeros(small_chain.n_x))
        st = qp.stages
        np.testing.assert_array_equal(updated.zl[st.con_slice(0)], small_chain.c)
        np.testing.assert_array_equal(updated.zu[st.con_slice(0)], small_chain.d)
        np.testing.assert_array_equal(updated.zl[st.dyn_slice(0)], 0.0)

    def test_first_dynamics_rows(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        x0 = 2.0 * np.ones(small_chain.n_x)
        updated = update_initial_state(qp, x0)
        st = qp.stages
        np.testing.assert_array_equal(updated.zl[st.dyn_slice(0)],
                                      -(small_chain.A @ x0))

    def test_idempotent(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        x0 = np.linspace(-1, 1, small_chain.n_x)
        once = update_initial_state(qp, x0)
        twice = update_initial_state(once, x0)
        np.testing.assert_array_equal(once.zl, twice.zl)
        np.testing.assert_array_equal(once.zu, twice.zu)

    def test_matrices_shared(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        updated = update_initial_state(qp, np.zeros(small_chain.n_x))
        assert updated.Q is qp.Q and updated.E is qp.E

    def test_later_blocks_untouched(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        updated = update_initial_state(qp, np.ones(small_chain.n_x))
        st = qp.stages
        first = st.con_slice(0).stop
        np.testing.assert_array_equal(updated.zl[first:], qp.zl[first:])
        np.testing.assert_array_equal(updated.zu[first:], qp.zu[first:])

    def test_dimension_mismatch(self, small_chain):
        qp = assemble_sparse_qp(small_chain)
        with pytest.raises(ValueError):
            update_initial_state(qp, np.zeros(small_chain.n_x + 1))


def random_feasible_mpc(rng, n_x, horizon):
    """Small MPC instance that is feasible by sizing (stable A, wide boxes)."""
    n_u = int(rng.integers(1, n_x + 1))
    n_c = int(rng.integers(1, 3))
    a = rng.standard_normal((n_x, n_x))
    a *= 0.8 / max(np.abs(np.linalg.eigvals(a)).max(), 1e-9)
    b = rng.standard_normal((n_x, n_u))
    c_mat = rng.standard_normal((n_c, n_x)) * 0.4
    d_mat = rng.standard_normal((n_c, n_u)) * 0.4
    d = 2.0 + rng.uniform(0, 1, n_c)
    w = rng.standard_normal((n_x, n_x))
    q = w @ w.T + np.eye(n_x)
    v = rng.standard_normal((n_u, n_u))
    r = v @ v.T + np.eye(n_u)
    w2 = rng.standard_normal((n_x, n_x))
    p_mat = w2 @ w2.T + np.eye(n_x)
    x0 = rng.uniform(-0.4, 0.4, n_x)
    return MpcProblem(A=a, B=b, C=c_mat, D=d_mat, c=-d, d=d, Q=q, R=r, P=p_mat,
                      N=horizon, x0=x0)


def condensed_cost_value(p: MpcProblem):
    """Optimal cost of the MPC problem via dense condensing plus the
    brute-force oracle (independent of the staircase assembly).

    States are eliminated with the explicit powers x_k = A^k x0 + sum A^j B u;
    the resulting inequality-constrained QP in the stacked controls gets one
    homogenization variable pinned to 1 so it fits the oracle's form without
    a linear term.
    """
    n_x, n_u, n_c, horizon = p.n_x, p.n_u, p.n_c, p.N
    powers = [np.linalg.matrix_power(p.A, k) for k in range(horizon + 1)]
    a_bar = np.vstack(powers[1:])
    b_bar = np.zeros((horizon * n_x, horizon * n_u))
    for k in range(1, horizon + 1):
        for j in range(k):
            b_bar[(k - 1) * n_x:k * n_x, j * n_u:(j + 1) * n_u] = powers[k - 1 - j] @ p.B
    q_bar = scipy.linalg.block_diag(*([p.Q] * (horizon - 1) + [p.P]))
    r_bar = scipy.linalg.block_diag(*([p.R] * horizon))
    g_mat = 2.0 * (b_bar.T @ q_bar @ b_bar + r_bar)
    g_vec = 2.0 * (b_bar.T @ q_bar @ a_bar @ p.x0)
    const = float(p.x0 @ (p.Q + a_bar.T @ q_bar @ a_bar) @ p.x0)

    rows, lo, hi = [], [], []
    for k in range(horizon):
        row = np.zeros((n_c, horizon * n_u))
        if k > 0:
            row += p.C @ b_bar[(k - 1) * n_x:k * n_x, :]
        row[:, k * n_u:(k + 1) * n_u] += p.D
        offs = p.C @ (powers[k] @ p.x0)
        rows.append(row)
        lo.append(p.c - offs)
        hi.append(p.d - offs)
    m_mat = np.vstack(rows)

    kappa = float(g_vec @ np.linalg.solve(g_mat, g_vec)) + 1.0
    q_tilde = np.block([[g_mat, g_vec[:, None]], [g_vec[None, :], [[kappa]]]])
    e_tilde = np.block([[m_mat, np.zeros((m_mat.shape[0], 1))],
                        [np.zeros((1, m_mat.shape[1])), [[1.0]]]])
    zl = np.concatenate([np.concatenate(lo), [1.0]])
    zu = np.concatenate([np.concatenate(hi), [1.0]])
    sol = solve_reference(DenseQP(Q=q_tilde, E=e_tilde, zl=zl, zu=zu))
    return sol.value + const - kappa / 2.0


class TestTranscriptionEquivalence:
    def test_matches_condensed_transcription(self):
        rng = np.random.default_rng(77)
        checked = 0
        while checked < 8:
            n_x = int(rng.integers(1, 4))
            horizon = int(rng.integers(1, 5))
            p = random_feasible_mpc(rng, n_x, horizon)
            qp = assemble_sparse_qp(p)
            if qp.n_z > 20:
                continue
            sparse_sol = solve_reference(DenseQP.from_sparse(qp))
            value_sparse = 2.0 * sparse_sol.value + float(p.x0 @ p.Q @ p.x0)
            value_dense = condensed_cost_value(p)
            assert abs(value_sparse - value_dense) <= 1e-8 * (1.0 + abs(value_dense))
            checked += 1


class TestMpcProblemValidation:
    def test_rejects_asymmetric_weight(self, tiny_chain):
        bad_q = tiny_chain.Q.copy()
        bad_q[0, 1] = 0.1
        with pytest.raises(ValueError, match="symmetric"):
            dataclasses.replace(tiny_chain, Q=bad_q)

    def test_rejects_crossed_bounds(self, tiny_chain):
        with pytest.raises(ValueError, match="c < d"):
            dataclasses.replace(tiny_chain, c=tiny_chain.d, d=tiny_chain.c)

    def test_rejects_bad_horizon(self, tiny_chain):
        with pytest.raises(ValueError, match="horizon"):
            dataclasses.replace(tiny_chain, N=0)
