"""Receding-horizon control with a fixed iteration budget per sample.

Each sample re-parameterizes the QP bounds with the measured state, shifts
the previous primal/dual solution one stage (filling the tail with the
terminal LQR law and rescaling so the warm start stays proportional to the
state norm), refreshes the curvature weights once, runs a fixed number of
plain iterations and applies the first control block.  A nominal simulator
and the relative performance-loss metric against an exactly solved
receding-horizon reference complete the loop.

Controllers are sequential state machines: one ``step`` at a time.
Independent controllers may run in parallel.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierDomainError
from .mpc import MpcProblem, SparseQP, assemble_sparse_qp, update_initial_state
from .solver import (NumericalError, SolveStatus, SolverConfig, init_state,
                     iterate, refresh_curvature, solve)
from .sparse import FactorizationError, spmv


@dataclass
class RtConfig:
    """Per-sample iteration budget and closed-loop simulation limits."""

    iterations_per_sample: int = 5
    gamma0: float = 1e3
    sim_steps: int = 500
    stop_threshold: float = 1e-9      # on ||x||_Q
    instability_factor: float = 1e3   # flags when ||x_k||_Q > factor * ||x_0||_Q
    tol: float = 1e-10                # residual check inside the per-sample loop
    startup_solve: bool = True        # answer the first sample with a full solve

    def __post_init__(self):
        if self.iterations_per_sample < 1:
            raise ValueError("need at least one iteration per sample")
        if self.gamma0 <= 0:
            raise ValueError("warm-start norm coefficient must be positive")
        if self.sim_steps < 0:
            raise ValueError("simulation step cap must be non-negative")


# Curvature clamps for the fixed-budget loop.  The full solver recovers from
# an over-sharp barrier refresh because its events are geometrically spaced;
# a refresh every sample has no such slack, so the controller bounds the
# weight spread much tighter than the solver defaults.
RT_K_MIN = 1e-6
RT_K_MAX = 1e6


def weighted_norm(x, W) -> float:
    """sqrt(x'Wx), clipped at zero against rounding."""
    return float(np.sqrt(max(float(x @ W @ x), 0.0)))


def shift_warm_start(y, z, lam, qp: SparseQP, mpc: MpcProblem, gamma0=1e3):
    """Advance a primal/dual solution one stage for the next sample.

    Stage blocks of y move down by one (u_k <- u_{k+1}, x_k <- x_{k+1}); the
    freed final control is filled with the LQR law u = -(R + B'PB)^{-1} B'PA x
    at the shifted final state and the final state is propagated through the
    dynamics.  Multiplier row blocks shift the same way, with the last block
    keeping its previous values.  z is recomputed as Ey from the shifted y: a
    plain row shift would leave the first block inconsistent, because the
    first block row of E has no state columns.  The triple is then rescaled
    so its stacked Euclidean norm stays within gamma0 * ||x0||_Q, with x0
    read from ``mpc``.
    """
    st = qp.stages
    if st is None:
        raise ValueError("warm-start shifting requires stage structure")
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    y2, lam2 = y.copy(), lam.copy()
    N = st.horizon
    for k in range(N - 1):
        y2[st.u_slice(k)] = y[st.u_slice(k + 1)]
        lam2[st.dyn_slice(k)] = lam[st.dyn_slice(k + 1)]
        lam2[st.con_slice(k)] = lam[st.con_slice(k + 1)]
    for k in range(1, N):
        y2[st.x_slice(k)] = y[st.x_slice(k + 1)]
    x_tail = y[st.x_slice(N)]
    gain = np.linalg.solve(mpc.R + mpc.B.T @ mpc.P @ mpc.B,
                           mpc.B.T @ mpc.P @ mpc.A)
    u_tail = -(gain @ x_tail)
    y2[st.u_slice(N - 1)] = u_tail
    y2[st.x_slice(N)] = mpc.A @ x_tail + mpc.B @ u_tail
    z2 = spmv(qp.E, y2)

    nrm = np.sqrt(float(y2 @ y2 + z2 @ z2 + lam2 @ lam2))
    bound = gamma0 * weighted_norm(mpc.x0, mpc.Q)
    if nrm > bound:
        scale = bound / nrm
        y2 *= scale
        z2 *= scale
        lam2 *= scale
    return y2, z2, lam2


class RtController:
    """Fixed-budget controller: one curvature refresh plus ``iterations_per_sample``
    plain iterations per sample, no scheduled events.

    The first sample is answered by one ordinary (scheduled) solve to the
    controller tolerance, which bounds the startup transient; every later
    sample runs the fixed budget.  On numerical failure a sample falls back
    to u = 0 and is flagged rather than halting the loop.
    """

    def __init__(self, mpc: MpcProblem, cfg: RtConfig | None = None,
                 solver_cfg: SolverConfig | None = None):
        self.cfg = cfg if cfg is not None else RtConfig()
        self.mpc = mpc
        self.qp = assemble_sparse_qp(mpc)
        if solver_cfg is None:
            solver_cfg = SolverConfig(tol=self.cfg.tol, k_min=RT_K_MIN, k_max=RT_K_MAX)
        self.solver_cfg = solver_cfg
        self.state = init_state(self.qp, self.solver_cfg)
        self._primed = False

    @property
    def last_residuals(self):
        return self.state.primal_res, self.state.dual_res

    def step(self, x0) -> tuple[np.ndarray, bool]:
        """Return (u0, fallback_flag) for the measured state."""
        x0 = np.asarray(x0, dtype=float)
        self.mpc = dataclasses.replace(self.mpc, x0=x0)
        self.qp = update_initial_state(self.qp, x0)
        st = self.state
        if not self._primed and self.cfg.startup_solve:
            self._primed = True
            try:
                res = solve(self.qp, self.solver_cfg)
                st.y, st.z, st.lam = res.y, res.z, res.lam
                st.w = res.w
                st.primal_res, st.dual_res = res.primal_res, res.dual_res
                st.converged = False
                u0 = np.array(st.y[self.qp.stages.u_slice(0)])
                if np.all(np.isfinite(u0)):
                    return u0, False
            except (FactorizationError, NumericalError, BarrierDomainError):
                pass  # fall through to the budgeted path
        self._primed = True
        st.y, st.z, st.lam = shift_warm_start(
            st.y, st.z, st.lam, self.qp, self.mpc, gamma0=self.cfg.gamma0)
        st.converged = False
        try:
            st.sigma = spmv(self.qp.E, st.lam, transposed=True)
            st.w = np.clip(st.z + st.lam, self.qp.zl, self.qp.zu)
            refresh_curvature(st, self.qp, self.solver_cfg)
            for _ in range(self.cfg.iterations_per_sample):
                iterate(st, self.qp, self.solver_cfg)
                if st.converged:
                    break
            u0 = np.array(st.y[self.qp.stages.u_slice(0)])
            if not np.all(np.isfinite(u0)):
                raise NumericalError(st.iteration)
            return u0, False
        except (FactorizationError, NumericalError, BarrierDomainError):
            return np.zeros(self.mpc.n_u), True


class ExactController:
    """Receding-horizon reference: each sample solved to high accuracy.

    Warm starts shift the previous solution, which only affects run time;
    with the default 1e-10 tolerance the closed loop is the stand-in for the
    optimal infinite-horizon policy.
    """

    def __init__(self, mpc: MpcProblem, tol=1e-10,
                 solver_cfg: SolverConfig | None = None):
        self.mpc = mpc
        self.qp = assemble_sparse_qp(mpc)
        base = solver_cfg if solver_cfg is not None else SolverConfig()
        self.solver_cfg = dataclasses.replace(base, tol=tol)
        self._warm = None
        self._result = None

    @property
    def last_residuals(self):
        if self._result is None:
            return np.inf, np.inf
        return self._result.primal_res, self._result.dual_res

    def step(self, x0) -> tuple[np.ndarray, bool]:
        x0 = np.asarray(x0, dtype=float)
        self.mpc = dataclasses.replace(self.mpc, x0=x0)
        self.qp = update_initial_state(self.qp, x0)
        warm = None
        if self._warm is not None:
            warm = shift_warm_start(*self._warm, self.qp, self.mpc)
        res = solve(self.qp, self.solver_cfg, warm=warm)
        self._warm = (res.y, res.z, res.lam)
        self._result = res
        u0 = np.array(res.y[self.qp.stages.u_slice(0)])
        return u0, res.status is SolveStatus.MAX_ITER


@dataclass
class ClosedLoopTrace:
    """Per-sample records of one nominal closed-loop run."""

    states: np.ndarray
    inputs: np.ndarray
    x_norms: np.ndarray
    u_norms: np.ndarray
    stage_costs: np.ndarray
    primal_residuals: np.ndarray
    dual_residuals: np.ndarray
    unstable_flags: np.ndarray
    fallback_flags: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.stage_costs)

    @property
    def accumulated_cost(self) -> float:
        return float(np.sum(self.stage_costs))

    @property
    def unstable(self) -> bool:
        return bool(np.any(self.unstable_flags))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "x_norm", "u_norm", "stage_cost",
                             "primal_res", "dual_res", "unstable_flag"])
            for i in range(self.steps):
                writer.writerow([
                    i, repr(float(self.x_norms[i])), repr(float(self.u_norms[i])),
                    repr(float(self.stage_costs[i])),
                    repr(float(self.primal_residuals[i])),
                    repr(float(self.dual_residuals[i])),
                    int(self.unstable_flags[i]),
                ])


def simulate_closed_loop(mpc: MpcProblem, cfg: RtConfig, x0,
                         controller=None) -> ClosedLoopTrace:
    """Nominal closed loop x+ = Ax + Bu until ||x||_Q <= stop threshold.

    The plant is the controller's own model.  Crossing the instability
    threshold flags the final recorded sample and stops the run; instability
    is an outcome, not an error.
    """
    ctrl = controller if controller is not None else RtController(mpc, cfg)
    x = np.asarray(x0, dtype=float).copy()
    x0_norm = weighted_norm(x, mpc.Q)
    states, inputs = [], []
    x_norms, u_norms, costs, pres, dres = [], [], [], [], []
    unstable_flags, fallback_flags = [], []
    for _ in range(cfg.sim_steps):
        xq = weighted_norm(x, mpc.Q)
        if xq <= cfg.stop_threshold:
            break
        u, fallback = ctrl.step(x)
        p, d = ctrl.last_residuals
        states.append(x.copy())
        inputs.append(u)
        x_norms.append(xq)
        u_norms.append(weighted_norm(u, mpc.R))
        costs.append(float(x @ mpc.Q @ x + u @ mpc.R @ u))
        pres.append(p)
        dres.append(d)
        fallback_flags.append(fallback)
        blown = xq > cfg.instability_factor * x0_norm
        unstable_flags.append(blown)
        if blown:
            break
        x = mpc.A @ x + mpc.B @ u
    n_x, n_u = mpc.n_x, mpc.n_u
    return ClosedLoopTrace(
        states=np.asarray(states, dtype=float).reshape(-1, n_x),
        inputs=np.asarray(inputs, dtype=float).reshape(-1, n_u),
        x_norms=np.asarray(x_norms, dtype=float),
        u_norms=np.asarray(u_norms, dtype=float),
        stage_costs=np.asarray(costs, dtype=float),
        primal_residuals=np.asarray(pres, dtype=float),
        dual_residuals=np.asarray(dres, dtype=float),
        unstable_flags=np.asarray(unstable_flags, dtype=bool),
        fallback_flags=np.asarray(fallback_flags, dtype=bool),
    )


def reference_closed_loop(mpc: MpcProblem, cfg: RtConfig, x0,
                          tol=1e-10) -> ClosedLoopTrace:
    """Closed loop under the exactly solved receding-horizon controller."""
    return simulate_closed_loop(mpc, cfg, x0, controller=ExactController(mpc, tol=tol))


def performance_loss(trace: ClosedLoopTrace, reference: ClosedLoopTrace) -> float:
    """Relative cost increase of ``trace`` over ``reference``."""
    ref = reference.accumulated_cost
    if ref <= 0.0:
        raise ValueError("reference trajectory has zero accumulated cost")
    return (trace.accumulated_cost - ref) / ref
